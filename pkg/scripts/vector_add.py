"""Resilient vector addition: operands in a parity haven, result in the null haven.

    python3 scripts/vector_add.py --n 100000 --flips 3
"""

import argparse
import sys

import numpy as np

from havens import PageStore, SchemeKind


def vector_add(n: int, flips: int = 0, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    store = PageStore(pages=-(-3 * n // 1024) + 3)
    h = store.create_haven(SchemeKind.PARITY)
    a = store.alloc(h, n)
    b = store.alloc(h, n)
    c = store.alloc(PageStore.NULL, n)

    a0, b0 = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
    store.write(a, 0, a0.view(np.uint64))
    store.write(b, 0, b0.view(np.uint64))

    # single-bit upsets in distinct signature units of the operands
    units = store.protection(h).units
    for k in rng.choice(len(units), size=min(flips, len(units)), replace=False).tolist():
        u = units[k]
        store.xor_word(h, u.start + int(rng.integers(u.length)), 1 << int(rng.integers(64)))
    report = store.scrub(h)
    print(f"scrub: detected {len(report.detected)}, corrected {len(report.corrected)}, "
          f"uncorrectable {len(report.uncorrectable)}")

    va = store.read(a).view(np.float64)
    vb = store.read(b).view(np.float64)
    store.write(c, 0, (va + vb).view(np.uint64))
    ok = np.array_equal(store.read(c).view(np.float64), a0 + b0)

    # drop the operand handles so the haven can be deleted
    store.release(a)
    store.release(b)
    store.destroy_haven(h)
    store.release(c)
    print(f"c = a + b over {n} elements: {'exact' if ok else 'WRONG'}; free pages {store.free_pages}")
    return ok


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--flips", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    return 0 if vector_add(args.n, args.flips, args.seed) else 1


if __name__ == "__main__":
    sys.exit(main())

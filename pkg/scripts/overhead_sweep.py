"""Zero-fault overhead of each placement strategy, and split vs monolithic signatures.

    python3 scripts/overhead_sweep.py --sizes 32 64 128 --repeats 11
"""

import argparse

from havens import PlacementStrategy, Strategy, bench_placements, bench_strategies, build_poisson, paired_overhead_pct

ORDER = ["none", "dynamic", "operands", "static", "all"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--repeats", type=int, default=11)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    print("m      n  " + "  ".join(f"{s:>9}" for s in ORDER) + "   split-vs-object")
    for m in args.sizes:
        A = build_poisson(m)
        rows = {r.strategy.value: r for r in bench_strategies(A, ORDER, repeats=args.repeats, seed=args.seed)}
        split, mono = bench_placements(A, [PlacementStrategy(Strategy.ALL, unit_span=4096),
                                           PlacementStrategy(Strategy.ALL, unit_span="object")],
                                       repeats=args.repeats, seed=args.seed)
        cells = "  ".join(f"{rows[s].overhead_vs_none_pct:+8.1f}%" for s in ORDER)
        print(f"{m:<4}{A.n:>6}  {cells}   {paired_overhead_pct(split.samples, mono.samples):+.1f}%")


if __name__ == "__main__":
    main()

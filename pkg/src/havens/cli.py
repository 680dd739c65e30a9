"""``havens`` command line: overhead bench, fault-injection campaigns, scrub demo.

Exit status is 0 on success, 1 when a run fails and 2 for usage or
configuration errors.  CSV outputs start with ``#`` provenance comments.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .campaign import bench_strategies, run_campaign
from .cg import Outcome
from .config import CampaignConfig, load_config
from .errors import BadInput, ConfigError, HavenError
from .heap import PAGE_WORDS, PageStore
from .protection import DEFAULT_UNIT_SPAN, SchemeKind

OVERHEAD_COLUMNS = ("strategy", "scheme", "unit_span", "n", "iterations", "wall_ms", "overhead_vs_none_pct")
CAMPAIGN_COLUMNS = ("strategy", "trials", "converged_correct", "converged_wrong", "diverged", "aborted",
                    "detected", "corrected", "uncorrectable", "mean_wall_ms")


def _provenance(command: str, cfg: CampaignConfig) -> list[str]:
    lines = [f"# havens {__version__} {command}",
             f"# config_sha256 = {cfg.sha256()}",
             f"# seed = {cfg.seed}"]
    lines += [f"# {l}" for l in cfg.lines() if l.split(" = ")[0] not in ("out", "jobs", "seed")]
    return lines


def _write_csv(path: Path, header: list[str], columns, rows) -> None:
    buf = io.StringIO()
    buf.write("\n".join(header) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _table(columns, rows) -> str:
    cells = [list(map(str, columns))] + [list(map(str, r)) for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


def cmd_bench(cfg: CampaignConfig) -> int:
    A = cfg.load_matrix()
    rows = bench_strategies(A, cfg.strategies, scheme=SchemeKind.parse(cfg.scheme), unit_span=cfg.unit_span,
                            repeats=cfg.repeats, tol=cfg.tol, scrub_every=cfg.scrub_every, seed=cfg.seed)
    out = []
    for r in rows:
        wall, over = (0.0, 0.0) if cfg.no_timing else (r.wall_ms, r.overhead_vs_none_pct)
        out.append((r.strategy.value, r.scheme.value, r.unit_span, r.n, r.iterations,
                    f"{wall:.3f}", f"{over:.2f}"))
    path = Path(cfg.out) / "overhead.csv"
    _write_csv(path, _provenance("bench", cfg), OVERHEAD_COLUMNS, out)
    print(f"bench: n={A.n}, scheme={cfg.scheme}, unit_span={cfg.unit_span}, repeats={cfg.repeats}")
    print(_table(OVERHEAD_COLUMNS, out))
    print(f"wrote {path}")
    bad = [r.strategy.value for r in rows if r.outcome is not Outcome.CONVERGED_CORRECT]
    if bad:
        print(f"error: fault-free solve did not converge correctly for {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def cmd_inject(cfg: CampaignConfig) -> int:
    A = cfg.load_matrix()
    res = run_campaign(A, cfg.strategies, cfg.injection(), cfg.trials, scheme=SchemeKind.parse(cfg.scheme),
                       unit_span=cfg.unit_span, tol=cfg.tol, scrub_every=cfg.scrub_every, jobs=cfg.jobs,
                       timing=not cfg.no_timing)
    out = []
    for s, r in res.results.items():
        c = r.counts
        wall = 0.0 if cfg.no_timing else 1e3 * r.mean_wall
        out.append((s.value, r.trials, c[Outcome.CONVERGED_CORRECT], c[Outcome.CONVERGED_WRONG],
                    c[Outcome.DIVERGED], c[Outcome.ABORTED_UNCORRECTABLE], r.detected, r.corrected,
                    r.uncorrectable, f"{wall:.3f}"))
    path = Path(cfg.out) / "campaign.csv"
    _write_csv(path, _provenance("inject", cfg), CAMPAIGN_COLUMNS, out)
    print(f"inject: n={A.n}, scheme={cfg.scheme}, model={cfg.model}, rate={cfg.rate}, "
          f"trials={cfg.trials}, seed={cfg.seed}")
    print(_table(CAMPAIGN_COLUMNS, out))
    for s, r in res.results.items():
        print(f"  {s.value:>8}: completion rate {r.completion_rate:.3f}")
    print(f"wrote {path}")
    return 0


def cmd_scrub_demo(words: int = 64, corruptions: int = 1, seed: int = 0,
                   unit_span: int = DEFAULT_UNIT_SPAN) -> int:
    """Corrupt one parity haven, scrub it, and show what came back."""
    if words < 1 or corruptions < 0 or corruptions > words or unit_span < 1:
        raise ConfigError("need words >= 1, 0 <= corruptions <= words and unit_span >= 1")
    rng = np.random.default_rng(seed)
    store = PageStore(pages=-(-words // PAGE_WORDS) + 1, max_havens=2)
    h = store.create_haven(SchemeKind.PARITY, unit_span)
    obj = store.alloc(h, words)
    original = rng.integers(0, 2**64, words, dtype=np.uint64)
    store.write(obj, 0, original)
    where = np.sort(rng.choice(words, corruptions, replace=False))
    masks = [1 << int(b) for b in rng.integers(0, 64, corruptions)]
    for w, m in zip(where.tolist(), masks):
        store.xor_word(h, w, m)
    engine = store.protection(h)

    print(f"haven {h.index}.{h.generation}: parity, {words} words, unit_span {unit_span}, "
          f"{len(engine.units)} unit(s), seed {seed}")
    print(f"injected {corruptions} single-bit corruption(s)")
    for w, m in zip(where.tolist(), masks):
        print(f"  word {w:>6} unit {engine.unit_of(w):>4}: 0x{int(original[w]):016x} -> "
              f"0x{store.peek(h, w):016x} (mask 0x{m:016x})")
    rep = store.scrub(h)
    print(f"scrub: scanned {rep.scanned_words} words, detected {len(rep.detected)}, "
          f"corrected {len(rep.corrected)}, uncorrectable {len(rep.uncorrectable)}")
    for u, w, v in rep.corrected:
        print(f"  corrected unit {u} word {w}: recovered 0x{v:016x}")
    for u, reason in rep.uncorrectable:
        print(f"  uncorrectable unit {u}: {reason}")
    after = np.array([store.peek(h, i) for i in range(words)], dtype=np.uint64)
    restored = bool(np.array_equal(after, original))
    print("after:")
    for w in where.tolist():
        state = "restored" if after[w] == original[w] else "NOT restored"
        print(f"  word {w:>6}: 0x{int(after[w]):016x} {state}")
    print("result: all corrected" if restored and not rep.uncorrectable else "result: data loss")
    return 0 if restored and not rep.uncorrectable else 1


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="flat key = value config file")
    p.add_argument("--matrix", help="poisson:M or file:PATH")
    p.add_argument("--strategies", metavar="LIST", help="comma-separated: all,static,operands,dynamic,none")
    p.add_argument("--scheme", help="parity|replication|checksum|none")
    p.add_argument("--unit-span", metavar="WORDS", help="signature unit length, or 'object'")
    p.add_argument("--rate", help="flips per million words per iteration")
    p.add_argument("--model", help="single-bit|multi-bit|word-burst")
    p.add_argument("--bits", help="bits per multi-bit flip or burst length")
    p.add_argument("--seed", help="base seed")
    p.add_argument("--trials", help="trials per strategy")
    p.add_argument("--tol", help="relative residual tolerance")
    p.add_argument("--scrub-every", help="scrub period in iterations")
    p.add_argument("--repeats", help="bench repetitions (median is reported)")
    p.add_argument("--jobs", help="worker processes for trials")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--no-timing", action="store_const", const="true", help="zero the wall-clock columns")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="havens", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"havens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("bench", help="fault-free overhead pass across strategies"))
    _common(sub.add_parser("inject", help="seeded fault-injection campaign"))
    demo = sub.add_parser("scrub-demo", help="corrupt, scrub and repair one parity haven")
    demo.add_argument("--words", type=int, default=64)
    demo.add_argument("--corruptions", type=int, default=1)
    demo.add_argument("--seed", type=int, default=0)
    demo.add_argument("--unit-span", type=int, default=DEFAULT_UNIT_SPAN)
    return parser


_KEYS = ("matrix", "strategies", "scheme", "unit_span", "rate", "model", "bits", "seed", "trials",
         "tol", "scrub_every", "repeats", "jobs", "out", "no_timing")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "scrub-demo":
            return cmd_scrub_demo(args.words, args.corruptions, args.seed, args.unit_span)
        cfg = load_config(args.config, **{k: getattr(args, k) for k in _KEYS})
        return (cmd_bench if args.command == "bench" else cmd_inject)(cfg)
    except ConfigError as e:
        print(f"havens: config error: {e}", file=sys.stderr)
        return 2
    except (HavenError, BadInput, OSError) as e:
        print(f"havens: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

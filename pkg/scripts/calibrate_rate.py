"""Find the injection rate at which unprotected CG completes in under half the trials.

Doubles the rate from ``--start`` until NONE's completion rate drops below
``--target``, then reports every strategy at that rate.

    python3 scripts/calibrate_rate.py --m 32 --trials 200 --seed 2024
"""

import argparse

from havens import InjectionSpec, Strategy, build_poisson, run_campaign


def calibrate(m: int, trials: int, seed: int, start: float, target: float, jobs: int = 1):
    A = build_poisson(m)
    rate = start
    while True:
        none = run_campaign(A, ["none"], InjectionSpec(seed=seed, rate=rate), trials, timing=False, jobs=jobs)
        print(f"rate {rate:8.3f}  none completion {none['none'].completion_rate:.3f}")
        if none["none"].completion_rate < target:
            break
        rate *= 2
    res = run_campaign(A, [s.value for s in Strategy], InjectionSpec(seed=seed, rate=rate), trials,
                       timing=False, jobs=jobs)
    return rate, res


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=32)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--start", type=float, default=0.25)
    ap.add_argument("--target", type=float, default=0.5)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    rate, res = calibrate(args.m, args.trials, args.seed, args.start, args.target, args.jobs)
    print(f"\ncalibrated rate {rate:g} flips per million words per iteration")
    for s, r in res.results.items():
        print(f"  {s.value:>8}: completion {r.completion_rate:.3f}  corrected {r.corrected:6d}  "
              f"uncorrectable {r.uncorrectable}")


if __name__ == "__main__":
    main()

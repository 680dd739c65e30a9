"""Seeded fault-injection campaigns and zero-fault timing passes over CG."""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cg import (
    Outcome,
    PlacementStrategy,
    SparseMatrix,
    Strategy,
    cg_solve,
    direct_solve,
)
from .faults import InjectionSpec
from .protection import DEFAULT_UNIT_SPAN, SchemeKind


def trial_seed(seed: int, trial: int) -> int:
    """Per-trial injection seed; trial ``t`` gets the same seed under every strategy."""
    return int(np.random.SeedSequence([seed, trial]).generate_state(1, np.uint64)[0])


def random_rhs(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, n)


@dataclass
class StrategyResult:
    strategy: Strategy
    trials: int = 0
    counts: dict = field(default_factory=lambda: {o: 0 for o in Outcome})
    detected: int = 0
    corrected: int = 0
    uncorrectable: int = 0
    flips: int = 0
    wall_times: list = field(default_factory=list, repr=False)
    baseline_wall: float = 0.0
    overhead_vs_none_pct: float = 0.0

    @property
    def completion_rate(self) -> float:
        return self.counts[Outcome.CONVERGED_CORRECT] / self.trials if self.trials else 0.0

    @property
    def mean_wall(self) -> float:
        return statistics.fmean(self.wall_times) if self.wall_times else 0.0

    def tallies(self) -> tuple:
        """Everything except timing, for determinism checks."""
        return (self.strategy, self.trials, tuple(self.counts[o] for o in Outcome),
                self.detected, self.corrected, self.uncorrectable, self.flips)


@dataclass
class CampaignResult:
    n: int
    spec: InjectionSpec
    results: dict

    def __getitem__(self, strategy) -> StrategyResult:
        return self.results[Strategy.parse(strategy)]

    def tallies(self) -> tuple:
        return tuple(r.tallies() for r in self.results.values())


def _trial(args):
    A, b, x_oracle, placement, spec, tol, scrub_every = args
    return cg_solve(A, b, placement, injection=spec, tol=tol, scrub_every=scrub_every, x_oracle=x_oracle)


def _map(fn, tasks, jobs):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def run_campaign(A: SparseMatrix, strategies, spec: InjectionSpec, trials: int, b=None,
                 scheme=SchemeKind.PARITY, unit_span=DEFAULT_UNIT_SPAN, tol: float = 1e-10,
                 scrub_every: int = 1, jobs: int = 1, timing: bool = True) -> CampaignResult:
    """Run ``trials`` paired-seed solves per strategy and aggregate outcomes.

    Trial ``t`` uses ``trial_seed(spec.seed, t)`` under every strategy.  A
    fault-free timing pass per strategy (plus NONE as the baseline) fills
    ``overhead_vs_none_pct`` unless ``timing`` is off.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    strategies = [Strategy.parse(s) for s in strategies]
    b = random_rhs(A.n, spec.seed) if b is None else np.asarray(b, dtype=np.float64)
    x_oracle = direct_solve(A, b)
    placements = {s: PlacementStrategy(s, scheme, unit_span) for s in strategies}
    tasks = [(A, b, x_oracle, placements[s], replace(spec, seed=trial_seed(spec.seed, t)), tol, scrub_every)
             for s in strategies for t in range(trials)]
    runs = _map(_trial, tasks, jobs)
    results = {}
    for i, s in enumerate(strategies):
        res = StrategyResult(s, trials)
        for run in runs[i * trials:(i + 1) * trials]:
            res.counts[run.outcome] += 1
            res.detected += run.detected
            res.corrected += run.corrected
            res.uncorrectable += run.uncorrectable
            res.flips += run.flips
            res.wall_times.append(run.wall_time)
        results[s] = res
    if timing:
        cg_solve(A, b, placements[strategies[0]], tol=tol, x_oracle=x_oracle)  # warm-up
        base = cg_solve(A, b, PlacementStrategy(Strategy.NONE, scheme, unit_span), tol=tol,
                        scrub_every=scrub_every, x_oracle=x_oracle).wall_time
        for s, res in results.items():
            res.baseline_wall = cg_solve(A, b, placements[s], tol=tol, scrub_every=scrub_every,
                                         x_oracle=x_oracle).wall_time
            res.overhead_vs_none_pct = 100.0 * (res.baseline_wall / base - 1.0)
    return CampaignResult(A.n, spec, results)


@dataclass
class BenchRow:
    strategy: Strategy
    scheme: SchemeKind
    unit_span: object
    n: int
    iterations: int
    wall_ms: float
    overhead_vs_none_pct: float
    outcome: Outcome
    samples: list = field(default_factory=list, repr=False)


def paired_overhead_pct(samples, baseline) -> float:
    """Median over repetitions of ``100 * (sample / baseline - 1)``, paired by repetition."""
    return statistics.median(100.0 * (a / c - 1.0) for a, c in zip(samples, baseline, strict=True))


def bench_placements(A: SparseMatrix, placements, b=None, repeats: int = 1, tol: float = 1e-10,
                     scrub_every: int = 1, seed: int = 0) -> list[BenchRow]:
    """Fault-free timing of each placement; ``wall_ms`` is the median over ``repeats``.

    Each repetition runs every placement once, in a freshly shuffled order
    (seeded by ``seed``), so machine drift and ordering effects hit all
    placements alike and per-repetition samples can be compared pairwise
    with :func:`paired_overhead_pct`.  ``overhead_vs_none_pct`` is left at
    zero; see :func:`bench_strategies`.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    placements = list(placements)
    b = random_rhs(A.n, seed) if b is None else np.asarray(b, dtype=np.float64)
    x_oracle = direct_solve(A, b)
    rng = np.random.default_rng(seed)
    cg_solve(A, b, placements[0], tol=tol, x_oracle=x_oracle)  # warm-up
    samples = [[] for _ in placements]
    last = [None] * len(placements)
    for _ in range(repeats):
        for k in rng.permutation(len(placements)).tolist():
            run = cg_solve(A, b, placements[k], tol=tol, scrub_every=scrub_every, x_oracle=x_oracle)
            samples[k].append(run.wall_time * 1e3)
            last[k] = run
    return [BenchRow(pl.kind, pl.scheme, pl.unit_span, A.n, run.iterations, statistics.median(ms), 0.0,
                     run.outcome, ms) for pl, run, ms in zip(placements, last, samples)]


def bench_strategies(A: SparseMatrix, strategies, b=None, scheme=SchemeKind.PARITY,
                     unit_span=DEFAULT_UNIT_SPAN, repeats: int = 1, tol: float = 1e-10,
                     scrub_every: int = 1, seed: int = 0) -> list[BenchRow]:
    """Zero-injection overhead pass across strategies.

    NONE is always measured as the baseline and reported last if it was
    not requested.  ``overhead_vs_none_pct`` is the paired median over
    repetitions; see :func:`bench_placements` for timing details.
    """
    strategies = [Strategy.parse(s) for s in strategies]
    order = strategies + ([Strategy.NONE] if Strategy.NONE not in strategies else [])
    rows = bench_placements(A, [PlacementStrategy(s, scheme, unit_span) for s in order], b=b,
                            repeats=repeats, tol=tol, scrub_every=scrub_every, seed=seed)
    base = rows[order.index(Strategy.NONE)].samples
    for r in rows:
        if r.strategy is not Strategy.NONE:
            r.overhead_vs_none_pct = paired_overhead_pct(r.samples, base)
    return rows

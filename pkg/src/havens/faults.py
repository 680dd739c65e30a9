"""Seeded bit-flip injection into haven-managed memory.

Flips go straight to raw memory and never touch signatures: they model
silent corruption, not program bugs.  Every epoch draws from its own
generator derived from ``(seed, epoch)``, so the flip sequence depends only
on the injection spec and the memory layout being targeted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .heap import HavenId, ObjectHandle, PageStore
from .protection import WORD_BITS, SchemeKind


class FaultModel(enum.Enum):
    SINGLE_BIT = "single-bit"
    MULTI_BIT = "multi-bit"
    WORD_BURST = "word-burst"


@dataclass(frozen=True)
class InjectionSpec:
    """What, where and how often to corrupt.

    ``target`` is ``"all"`` (every allocated word in every haven, the null
    haven included), ``"protected"`` (havens with a scheme other than
    none), a :class:`HavenId`, an :class:`ObjectHandle`, or a sequence of
    handles.  ``rate`` is the expected number of flip events per million
    eligible words per epoch.  ``bits`` is the number of flipped bits for
    the multi-bit model and the burst length for word-burst.
    """

    seed: int = 0
    target: object = "all"
    model: FaultModel = FaultModel.SINGLE_BIT
    bits: int = 1
    rate: float = 0.0
    epoch: str = "iteration"
    period: int = 1

    def __post_init__(self):
        object.__setattr__(self, "model", FaultModel(self.model))
        if self.rate < 0:
            raise ValueError("rate must be >= 0")
        if self.epoch not in ("iteration", "ops"):
            raise ValueError("epoch must be 'iteration' or 'ops'")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        limit = WORD_BITS if self.model is FaultModel.MULTI_BIT else None
        if self.bits < 1 or (limit and self.bits > limit):
            raise ValueError(f"bits out of range for {self.model.value}")


class Flip(NamedTuple):
    epoch: int
    haven: HavenId
    word: int
    mask: int


@dataclass
class InjectionLog:
    flips: list = field(default_factory=list)

    def __len__(self):
        return len(self.flips)

    def replay(self, store: PageStore) -> None:
        for f in self.flips:
            flip(store, f.haven, f.word, f.mask)


def flip(store: PageStore, h: HavenId, word: int, mask: int) -> None:
    store.xor_word(h, word, mask)


def eligible(store: PageStore, target) -> list[tuple[HavenId, int, int]]:
    """Injectable (haven, first word, word count) segments, in a fixed order."""
    if isinstance(target, str):
        if target not in ("all", "protected"):
            raise ValueError(f"unknown target {target!r}")
        segs = []
        for h in store.havens():
            if target == "protected" and store.stats(h).scheme is SchemeKind.NONE:
                continue
            segs += [(h, off, n) for off, n in store.spans(h)]
        return segs
    if isinstance(target, HavenId):
        return [(target, off, n) for off, n in store.spans(target)]
    if isinstance(target, ObjectHandle):
        target = [target]
    return [(t.haven, *store.footprint(t)) for t in target]


def _masks(rng: np.random.Generator, spec: InjectionSpec, k: int) -> list[int]:
    if spec.model is FaultModel.MULTI_BIT:
        return [sum(1 << int(b) for b in rng.choice(WORD_BITS, spec.bits, replace=False)) for _ in range(k)]
    return [1 << int(b) for b in rng.integers(0, WORD_BITS, k)]


def run_epoch(spec: InjectionSpec, store: PageStore, epoch: int = 0,
              log: InjectionLog | None = None) -> InjectionLog:
    """Sample and apply one epoch's flips; append them to ``log``."""
    log = InjectionLog() if log is None else log
    if spec.rate == 0:
        return log
    segs = eligible(store, spec.target)
    sizes = np.array([n for _, _, n in segs], dtype=np.int64)
    total = int(sizes.sum())
    if total == 0:
        return log
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(epoch,)))
    k = int(rng.poisson(spec.rate * total / 1e6))
    if k == 0:
        return log
    starts = rng.integers(0, total, k)
    burst = spec.bits if spec.model is FaultModel.WORD_BURST else 1
    positions = (starts[:, None] + np.arange(burst)).ravel()
    positions = positions[positions < total]
    masks = _masks(rng, spec, len(positions))
    bounds = np.cumsum(sizes)
    seg_of = np.searchsorted(bounds, positions, side="right")
    for pos, s, mask in zip(positions.tolist(), seg_of.tolist(), masks):
        h, first, n = segs[s]
        word = first + pos - int(bounds[s] - n)
        flip(store, h, word, mask)
        log.flips.append(Flip(epoch, h, word, mask))
    return log


class Injector:
    """Drives epochs for one store; the solver calls :meth:`tick` once per iteration."""

    def __init__(self, spec: InjectionSpec, store: PageStore):
        self.spec = spec
        self.store = store
        self.log = InjectionLog()
        self.epoch = 0
        self._ops_seen = store.ops

    def _run(self):
        run_epoch(self.spec, self.store, self.epoch, self.log)
        self.epoch += 1

    def tick(self) -> None:
        if self.spec.epoch == "iteration":
            self._run()
            return
        while self.store.ops - self._ops_seen >= self.spec.period:
            self._ops_seen += self.spec.period
            self._run()

"""Software error detection/correction schemes maintained per haven.

The parity scheme keeps, for every signature unit (a contiguous span of
words), a per-word parity bit-vector ``D`` used to detect and locate a
corrupted word, plus two XOR accumulators: ``S1`` folds in the first value
written to each word and ``S2`` folds in ``old ^ new`` for every later
update.  While the unit is clean ``S1 ^ S2`` equals the XOR of its current
contents, so a single located word can be rebuilt from the others.

Replication keeps three copies and votes per word; checksum keeps one
rotating-XOR checksum per unit and can only detect.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field

import numpy as np

from ._kernels import fold_segments, fold_update_segments, fold_updates, fold_writes, parity_mismatches
from .errors import ProtectionRelaxed, Uncorrectable

WORD_BITS = 64
DEFAULT_UNIT_SPAN = 4096


class SchemeKind(enum.Enum):
    PARITY = "parity"
    REPLICATION = "replication"
    CHECKSUM = "checksum"
    NONE = "none"

    @classmethod
    def parse(cls, name: "str | SchemeKind") -> "SchemeKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown scheme {name!r} (expected one of {choices})") from None


def parity(words) -> np.ndarray:
    """Even-parity bit of each word (1 when the popcount is odd)."""
    return np.bitwise_count(np.asarray(words)) & 1


def _xor_all(words) -> int:
    if len(words) == 0:
        return 0
    return int(np.bitwise_xor.reduce(words))


def _words(contents) -> np.ndarray:
    return np.asarray(contents, dtype=np.uint64)


@dataclass(eq=False)
class SignatureUnit:
    """Parity signatures for one contiguous span of words."""

    start: int
    length: int
    D: np.ndarray
    written: np.ndarray
    S1: int = 0
    S2: int = 0
    n_written: int = 0
    # operation counters
    updates: int = 0
    parity_checks: int = 0
    xor_ops: int = 0
    words_touched: int = 0

    @classmethod
    def empty(cls, start: int, length: int) -> "SignatureUnit":
        return cls(start, length, np.zeros(length, dtype=bool), np.zeros(length, dtype=bool))

    @property
    def stop(self) -> int:
        return self.start + self.length

    def detection_words(self) -> np.ndarray:
        """``D`` packed into ceil(length / 64) little-endian 64-bit words."""
        nwords = -(-self.length // WORD_BITS)
        padded = np.zeros(nwords * WORD_BITS, dtype=bool)
        padded[: self.length] = self.D
        return np.packbits(padded, bitorder="little").view(np.uint64)


def init_units(object_sizes, unit_span: int = DEFAULT_UNIT_SPAN, start: int = 0) -> list[SignatureUnit]:
    """Lay out signature units for objects placed back to back from ``start``.

    Each object gets its own units; an object longer than ``unit_span`` is
    split into ceil(length / unit_span) units.
    """
    if unit_span < 1:
        raise ValueError("unit_span must be >= 1")
    units = []
    pos = start
    for size in object_sizes:
        end = pos + size
        while pos < end:
            n = min(unit_span, end - pos)
            units.append(SignatureUnit.empty(pos, n))
            pos += n
    return units


def on_write(unit: SignatureUnit, index: int, old: int, new: int, first_write: bool) -> None:
    if first_write:
        unit.S1 ^= int(new)
    else:
        unit.S2 ^= int(old) ^ int(new)
    unit.D[index] = bool(int(new).bit_count() & 1)
    if not unit.written[index]:
        unit.written[index] = True
        unit.n_written += 1
    unit.updates += 1


def apply_writes(unit: SignatureUnit, index: int, old, new) -> None:
    """Vectorised :func:`on_write` for ``len(new)`` words starting at ``index``.

    Whether each word is a first write is taken from ``unit.written``.
    ``old`` may alias the memory being overwritten, so this must run before
    the new values are stored.
    """
    sl = slice(index, index + len(new))
    if unit.n_written == unit.length:
        unit.S2 ^= int(fold_updates(_words(old), _words(new), unit.D[sl]))
    else:
        s1, s2, fresh = fold_writes(_words(old), _words(new), unit.D[sl], unit.written[sl])
        unit.S1 ^= int(s1)
        unit.S2 ^= int(s2)
        unit.n_written += fresh
    unit.updates += len(new)


def detect(unit: SignatureUnit, contents) -> list[int]:
    """Unit-relative indices whose parity disagrees with ``D``."""
    unit.parity_checks += len(contents)
    return parity_mismatches(_words(contents), unit.D).tolist()


def _reconstruct(unit: SignatureUnit, contents, index: int) -> int:
    # XOR of every word but `index`, folded with S1 ^ S2
    rest = _xor_all(contents) ^ int(contents[index])
    unit.xor_ops += unit.length
    unit.words_touched += unit.length - 1
    return unit.S1 ^ unit.S2 ^ rest


def correct(unit: SignatureUnit, contents, index: int) -> int:
    """Recovered value for word ``index``; the caller writes it back."""
    hits = detect(unit, contents)
    if len(hits) >= 2:
        raise Uncorrectable(f"{len(hits)} corrupted words in unit at {unit.start}")
    return _reconstruct(unit, _words(contents), index)


def rebuild(unit: SignatureUnit, contents) -> None:
    """Recompute signatures from scratch, trusting ``contents``."""
    contents = _words(contents)
    unit.S1 = _xor_all(contents)
    unit.S2 = 0
    unit.D[:] = parity(contents)
    unit.written[:] = True
    unit.n_written = unit.length


def scrub_unit(unit: SignatureUnit, contents: np.ndarray) -> tuple[list[int], int | None]:
    """Detect and, for a single hit, repair ``contents`` in place.

    Returns the detected unit-relative indices and the recovered value
    (``None`` when nothing was corrected).
    """
    hits = detect(unit, contents)
    if len(hits) != 1:
        return hits, None
    i = hits[0]
    value = _reconstruct(unit, contents, i)
    contents[i] = value
    unit.D[i] = bool(value.bit_count() & 1)
    return hits, value


@dataclass
class ScrubReport:
    scanned_words: int = 0
    detected: list = field(default_factory=list)        # (unit, word)
    corrected: list = field(default_factory=list)       # (unit, word, value)
    uncorrectable: list = field(default_factory=list)   # (unit, reason)

    @property
    def clean(self) -> bool:
        return not (self.detected or self.uncorrectable)

    def merge(self, other: "ScrubReport") -> "ScrubReport":
        self.scanned_words += other.scanned_words
        self.detected += other.detected
        self.corrected += other.corrected
        self.uncorrectable += other.uncorrectable
        return self


# --- per-haven scheme engines -------------------------------------------------
#
# Engines see haven memory through ``mem``, an object with raw
# ``load(offset, count) -> ndarray`` and ``store(offset, values)`` in the
# haven's logical word space.  Bounds and handle checks happen in the heap.


class NoProtection:
    kind = SchemeKind.NONE

    def __init__(self, unit_span: int = DEFAULT_UNIT_SPAN):
        self.unit_span = unit_span

    def footprint(self, length: int) -> int:
        return length

    def on_alloc(self, mem, base: int, length: int) -> None:
        pass

    def read(self, mem, base, length, off, count, enabled=True) -> np.ndarray:
        return mem.load(base + off, count)

    def write(self, mem, base, length, off, values, enabled=True) -> None:
        mem.store(base + off, values)

    def scrub(self, mem) -> ScrubReport:
        return ScrubReport()

    def rebuild(self, mem) -> int:
        return 0


class _UnitScheme(NoProtection):
    """Shared unit bookkeeping for schemes with per-unit signatures."""

    def __init__(self, unit_span: int = DEFAULT_UNIT_SPAN):
        super().__init__(unit_span)
        self.units: list = []
        self._starts: list[int] = []

    def _new_units(self, base: int, length: int) -> list:
        raise NotImplementedError

    def on_alloc(self, mem, base, length):
        for u in self._new_units(base, length):
            self.units.append(u)
            self._starts.append(u.start)

    def _overlapping(self, lo: int, hi: int):
        i = bisect.bisect_right(self._starts, lo) - 1
        while i < len(self.units) and self.units[i].start < hi:
            yield i, self.units[i]
            i += 1

    def unit_of(self, word: int) -> int:
        return bisect.bisect_right(self._starts, word) - 1

    @property
    def covered(self) -> int:
        return self.units[-1].start + self.units[-1].length if self.units else 0


class ParityProtection(_UnitScheme):
    """Parity signatures for a haven, one :class:`SignatureUnit` per span.

    The units' ``D`` and written-bit arrays are views into haven-wide
    arrays, so a scrub checks every word in one vectorised pass no matter
    how finely the haven is split.
    """

    kind = SchemeKind.PARITY

    def __init__(self, unit_span: int = DEFAULT_UNIT_SPAN):
        super().__init__(unit_span)
        self.D = np.zeros(0, dtype=bool)
        self.written = np.zeros(0, dtype=bool)
        self.parity_checks = 0
        self._plans: dict = {}

    def _new_units(self, base, length):
        return init_units([length], self.unit_span, start=base)

    def on_alloc(self, mem, base, length):
        super().on_alloc(mem, base, length)
        grow = np.zeros(length, dtype=bool)
        self.D = np.concatenate([self.D, grow])
        self.written = np.concatenate([self.written, grow])
        for u in self.units:
            u.D = self.D[u.start:u.stop]
            u.written = self.written[u.start:u.stop]
        self._starts_arr = np.asarray(self._starts)
        self._plans.clear()

    def _plan(self, lo: int, hi: int):
        """Units overlapping ``[lo, hi)`` and the span-relative cut points between them."""
        plan = self._plans.get((lo, hi))
        if plan is None:
            units = [u for _, u in self._overlapping(lo, hi)]
            cuts = np.array([0] + [u.start - lo for u in units[1:]] + [hi - lo], dtype=np.int64)
            if len(self._plans) >= 1024:
                self._plans.clear()
            plan = self._plans[(lo, hi)] = (units, cuts, np.diff(cuts).tolist())
        return plan

    def write(self, mem, base, length, off, values, enabled=True):
        lo = base + off
        hi = lo + len(values)
        if not enabled:
            mem.store(lo, values)
            return
        old = mem.view(lo, len(values))
        units, cuts, sizes = self._plan(lo, hi)
        if len(units) == 1:
            u = units[0]
            apply_writes(u, lo - u.start, old, values)
        elif all(u.n_written == u.length for u in units):
            # one pass over the span, per-unit deltas
            s2 = fold_update_segments(old, values, self.D[lo:hi], cuts).tolist()
            for u, d2, k in zip(units, s2, sizes):
                u.S2 ^= d2
                u.updates += k
        else:
            s1, s2, fresh = fold_segments(old, values, self.D[lo:hi], self.written[lo:hi], cuts)
            for u, d1, d2, f, k in zip(units, s1.tolist(), s2.tolist(), fresh.tolist(), sizes):
                u.S1 ^= d1
                u.S2 ^= d2
                u.n_written += f
                u.updates += k
        mem.store(lo, values)

    def scrub(self, mem) -> ScrubReport:
        n = self.covered
        report = ScrubReport(scanned_words=n)
        if not n:
            return report
        words = mem.view(0, n)
        self.parity_checks += n
        bad = parity_mismatches(words, self.D)
        if not len(bad):
            return report
        owners = np.searchsorted(self._starts_arr, bad, side="right") - 1
        for k in np.unique(owners).tolist():
            u = self.units[k]
            hits = bad[owners == k].tolist()
            report.detected += [(k, w) for w in hits]
            if len(hits) > 1:
                report.uncorrectable.append((k, f"{len(hits)} corrupted words"))
                continue
            w = hits[0]
            value = _reconstruct(u, words[u.start:u.stop], w - u.start)
            mem.store(w, np.array([value], dtype=np.uint64))
            u.D[w - u.start] = bool(value.bit_count() & 1)
            report.corrected.append((k, w, value))
        return report

    def rebuild(self, mem) -> int:
        if not self.units:
            return 0
        words = mem.load(0, self.covered)
        for u in self.units:
            rebuild(u, words[u.start:u.stop])
        return len(words)

    @property
    def xor_ops(self) -> int:
        return sum(u.xor_ops for u in self.units)


def _rotl(words: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    w = words.astype(np.uint64, copy=False)
    s = shifts.astype(np.uint64)
    return (w << s) | (w >> ((np.uint64(WORD_BITS) - s) % np.uint64(WORD_BITS)))


@dataclass(eq=False)
class ChecksumUnit:
    start: int
    length: int
    value: int = 0

    @property
    def stop(self) -> int:
        return self.start + self.length


def rolling_checksum(words, first: int = 0) -> int:
    """XOR of each word rotated left by its unit position modulo 64."""
    pos = np.arange(first, first + len(words)) % WORD_BITS
    return _xor_all(_rotl(np.asarray(words, dtype=np.uint64), pos))


class ChecksumProtection(_UnitScheme):
    kind = SchemeKind.CHECKSUM

    def _new_units(self, base, length):
        return [ChecksumUnit(u.start, u.length) for u in init_units([length], self.unit_span, start=base)]

    def write(self, mem, base, length, off, values, enabled=True):
        lo = base + off
        hi = lo + len(values)
        if not enabled:
            mem.store(lo, values)
            return
        old = mem.load(lo, len(values))
        mem.store(lo, values)
        for _, u in self._overlapping(lo, hi):
            a = max(lo, u.start)
            b = min(hi, u.stop)
            u.value ^= rolling_checksum(old[a - lo:b - lo], a - u.start)
            u.value ^= rolling_checksum(values[a - lo:b - lo], a - u.start)

    def scrub(self, mem) -> ScrubReport:
        report = ScrubReport()
        if not self.units:
            return report
        words = mem.load(0, self.covered)
        for k, u in enumerate(self.units):
            report.scanned_words += u.length
            if rolling_checksum(words[u.start:u.stop]) != u.value:
                report.detected.append((k, None))
                report.uncorrectable.append((k, "checksum mismatch (detect-only scheme)"))
        return report

    def rebuild(self, mem) -> int:
        if not self.units:
            return 0
        words = mem.load(0, self.covered)
        for u in self.units:
            u.value = rolling_checksum(words[u.start:u.stop])
        return len(words)


REPLICAS = 3


def vote(a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Word-wise 2-of-3 majority.  Returns (value, ok mask, minority mask)."""
    ab = a == b
    value = np.where(ab | (a == c), a, b)
    ok = ab | (a == c) | (b == c)
    unanimous = ab & (b == c)
    return value, ok, ~unanimous


class ReplicationProtection(NoProtection):
    kind = SchemeKind.REPLICATION

    def __init__(self, unit_span: int = DEFAULT_UNIT_SPAN):
        super().__init__(unit_span)
        self.objects: list[tuple[int, int]] = []
        self.repairs = 0

    def footprint(self, length):
        return REPLICAS * length

    def on_alloc(self, mem, base, length):
        self.objects.append((base, length))

    def _copies(self, mem, base, length, off, count):
        return [mem.load(base + k * length + off, count) for k in range(REPLICAS)]

    def read(self, mem, base, length, off, count, enabled=True):
        if not enabled:
            return mem.load(base + off, count)
        copies = self._copies(mem, base, length, off, count)
        value, ok, minority = vote(*copies)
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise Uncorrectable(f"three-way disagreement at word {base + off + bad}")
        if minority.any():
            self.repairs += int(minority.sum())
            for k in range(REPLICAS):
                mem.store(base + k * length + off, value)
        return value

    def write(self, mem, base, length, off, values, enabled=True):
        copies = REPLICAS if enabled else 1
        for k in range(copies):
            mem.store(base + k * length + off, values)

    def scrub(self, mem) -> ScrubReport:
        report = ScrubReport()
        for k, (base, length) in enumerate(self.objects):
            copies = self._copies(mem, base, length, 0, length)
            report.scanned_words += REPLICAS * length
            value, ok, minority = vote(*copies)
            for i in np.flatnonzero(minority).tolist():
                report.detected.append((k, base + i))
                if ok[i]:
                    report.corrected.append((k, base + i, int(value[i])))
                else:
                    report.uncorrectable.append((k, f"three-way disagreement at word {base + i}"))
            fix = minority & ok
            if fix.any():
                for c in range(REPLICAS):
                    mem.store(base + c * length, np.where(fix, value, copies[c]))
        return report

    def rebuild(self, mem) -> int:
        total = 0
        for base, length in self.objects:
            primary = mem.load(base, length)
            for k in range(1, REPLICAS):
                mem.store(base + k * length, primary)
            total += length
        return total


_ENGINES = {
    SchemeKind.NONE: NoProtection,
    SchemeKind.PARITY: ParityProtection,
    SchemeKind.CHECKSUM: ChecksumProtection,
    SchemeKind.REPLICATION: ReplicationProtection,
}


def make_engine(kind: SchemeKind, unit_span: int = DEFAULT_UNIT_SPAN) -> NoProtection:
    return _ENGINES[kind](unit_span)


def require_enabled(enabled: bool, dirty: bool) -> None:
    if not enabled or dirty:
        raise ProtectionRelaxed("protection is relaxed; set it robust before scrubbing")

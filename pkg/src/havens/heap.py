"""Page-backed region allocator.

A :class:`PageStore` owns a fixed number of pages of 64-bit words.  Havens
claim pages from the store's free list as objects are bump-allocated into
them and give every page back at once when destroyed.  Objects are only
reachable through :class:`ObjectHandle` values, and every access is checked
against the owning haven's allocation table, so released or destroyed
handles can never read another object's words.

Haven 0 is the null haven: it always exists, is never protected, and holds
objects that carry no reliability guarantee.
"""

from __future__ import annotations

import contextlib
import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadInput,
    BoundsError,
    CreateFailed,
    DanglingHandle,
    InvalidHaven,
    LiveReferences,
    OutOfMemory,
)
from .protection import (
    DEFAULT_UNIT_SPAN,
    NoProtection,
    SchemeKind,
    ScrubReport,
    make_engine,
    require_enabled,
)

PAGE_WORDS = 1024
FREE = -1


@dataclass(frozen=True, order=True)
class HavenId:
    index: int
    generation: int


@dataclass(frozen=True)
class ObjectHandle:
    haven: HavenId
    offset: int
    length: int
    generation: int


@dataclass
class AllocEntry:
    offset: int
    length: int
    footprint: int
    live: bool
    generation: int


@dataclass(frozen=True)
class HavenStats:
    id: HavenId
    scheme: SchemeKind
    pages: int
    live: int
    object_sizes: tuple
    allocated_words: int
    protection_enabled: bool
    dirty: bool


@dataclass
class _Descriptor:
    id: HavenId
    scheme: SchemeKind
    engine: NoProtection
    protection_enabled: bool = True
    dirty: bool = False
    page_list: list = field(default_factory=list)
    alloc_table: list = field(default_factory=list)
    by_offset: dict = field(default_factory=dict)
    bump: int = 0
    live_handles: int = 0
    contiguous: bool = True


class _HavenMemory:
    """Raw (unprotected) view of one haven's logical word space."""

    __slots__ = ("_words", "_desc")

    def __init__(self, words: np.ndarray, desc: _Descriptor):
        self._words = words
        self._desc = desc

    def _where(self, off: int, count: int):
        d = self._desc
        if d.contiguous:
            base = d.page_list[0] * PAGE_WORDS + off if d.page_list else off
            return slice(base, base + count)
        logical = np.arange(off, off + count)
        pages = np.asarray(d.page_list)[logical // PAGE_WORDS]
        return pages * PAGE_WORDS + logical % PAGE_WORDS

    def load(self, off: int, count: int) -> np.ndarray:
        return self._words[self._where(off, count)].copy()

    def view(self, off: int, count: int) -> np.ndarray:
        """Like :meth:`load` but aliases memory when the span is contiguous."""
        return self._words[self._where(off, count)]

    def store(self, off: int, values) -> None:
        self._words[self._where(off, len(values))] = values


def _as_words(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == np.uint64:
        return arr.ravel()
    if arr.dtype.kind == "f":
        raise BadInput("float values must be passed as their uint64 bit pattern (arr.view(np.uint64))")
    try:
        return np.asarray(values, dtype=np.uint64).ravel()
    except (OverflowError, ValueError, TypeError) as exc:
        raise BadInput(f"values are not 64-bit words: {exc}") from None


class PageStore:
    """A fixed-capacity heap of pages shared by a set of havens.

    Operations on one store are not thread-safe; give each worker its own.
    """

    NULL = HavenId(0, 0)

    def __init__(self, pages: int = 1024, max_havens: int = 256):
        if pages < 1 or max_havens < 1:
            raise BadInput("store needs at least one page and one haven slot")
        self.total_pages = pages
        self.words = np.zeros(pages * PAGE_WORDS, dtype=np.uint64)
        self.free_list = list(range(pages))
        self.owner = np.full(pages, FREE, dtype=np.int64)
        self._gen = [0] * (max_havens + 1)
        self._slots: list = [None] * (max_havens + 1)
        self._alloc_serial = 0
        self.ops = 0
        self.rebuild_words = 0
        self._slots[0] = _Descriptor(self.NULL, SchemeKind.NONE, NoProtection())

    # -- lookup ---------------------------------------------------------------

    def _desc(self, h: HavenId) -> _Descriptor:
        if not isinstance(h, HavenId) or not 0 <= h.index < len(self._slots):
            raise InvalidHaven(f"not a haven of this store: {h!r}")
        d = self._slots[h.index]
        if d is None or d.id.generation != h.generation:
            raise InvalidHaven(f"stale or destroyed haven {h}")
        return d

    def _entry(self, handle: ObjectHandle) -> tuple[_Descriptor, AllocEntry]:
        try:
            d = self._desc(handle.haven)
        except InvalidHaven:
            raise DanglingHandle(f"handle into dead haven {handle.haven}") from None
        e = d.by_offset.get(handle.offset)
        if e is None or not e.live or e.generation != handle.generation or e.length != handle.length:
            raise DanglingHandle(f"handle {handle} is released or forged")
        return d, e

    def _mem(self, d: _Descriptor) -> _HavenMemory:
        return _HavenMemory(self.words, d)

    def havens(self) -> list[HavenId]:
        return [d.id for d in self._slots if d is not None]

    def protection(self, h: HavenId):
        """The scheme engine of ``h`` (signature units, counters)."""
        return self._desc(h).engine

    def spans(self, h: HavenId) -> list[tuple[int, int]]:
        """(offset, footprint) of every allocation in ``h``, live or not."""
        return [(e.offset, e.footprint) for e in self._desc(h).alloc_table]

    def footprint(self, handle: ObjectHandle) -> tuple[int, int]:
        _, e = self._entry(handle)
        return e.offset, e.footprint

    @property
    def free_pages(self) -> int:
        return len(self.free_list)

    # -- haven lifecycle ------------------------------------------------------

    def create_haven(self, scheme=SchemeKind.PARITY, unit_span: int | None = None) -> HavenId:
        """Register an empty haven; no pages are consumed until ``alloc``."""
        kind = SchemeKind.parse(scheme)
        span = DEFAULT_UNIT_SPAN if unit_span is None else int(unit_span)
        if span < 1:
            raise BadInput("unit_span must be >= 1")
        for idx in range(1, len(self._slots)):
            if self._slots[idx] is None:
                break
        else:
            raise CreateFailed(f"all {len(self._slots) - 1} haven slots in use")
        hid = HavenId(idx, self._gen[idx])
        self._slots[idx] = _Descriptor(hid, kind, make_engine(kind, span))
        return hid

    def destroy_haven(self, h: HavenId) -> None:
        d = self._desc(h)
        if h.index == 0:
            raise InvalidHaven("the null haven cannot be destroyed")
        if d.live_handles:
            raise LiveReferences(f"haven {h} still has {d.live_handles} live handles")
        for p in d.page_list:
            self.owner[p] = FREE
        self.free_list = sorted(self.free_list + d.page_list)
        self._slots[h.index] = None
        self._gen[h.index] += 1

    @contextlib.contextmanager
    def haven(self, scheme=SchemeKind.PARITY, unit_span: int | None = None):
        """Scoped haven: created on entry, destroyed on exit.

        A body that leaves live handles behind gets :class:`LiveReferences`
        and the haven stays alive.  If the body raises, its handles are
        released so the haven can be torn down before the error propagates.
        """
        h = self.create_haven(scheme, unit_span)
        try:
            yield h
        except BaseException:
            d = self._desc(h)
            for e in d.alloc_table:
                e.live = False
            d.live_handles = 0
            self.destroy_haven(h)
            raise
        self.destroy_haven(h)

    def with_haven(self, scheme, body, unit_span: int | None = None):
        with self.haven(scheme, unit_span) as h:
            return body(h)

    # -- objects --------------------------------------------------------------

    def _claim(self, d: _Descriptor, n: int) -> None:
        if n > len(self.free_list):
            raise OutOfMemory(f"need {n} pages, {len(self.free_list)} free")
        taken, self.free_list = self.free_list[:n], self.free_list[n:]
        for p in taken:
            self.owner[p] = d.id.index
            self.words[p * PAGE_WORDS:(p + 1) * PAGE_WORDS] = 0
        if d.contiguous:
            run = ([d.page_list[-1]] if d.page_list else []) + taken
            d.contiguous = all(b == a + 1 for a, b in zip(run, run[1:]))
        d.page_list.extend(taken)

    def alloc(self, h: HavenId, length: int) -> ObjectHandle:
        d = self._desc(h)
        length = int(length)
        if length < 1:
            raise BadInput("allocation length must be >= 1 word")
        foot = d.engine.footprint(length)
        need = -(-(d.bump + foot) // PAGE_WORDS) - len(d.page_list)
        if need > 0:
            self._claim(d, need)
        self._alloc_serial += 1
        e = AllocEntry(d.bump, length, foot, True, self._alloc_serial)
        d.alloc_table.append(e)
        d.by_offset[e.offset] = e
        d.engine.on_alloc(self._mem(d), e.offset, length)
        d.bump += foot
        d.live_handles += 1
        return ObjectHandle(h, e.offset, length, e.generation)

    def release(self, handle: ObjectHandle) -> None:
        """Kill a handle.  Its words stay owned until the haven is destroyed."""
        d, e = self._entry(handle)
        e.live = False
        d.live_handles -= 1

    def _check_span(self, handle, offset, count):
        if offset < 0 or count < 0 or offset + count > handle.length:
            raise BoundsError(f"[{offset}, {offset + count}) outside object of {handle.length} words")

    def read(self, handle: ObjectHandle, offset: int = 0, count: int | None = None) -> np.ndarray:
        d, e = self._entry(handle)
        if count is None:
            count = handle.length - offset
        self._check_span(handle, offset, count)
        self.ops += 1
        return d.engine.read(self._mem(d), e.offset, e.length, offset, count, d.protection_enabled)

    def write(self, handle: ObjectHandle, offset: int, values) -> None:
        d, e = self._entry(handle)
        vals = _as_words(values)
        self._check_span(handle, offset, len(vals))
        self.ops += 1
        if not d.protection_enabled:
            d.dirty = True
        d.engine.write(self._mem(d), e.offset, e.length, offset, vals, d.protection_enabled)

    # -- protection -----------------------------------------------------------

    def set_protection(self, h: HavenId, enabled: bool) -> None:
        """Relax (``False``) or restore (``True``) a haven's protection.

        Restoring after a relaxed phase rebuilds every signature from the
        current contents, so corruption that happened while relaxed is
        absorbed rather than repaired.
        """
        d = self._desc(h)
        if d.scheme is SchemeKind.NONE:
            return
        if enabled and not d.protection_enabled:
            self.rebuild_words += d.engine.rebuild(self._mem(d))
            d.dirty = False
        d.protection_enabled = bool(enabled)

    def scrub(self, h: HavenId) -> ScrubReport:
        d = self._desc(h)
        if d.scheme is SchemeKind.NONE:
            return ScrubReport()
        require_enabled(d.protection_enabled, d.dirty)
        return d.engine.scrub(self._mem(d))

    def xor_word(self, h: HavenId, word: int, mask: int) -> None:
        """``word ^= mask`` in raw memory, leaving all protection state alone."""
        d = self._desc(h)
        if not 0 <= word < d.bump:
            raise BoundsError(f"word {word} outside the {d.bump} allocated words of {h}")
        where = self._mem(d)._where(word, 1)
        self.words[where] ^= np.uint64(mask)

    def peek(self, h: HavenId, word: int) -> int:
        """Raw word read that bypasses handles and protection (for tests and demos)."""
        d = self._desc(h)
        if not 0 <= word < d.bump:
            raise BoundsError(f"word {word} outside the {d.bump} allocated words of {h}")
        return int(self._mem(d).load(word, 1)[0])

    def stats(self, h: HavenId) -> HavenStats:
        d = self._desc(h)
        return HavenStats(
            id=d.id,
            scheme=d.scheme,
            pages=len(d.page_list),
            live=d.live_handles,
            object_sizes=tuple(e.length for e in d.alloc_table if e.live),
            allocated_words=d.bump,
            protection_enabled=d.protection_enabled,
            dirty=d.dirty,
        )

    def clone(self) -> "PageStore":
        return copy.deepcopy(self)

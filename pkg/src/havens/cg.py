"""Jacobi-preconditioned conjugate gradient running on haven-managed data.

The matrix (row offsets, column indices and values), right-hand side,
preconditioner diagonal, and the ``x``/``p``/``r`` vectors all live in a
:class:`~havens.heap.PageStore`.  A :class:`PlacementStrategy` decides
which of them get a protected haven of their own; the rest go to the null
haven.  Every element access goes through the store's read/write
interface, so injected faults and scrub repairs are seen by the solver
exactly as they would be by an application.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._kernels import csr_matvec, csr_valid
from .errors import BadInput, NotSymmetric, ParseError, Uncorrectable
from .faults import InjectionSpec, Injector
from .heap import PAGE_WORDS, HavenId, ObjectHandle, PageStore
from .protection import DEFAULT_UNIT_SPAN, SchemeKind

ORACLE_RTOL = 1e-6
MAX_DENSE_N = 4096

# allocation order; also the order faults are sampled over
OBJECTS = ("A.indptr", "A.indices", "A.data", "b", "M", "x", "p", "r")
GROUPS = ("A", "b", "M", "x", "p", "r")


def _group(name: str) -> str:
    return name.split(".")[0]


# --- matrices ----------------------------------------------------------------


@dataclass
class SparseMatrix:
    """Compressed-row matrix with int64 offsets/indices and float64 values."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        csr = sp.csr_matrix(m)
        csr.sort_indices()
        csr.sum_duplicates()
        return cls(csr.shape[0], csr.indptr.astype(np.int64), csr.indices.astype(np.int64),
                   csr.data.astype(np.float64))

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    @property
    def nnz(self) -> int:
        return len(self.data)

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def is_symmetric(self) -> bool:
        s = self.to_scipy()
        return (s != s.T).nnz == 0


def build_poisson(m: int) -> SparseMatrix:
    """5-point Laplacian on an m x m grid (n = m**2, Dirichlet boundary)."""
    if m < 2:
        raise BadInput("grid size must be >= 2")
    t = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(m, m))
    eye = sp.identity(m)
    return SparseMatrix.from_scipy(sp.kron(eye, t) + sp.kron(t, eye))


_MM_FIELDS = {"real", "integer", "double"}
_MM_SYMMETRY = {"general", "symmetric"}


def load_matrix(path) -> SparseMatrix:
    """Read a real Matrix Market coordinate file and check it is symmetric.

    ``symmetric`` files may only list the lower triangle; ``general`` files
    must list both triangles with equal values.
    """
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    banner = lines[0].split()
    if (len(banner) != 5 or banner[0].lower() != "%%matrixmarket" or banner[1].lower() != "matrix"
            or banner[2].lower() != "coordinate" or banner[3].lower() not in _MM_FIELDS
            or banner[4].lower() not in _MM_SYMMETRY):
        raise ParseError(f"{path}: unsupported or malformed banner {lines[0]!r}")
    symmetric = banner[4].lower() == "symmetric"
    body = [ln for ln in lines[1:] if ln.strip() and not ln.lstrip().startswith("%")]
    try:
        rows, cols, nnz = (int(v) for v in body[0].split())
        entries = [ln.split() for ln in body[1:]]
        if len(entries) != nnz or any(len(e) != 3 for e in entries):
            raise ValueError("entry count or shape mismatch")
        i = np.array([int(e[0]) for e in entries], dtype=np.int64) - 1
        j = np.array([int(e[1]) for e in entries], dtype=np.int64) - 1
        v = np.array([float(e[2]) for e in entries], dtype=np.float64)
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    if rows != cols:
        raise NotSymmetric(f"{path}: matrix is {rows}x{cols}")
    if nnz and (i.min() < 0 or j.min() < 0 or i.max() >= rows or j.max() >= cols):
        raise ParseError(f"{path}: index out of range")
    if symmetric:
        if np.any(j > i):
            raise NotSymmetric(f"{path}: symmetric file lists an upper-triangle entry")
        off = i != j
        i, j, v = np.concatenate([i, j[off]]), np.concatenate([j, i[off]]), np.concatenate([v, v[off]])
    mat = SparseMatrix.from_scipy(sp.coo_matrix((v, (i, j)), shape=(rows, cols)))
    if not mat.is_symmetric():
        raise NotSymmetric(f"{path}: A != A^T")
    return mat


def direct_solve(A: SparseMatrix, b) -> np.ndarray:
    """Direct solution used as the correctness oracle.

    Dense LU up to ``MAX_DENSE_N`` unknowns, sparse LU (SuperLU) beyond.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.n,):
        raise BadInput("dimension mismatch")
    try:
        if A.n <= MAX_DENSE_N:
            return np.linalg.solve(A.to_dense(), b)
        return spla.splu(A.to_scipy().tocsc()).solve(b)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise BadInput(f"singular matrix: {exc}") from None


# --- placement ---------------------------------------------------------------


class Strategy(enum.Enum):
    ALL = "all"
    STATIC = "static"
    OPERANDS = "operands"
    DYNAMIC = "dynamic"
    NONE = "none"

    @property
    def protected(self) -> frozenset:
        return _PROTECTED[self]

    @classmethod
    def parse(cls, name) -> "Strategy":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(f"unknown strategy {name!r}") from None


_PROTECTED = {
    Strategy.ALL: frozenset(GROUPS),
    Strategy.STATIC: frozenset({"A", "b", "M"}),
    Strategy.OPERANDS: frozenset({"A", "b"}),
    Strategy.DYNAMIC: frozenset({"x", "p", "r"}),
    Strategy.NONE: frozenset(),
}

MONOLITHIC = "object"


@dataclass(frozen=True)
class PlacementStrategy:
    """Which objects get protected havens, and how they are protected.

    ``unit_span`` is the signature-unit length in words, or
    :data:`MONOLITHIC` for one unit per object.
    """

    kind: Strategy = Strategy.NONE
    scheme: SchemeKind = SchemeKind.PARITY
    unit_span: int | str = DEFAULT_UNIT_SPAN

    def __post_init__(self):
        object.__setattr__(self, "kind", Strategy.parse(self.kind))
        object.__setattr__(self, "scheme", SchemeKind.parse(self.scheme))

    def protects(self, group: str) -> bool:
        return self.scheme is not SchemeKind.NONE and group in self.kind.protected


@dataclass
class Layout:
    store: PageStore
    handles: dict
    havens: dict          # group -> HavenId (null haven for unprotected groups)

    @property
    def protected_havens(self) -> list[HavenId]:
        return sorted({h for h in self.havens.values() if h != PageStore.NULL})

    def haven_words(self) -> dict:
        """Allocated words per group, from the store's haven statistics."""
        out = {}
        for g, h in self.havens.items():
            if h == PageStore.NULL:
                out[g] = sum(self.store.footprint(self.handles[o])[1] for o in OBJECTS if _group(o) == g)
            else:
                out[g] = self.store.stats(h).allocated_words
        return out


def _sizes(A: SparseMatrix) -> dict:
    n = A.n
    return {"A.indptr": n + 1, "A.indices": A.nnz, "A.data": A.nnz,
            "b": n, "M": n, "x": n, "p": n, "r": n}


def place_objects(A: SparseMatrix, b, strategy: PlacementStrategy) -> Layout:
    """Allocate and initialise the solver objects in a fresh store."""
    sizes = _sizes(A)
    foot = 3 if strategy.scheme is SchemeKind.REPLICATION else 1
    pages = sum(-(-foot * s // PAGE_WORDS) + 1 for s in sizes.values()) + 1
    store = PageStore(pages=pages, max_havens=len(GROUPS))
    havens = {}
    for g in GROUPS:
        if not strategy.protects(g):
            havens[g] = PageStore.NULL
            continue
        span = strategy.unit_span
        if span == MONOLITHIC:
            span = max(s for o, s in sizes.items() if _group(o) == g)
        havens[g] = store.create_haven(strategy.scheme, int(span))
    handles = {o: store.alloc(havens[_group(o)], sizes[o]) for o in OBJECTS}
    b = np.asarray(b, dtype=np.float64)
    init = {
        "A.indptr": A.indptr.view(np.uint64),
        "A.indices": A.indices.view(np.uint64),
        "A.data": A.data.view(np.uint64),
        "b": b.view(np.uint64),
        "M": A.diagonal().astype(np.float64).view(np.uint64),
    }
    for o, words in init.items():
        store.write(handles[o], 0, words)
    return Layout(store, handles, havens)


# --- solver ------------------------------------------------------------------


class Outcome(enum.Enum):
    CONVERGED_CORRECT = "converged_correct"
    CONVERGED_WRONG = "converged_wrong"
    DIVERGED = "diverged"
    ABORTED_UNCORRECTABLE = "aborted"


@dataclass
class RunOutcome:
    outcome: Outcome
    iterations: int
    wall_time: float
    detected: int = 0
    corrected: int = 0
    uncorrectable: int = 0
    flips: int = 0
    restarts: int = 0
    x: np.ndarray | None = field(default=None, repr=False)


class _Diverged(Exception):
    pass


class _Aborted(Exception):
    pass


class _Solver:
    """Haven-backed PCG state.  All vectors are read from and written to the store."""

    def __init__(self, layout: Layout, n: int, nnz: int):
        self.s = layout.store
        self.h = layout.handles
        self.n = n
        self.nnz = nnz
        self.restarts = 0

    def get(self, name: str) -> np.ndarray:
        try:
            return self.s.read(self.h[name]).view(np.float64)
        except Uncorrectable as exc:
            raise _Aborted(str(exc)) from None

    def put(self, name: str, values: np.ndarray) -> None:
        self.s.write(self.h[name], 0, values.view(np.uint64))

    def structure(self):
        try:
            indptr = self.s.read(self.h["A.indptr"]).view(np.int64)
            indices = self.s.read(self.h["A.indices"]).view(np.int64)
        except Uncorrectable as exc:
            raise _Aborted(str(exc)) from None
        if not csr_valid(indptr, indices, self.n, self.nnz):
            raise _Diverged("corrupted matrix structure")
        return indptr, indices

    def matvec(self, v: np.ndarray) -> np.ndarray:
        indptr, indices = self.structure()
        return csr_matvec(indptr, indices, self.get("A.data"), v)

    def pcg(self, tol: float, tick) -> np.ndarray:
        """Jacobi-preconditioned CG from x = 0; ``tick`` runs before each iteration.

        When the recurrence residual meets the tolerance, the true residual
        ``b - A x`` is checked too; if it disagrees the recurrence restarts
        from it.
        """
        b = self.get("b")
        self.put("x", np.zeros(self.n))
        self.put("r", b)
        if not np.any(b):
            return self.get("x")
        z = b / self.get("M")
        self.put("p", z)
        rz = float(b @ z)
        while True:
            bnorm = float(np.linalg.norm(self.get("b")))
            tick()
            p = self.get("p")
            q = self.matvec(p)
            pq = float(p @ q)
            if not math.isfinite(pq) or pq <= 0.0:
                raise _Diverged("curvature breakdown")
            alpha = rz / pq
            self.put("x", self.get("x") + alpha * p)
            r = self.get("r") - alpha * q
            self.put("r", r)
            rnorm = float(np.linalg.norm(r))
            if not math.isfinite(rnorm) or not math.isfinite(bnorm):
                raise _Diverged("non-finite residual")
            if rnorm <= tol * bnorm:
                true_r = self.get("b") - self.matvec(self.get("x"))
                if float(np.linalg.norm(true_r)) <= tol * bnorm:
                    return self.get("x")
                self.restarts += 1
                r = true_r
                self.put("r", r)
                z = r / self.get("M")
                rz = float(r @ z)
                self.put("p", z)
                continue
            z = r / self.get("M")
            rz_new = float(r @ z)
            beta = rz_new / rz
            rz = rz_new
            self.put("p", z + beta * self.get("p"))


def _finite(*vals) -> bool:
    return all(np.all(np.isfinite(v)) for v in vals)


def _resolve_target(spec: InjectionSpec, layout: Layout) -> InjectionSpec:
    t = spec.target
    if t == "all":
        return replace(spec, target=tuple(layout.handles[o] for o in OBJECTS))
    if isinstance(t, str) and t != "protected":
        t = (t,)
    if isinstance(t, (tuple, list, frozenset, set)) and all(isinstance(x, str) for x in t):
        names = [o for o in OBJECTS if o in t or _group(o) in t]
        if not names:
            raise BadInput(f"no solver objects match target {spec.target!r}")
        return replace(spec, target=tuple(layout.handles[o] for o in names))
    return spec


def cg_solve(A: SparseMatrix, b, strategy: PlacementStrategy | Strategy | str = Strategy.NONE,
             injection: InjectionSpec | None = None, tol: float = 1e-10, maxiter: int | None = None,
             scrub_every: int = 1, x_oracle: np.ndarray | None = None,
             keep_solution: bool = False) -> RunOutcome:
    """Solve ``A x = b`` with objects placed per ``strategy`` and classify the run.

    ``injection`` (optional) is applied once per iteration; a target of
    ``"all"`` or of object names (``"A"``, ``"x"``, ``"A.data"``, ...)
    is resolved against the solver's own objects in a placement-independent
    order, so equal seeds hit the same logical words under every strategy.
    Protected havens are scrubbed every ``scrub_every`` iterations.
    """
    if not isinstance(strategy, PlacementStrategy):
        strategy = PlacementStrategy(Strategy.parse(strategy))
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.n,):
        raise BadInput(f"rhs has shape {b.shape}, matrix is {A.n}x{A.n}")
    if tol <= 0 or scrub_every < 1:
        raise BadInput("tol must be > 0 and scrub_every >= 1")
    maxiter = 10 * A.n if maxiter is None else maxiter
    if x_oracle is None:
        x_oracle = direct_solve(A, b)

    t0 = time.perf_counter()
    layout = place_objects(A, b, strategy)
    solver = _Solver(layout, A.n, A.nnz)
    injector = Injector(_resolve_target(injection, layout), layout.store) if injection else None
    protected = layout.protected_havens
    tally = {"detected": 0, "corrected": 0, "uncorrectable": 0}
    it = 0

    def scrub():
        for h in protected:
            rep = layout.store.scrub(h)
            tally["detected"] += len(rep.detected)
            tally["corrected"] += len(rep.corrected)
            tally["uncorrectable"] += len(rep.uncorrectable)
            if rep.uncorrectable:
                raise _Aborted(f"uncorrectable error in haven {h}")

    def tick():
        nonlocal it
        if it >= maxiter:
            raise _Diverged("iteration limit")
        if injector:
            injector.tick()
        if protected and it % scrub_every == 0:
            scrub()
        it += 1

    def finish(outcome: Outcome, x=None) -> RunOutcome:
        return RunOutcome(outcome, it, time.perf_counter() - t0, flips=len(injector.log) if injector else 0,
                          restarts=solver.restarts, x=x if keep_solution else None, **tally)

    try:
        with np.errstate(all="ignore"):
            x = solver.pcg(tol, tick)
    except _Diverged:
        return finish(Outcome.DIVERGED)
    except _Aborted:
        return finish(Outcome.ABORTED_UNCORRECTABLE)
    if not _finite(x):
        return finish(Outcome.DIVERGED, x)
    err = np.max(np.abs(x - x_oracle)) / max(np.max(np.abs(x_oracle)), np.finfo(float).tiny)
    return finish(Outcome.CONVERGED_CORRECT if err <= ORACLE_RTOL else Outcome.CONVERGED_WRONG, x)

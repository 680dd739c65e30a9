"""Single-pass signature kernels (numba) for the parity scheme hot paths."""

import numpy as np
from numba import njit, types
from numba.extending import intrinsic


@intrinsic
def _ctpop(typingctx, x):
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])

    return sig, codegen


@njit(cache=True, inline="always")
def _parity64(x):
    return (_ctpop(x) & np.uint64(1)) != np.uint64(0)


@njit(cache=True)
def fold_writes(old, new, D, written):
    """Fold ``old -> new`` word updates into signatures.

    Sets ``D`` and ``written`` for the span and returns
    ``(S1 delta, S2 delta, newly written words)``.
    """
    s1 = np.uint64(0)
    s2 = np.uint64(0)
    fresh = 0
    for i in range(new.shape[0]):
        v = new[i]
        if written[i]:
            s2 ^= old[i] ^ v
        else:
            s1 ^= v
            written[i] = True
            fresh += 1
        D[i] = _parity64(v)
    return s1, s2, fresh


@njit(cache=True)
def parity_mismatches(words, D):
    """Indices where a word's parity disagrees with its detection bit."""
    out = np.empty(words.shape[0], dtype=np.int64)
    k = 0
    for i in range(words.shape[0]):
        if _parity64(words[i]) != D[i]:
            out[k] = i
            k += 1
    return out[:k]


@njit(cache=True)
def fold_updates(old, new, D):
    """:func:`fold_writes` for a span whose words have all been written before."""
    s2 = np.uint64(0)
    for i in range(new.shape[0]):
        v = new[i]
        s2 ^= old[i] ^ v
        D[i] = _parity64(v)
    return s2



@njit(cache=True)
def fold_segments(old, new, D, written, cuts):
    """:func:`fold_writes` over consecutive segments ``[cuts[j], cuts[j + 1])``.

    Returns per-segment S1 deltas, S2 deltas and newly written counts.
    """
    k = cuts.shape[0] - 1
    s1 = np.zeros(k, dtype=np.uint64)
    s2 = np.zeros(k, dtype=np.uint64)
    fresh = np.zeros(k, dtype=np.int64)
    for j in range(k):
        a, b = cuts[j], cuts[j + 1]
        s1[j], s2[j], fresh[j] = fold_writes(old[a:b], new[a:b], D[a:b], written[a:b])
    return s1, s2, fresh


@njit(cache=True)
def fold_update_segments(old, new, D, cuts):
    """:func:`fold_segments` for spans whose words have all been written before."""
    k = cuts.shape[0] - 1
    s2 = np.zeros(k, dtype=np.uint64)
    for j in range(k):
        a, b = cuts[j], cuts[j + 1]
        s2[j] = fold_updates(old[a:b], new[a:b], D[a:b])
    return s2


@njit(cache=True)
def csr_valid(indptr, indices, n, nnz):
    """True when row offsets are monotone from 0 to ``nnz`` and columns lie in ``[0, n)``."""
    if indptr.shape[0] != n + 1 or indptr[0] != 0 or indptr[n] != nnz or indices.shape[0] != nnz:
        return False
    for i in range(n):
        if indptr[i + 1] < indptr[i]:
            return False
    for k in range(nnz):
        if indices[k] < 0 or indices[k] >= n:
            return False
    return True


@njit(cache=True)
def csr_matvec(indptr, indices, data, v):
    """``y = A v`` for a validated compressed-row matrix; row sums run left to right."""
    n = indptr.shape[0] - 1
    y = np.empty(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * v[indices[k]]
        y[i] = acc
    return y

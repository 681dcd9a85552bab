"""Hot inner loops, each with an ``@njit`` version and a vectorised numpy twin.

The backend is picked once at import time from ``DISTREACH_BACKEND``
(``numba``, the default, or ``numpy``).  Both variants are always importable
as ``numba_kernels`` / ``numpy_kernels`` so tests and benchmarks can compare
them directly.

Shapes used throughout:

* ``X``        estimates, ``(N, n, k)``: agent, coordinate, right-hand side
* ``P``        kernel projectors, ``(N, n, n)``
* ``indptr``   neighbour offsets, ``(period, N + 1)`` into the flat ``indices``
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

BACKEND = os.environ.get("DISTREACH_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ImportError(f"DISTREACH_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


# ---------------------------------------------------------------- numpy path

def _np_disagreement(X):
    if X.shape[0] < 2:
        return 0.0
    return float((X.max(axis=0) - X.min(axis=0)).max()) if X.size else 0.0


def _np_dle_round(X, P, indptr, indices):
    N = X.shape[0]
    out = X.copy()
    for i in range(N):
        lo, hi = indptr[i], indptr[i + 1]
        if hi == lo:
            continue
        mean = X[indices[lo:hi]].sum(axis=0) / (hi - lo)
        out[i] = X[i] - P[i] @ (X[i] - mean)
    return out


def _np_dle_iterate(X, P, indptr, indices, start_round, tol, max_iter, hist):
    period = indptr.shape[0]
    X = X.copy()
    k = 0
    while True:
        d = _np_disagreement(X)
        hist[k] = d
        if d < tol or k >= max_iter:
            return X, k
        X = _np_dle_round(X, P, indptr[(start_round + k) % period], indices)
        k += 1


def _np_consensus_round(values, ids, indptr, indices):
    N = values.shape[0]
    new_v = values.copy()
    new_id = ids.copy()
    for i in range(N):
        for j in indices[indptr[i]:indptr[i + 1]]:
            better = (values[j] > new_v[i]) | ((values[j] == new_v[i]) & (ids[j] < new_id[i]))
            new_v[i] = np.where(better, values[j], new_v[i])
            new_id[i] = np.where(better, ids[j], new_id[i])
    return new_v, new_id


def _np_trajectory_margins(x0, w_seq, Ad, BdB, normals, offsets):
    """Simulate held-input trajectories and return per-step worst margins.

    ``w_seq[s, k]`` is the disturbance sample ``s`` holds on step ``k``.
    Returns a ``(K + 1, S)`` array of ``min_j (offset_j - <normal_j, x>)``.
    """
    S = x0.shape[0]
    K = w_seq.shape[1]
    out = np.empty((K + 1, S))
    x = x0.copy()
    out[0] = (offsets[0][None, :] - x @ normals[0].T).min(axis=1)
    for k in range(K):
        x = x @ Ad.T + w_seq[:, k] @ BdB.T
        out[k + 1] = (offsets[k + 1][None, :] - x @ normals[k + 1].T).min(axis=1)
    return out


numpy_kernels = SimpleNamespace(
    name="numpy",
    disagreement=_np_disagreement,
    dle_round=_np_dle_round,
    dle_iterate=_np_dle_iterate,
    consensus_round=_np_consensus_round,
    trajectory_margins=_np_trajectory_margins,
)


# ---------------------------------------------------------------- numba path

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_disagreement(X):
        N, n, k = X.shape
        worst = 0.0
        if N < 2:
            return worst
        for a in range(n):
            for c in range(k):
                lo = X[0, a, c]
                hi = lo
                for i in range(1, N):
                    v = X[i, a, c]
                    if v < lo:
                        lo = v
                    elif v > hi:
                        hi = v
                if hi - lo > worst:
                    worst = hi - lo
        return worst

    @njit(cache=True)
    def _nb_dle_round_into(X, P, indptr, indices, out):
        N, n, k = X.shape
        diff = np.empty((n, k))
        for i in range(N):
            lo = indptr[i]
            hi = indptr[i + 1]
            if hi == lo:
                for a in range(n):
                    for c in range(k):
                        out[i, a, c] = X[i, a, c]
                continue
            inv = 1.0 / (hi - lo)
            for a in range(n):
                for c in range(k):
                    s = 0.0
                    for e in range(lo, hi):
                        s += X[indices[e], a, c]
                    diff[a, c] = X[i, a, c] - s * inv
            for a in range(n):
                for c in range(k):
                    s = 0.0
                    for b in range(n):
                        s += P[i, a, b] * diff[b, c]
                    out[i, a, c] = X[i, a, c] - s

    @njit(cache=True)
    def _nb_dle_round(X, P, indptr, indices):
        out = np.empty_like(X)
        _nb_dle_round_into(X, P, indptr, indices, out)
        return out

    @njit(cache=True)
    def _nb_dle_iterate(X, P, indptr, indices, start_round, tol, max_iter, hist):
        period = indptr.shape[0]
        cur = X.copy()
        nxt = np.empty_like(X)
        k = 0
        while True:
            d = _nb_disagreement(cur)
            hist[k] = d
            if d < tol or k >= max_iter:
                return cur, k
            _nb_dle_round_into(cur, P, indptr[(start_round + k) % period], indices, nxt)
            cur, nxt = nxt, cur
            k += 1

    @njit(cache=True)
    def _nb_consensus_round(values, ids, indptr, indices):
        N, m = values.shape
        new_v = values.copy()
        new_id = ids.copy()
        for i in range(N):
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                for c in range(m):
                    v = values[j, c]
                    if v > new_v[i, c] or (v == new_v[i, c] and ids[j, c] < new_id[i, c]):
                        new_v[i, c] = v
                        new_id[i, c] = ids[j, c]
        return new_v, new_id

    @njit(cache=True)
    def _nb_trajectory_margins(x0, w_seq, Ad, BdB, normals, offsets):
        S, n = x0.shape
        K = w_seq.shape[1]
        nw = w_seq.shape[2]
        m = normals.shape[1]
        out = np.empty((K + 1, S))
        x = x0.copy()
        y = np.empty(n)
        for k in range(K + 1):
            for s in range(S):
                if k > 0:
                    for a in range(n):
                        acc = 0.0
                        for b in range(n):
                            acc += Ad[a, b] * x[s, b]
                        for b in range(nw):
                            acc += BdB[a, b] * w_seq[s, k - 1, b]
                        y[a] = acc
                    for a in range(n):
                        x[s, a] = y[a]
                worst = np.inf
                for j in range(m):
                    acc = offsets[k, j]
                    for a in range(n):
                        acc -= normals[k, j, a] * x[s, a]
                    if acc < worst:
                        worst = acc
                out[k, s] = worst
        return out

    numba_kernels = SimpleNamespace(
        name="numba",
        disagreement=_nb_disagreement,
        dle_round=_nb_dle_round,
        dle_iterate=_nb_dle_iterate,
        consensus_round=_nb_consensus_round,
        trajectory_margins=_nb_trajectory_margins,
    )
else:  # pragma: no cover
    numba_kernels = None


def active() -> SimpleNamespace:
    if BACKEND == "numba" and numba_kernels is not None:
        return numba_kernels
    return numpy_kernels


kernels = active()


def warmup() -> None:
    """Trigger JIT compilation on tiny inputs (no-op for the numpy backend)."""
    k = kernels
    X = np.zeros((2, 1, 1))
    P = np.ones((2, 1, 1))
    indptr = np.array([[0, 1, 2]], dtype=np.int64)
    indices = np.array([1, 0], dtype=np.int64)
    k.dle_round(X, P, indptr[0], indices)
    k.dle_iterate(X, P, indptr, indices, 0, 1.0, 1, np.zeros(2))
    k.consensus_round(np.zeros((2, 1)), np.zeros((2, 1), dtype=np.int64), indptr[0], indices)
    k.trajectory_margins(np.zeros((1, 1)), np.zeros((1, 1, 1)), np.eye(1), np.eye(1),
                         np.ones((2, 1, 1)), np.ones((2, 1)))

"""Small dense kernels: matrix exponential, ZOH pairs, projectors, a tableau LP.

Everything here is desk-scale (a few dozen rows); none of it tries to be
clever about sparsity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PINV_RTOL = 1e-10
CONSISTENCY_TOL = 1e-10
LP_TOL = 1e-9


class InconsistentSystemError(ValueError):
    pass


class InfeasibleError(ValueError):
    pass


class UnboundedError(ValueError):
    pass


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def _square(m, name="M") -> np.ndarray:
    a = as_matrix(m, name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    return a


# Pade(6, 6) numerator coefficients; the denominator uses alternating signs.
_PADE6 = (1.0, 1 / 2, 5 / 44, 1 / 66, 1 / 792, 1 / 15840, 1 / 665280)


def _expm_pade(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    eye = np.eye(n)
    powers = [eye, m]
    for _ in range(5):
        powers.append(powers[-1] @ m)
    even = sum(c * p for c, p in zip(_PADE6[0::2], powers[0::2]))
    odd = sum(c * p for c, p in zip(_PADE6[1::2], powers[1::2]))
    return np.linalg.solve(even - odd, even + odd)


def state_transition(M, dt: float = 1.0) -> np.ndarray:
    """``exp(M * dt)`` by scaling and squaring around a Pade(6, 6) core.

    The argument is halved until its 1-norm is at most 0.5.
    """
    a = _square(M) * float(dt)
    if not np.isfinite(dt):
        raise ValueError("dt must be finite")
    norm = np.abs(a).sum(axis=0).max() if a.size else 0.0
    squarings = 0
    if norm > 0.5:
        squarings = int(np.ceil(np.log2(norm / 0.5)))
    e = _expm_pade(a / 2.0**squarings)
    for _ in range(squarings):
        e = e @ e
    return e


def zoh_pair(M, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """``(exp(M dt), int_0^dt exp(M s) ds)`` from one augmented exponential."""
    a = _square(M)
    n = a.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = a
    aug[:n, n:] = np.eye(n)
    e = state_transition(aug, dt)
    return e[:n, :n], e[:n, n:]


def pinv(A, rtol: float = PINV_RTOL) -> np.ndarray:
    a = np.atleast_2d(np.asarray(A, dtype=float))
    if a.size == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    cutoff = rtol * (s.max() if s.size else 0.0)
    keep = s > cutoff
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def kernel_projector(rows, n: int | None = None, rtol: float = PINV_RTOL) -> np.ndarray:
    """Orthogonal projector onto ``Ker(rows)``, i.e. ``I - pinv(A) A``.

    ``n`` is needed only when ``rows`` has no rows at all.
    """
    a = np.asarray(rows, dtype=float)
    if a.ndim == 1:
        a = a[None, :] if a.size else a.reshape(0, n or 0)
    n = a.shape[1] if n is None else n
    if a.shape[0] == 0:
        return np.eye(n)
    p = np.eye(n) - pinv(a, rtol) @ a
    return 0.5 * (p + p.T)


def min_norm_solution(rows, b, tol: float = CONSISTENCY_TOL, n: int | None = None) -> np.ndarray:
    a = np.asarray(rows, dtype=float)
    if a.ndim == 1:
        a = a[None, :] if a.size else a.reshape(0, n or 0)
    rhs = np.asarray(b, dtype=float)
    if a.shape[0] == 0:
        shape = (a.shape[1],) + rhs.shape[1:]
        return np.zeros(shape)
    x = pinv(a) @ rhs
    scale = max(1.0, float(np.abs(rhs).max()) if rhs.size else 1.0)
    if np.abs(a @ x - rhs).max() > tol * scale:
        raise InconsistentSystemError("rows are inconsistent: no exact solution")
    return x


@dataclass(frozen=True)
class LpProblem:
    """Optimise ``objective . x`` subject to ``normals @ x <= offsets`` (x free)."""

    objective: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    sense: str = "max"

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        a = np.asarray(self.normals, dtype=float).reshape(-1, c.size)
        b = np.asarray(self.offsets, dtype=float).ravel()
        if a.shape[0] != b.size:
            raise ValueError("normals and offsets disagree on constraint count")
        if self.sense not in ("max", "min"):
            raise ValueError(f"sense must be 'max' or 'min', got {self.sense!r}")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "normals", a)
        object.__setattr__(self, "offsets", b)


def _pivot(t: np.ndarray, row: int, col: int) -> None:
    t[row] /= t[row, col]
    for r in range(t.shape[0]):
        if r != row and t[r, col] != 0.0:
            t[r] -= t[r, col] * t[row]


def _simplex(t: np.ndarray, basis: list[int], allowed: int, tol: float) -> None:
    """Minimise the last row's reduced costs with Bland's rule, in place.

    ``t`` is a tableau with constraint rows on top, the objective row last and
    the right-hand side in the final column.  Only the first ``allowed``
    columns may enter the basis.
    """
    m = t.shape[0] - 1
    while True:
        obj = t[-1, :allowed]
        entering = next((j for j in range(allowed) if obj[j] < -tol), None)
        if entering is None:
            return
        col = t[:m, entering]
        best, leave = np.inf, None
        for r in range(m):
            if col[r] > tol:
                ratio = t[r, -1] / col[r]
                if ratio < best - tol or (abs(ratio - best) <= tol and basis[r] < basis[leave]):
                    best, leave = ratio, r
        if leave is None:
            raise UnboundedError("LP is unbounded in the objective direction")
        _pivot(t, leave, entering)
        basis[leave] = entering


def solve_lp(p: LpProblem, tol: float = LP_TOL) -> tuple[float, np.ndarray]:
    """Dense two-phase simplex on the split form ``x = u - v``.

    Returns ``(optimum, argument)``.
    """
    a, b, c = p.normals, p.offsets, p.objective
    m, n = a.shape
    cost = -c if p.sense == "max" else c  # internal problem is a minimisation
    # columns: u (n) | v (n) | slack (m) | artificial (m)
    nv = 2 * n + m
    t = np.zeros((m + 1, nv + m + 1))
    t[:m, :n] = a
    t[:m, n:2 * n] = -a
    t[:m, 2 * n:nv] = np.eye(m)
    t[:m, -1] = b
    neg = b < 0
    t[:m][neg] *= -1.0
    t[:m, nv:nv + m] = np.eye(m)
    basis = list(range(nv, nv + m))

    # phase 1: minimise the sum of artificials
    t[-1, :] = 0.0
    t[-1, :nv] = -t[:m, :nv].sum(axis=0)
    t[-1, -1] = -t[:m, -1].sum()
    _simplex(t, basis, nv + m, tol)
    if -t[-1, -1] > tol * max(1.0, np.abs(b).max() if m else 1.0):
        raise InfeasibleError("LP constraints are infeasible")
    # drive any zero-level artificials out of the basis
    for r in range(m):
        if basis[r] >= nv:
            j = next((j for j in range(nv) if abs(t[r, j]) > tol), None)
            if j is not None:
                _pivot(t, r, j)
                basis[r] = j

    # phase 2
    t[-1, :] = 0.0
    t[-1, :n] = cost
    t[-1, n:2 * n] = -cost
    for r in range(m):
        if basis[r] < nv and t[-1, basis[r]] != 0.0:
            t[-1] -= t[-1, basis[r]] * t[r]
    _simplex(t, basis, nv, tol)

    z = np.zeros(nv + m)
    for r in range(m):
        z[basis[r]] = t[r, -1]
    x = z[:n] - z[n:2 * n]
    return float(c @ x), x

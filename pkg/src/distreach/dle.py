"""Projection-consensus solver for linear equations whose rows are split
across networked agents.

Agent ``i`` holds ``(A_i, b_i)`` and an estimate ``x_i`` that always satisfies
``A_i x_i = b_i``.  Each round it moves toward the mean of its neighbours'
estimates, but only inside ``Ker(A_i)``::

    x_i <- x_i - P_i (x_i - mean_{j in N_i} x_j)

Several right-hand sides can be solved at once by giving ``b_i`` a trailing
column axis; every column runs the same iteration independently.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import linalg
from ._kernels import kernels
from .graph import Graph, GraphSchedule, is_repeatedly_jointly_strongly_connected

log = logging.getLogger(__name__)

CONSISTENCY_TOL = 1e-9


class DleNonConvergence(RuntimeError):
    def __init__(self, message: str, report: "DleReport"):
        super().__init__(message)
        self.report = report


class DleInconsistentAgent(ValueError):
    def __init__(self, agent: int):
        super().__init__(f"agent {agent}: local rows are inconsistent")
        self.agent = agent


@dataclass(frozen=True)
class DleProblem:
    rows: tuple
    rhs: tuple
    n: int

    def __post_init__(self):
        rows, rhs = [], []
        for i, (a, b) in enumerate(zip(self.rows, self.rhs, strict=True)):
            a = np.asarray(a, dtype=float)
            a = a.reshape(-1, self.n) if a.size else np.zeros((0, self.n))
            b = np.asarray(b, dtype=float)
            if b.ndim == 0:
                b = b.reshape(1)
            if b.shape[0] != a.shape[0]:
                raise ValueError(f"agent {i}: {a.shape[0]} rows but {b.shape[0]} right-hand sides")
            rows.append(a)
            rhs.append(b)
        object.__setattr__(self, "rows", tuple(rows))
        object.__setattr__(self, "rhs", tuple(rhs))

    @classmethod
    def split(cls, A, b, owners: Sequence[Sequence[int]]) -> "DleProblem":
        """Partition the rows of ``A x = b``; ``owners[i]`` lists agent i's rows."""
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        return cls(tuple(A[list(o)] for o in owners), tuple(b[list(o)] for o in owners), A.shape[1])

    @property
    def agent_count(self) -> int:
        return len(self.rows)

    @property
    def columns(self) -> int:
        """Number of simultaneous right-hand sides (0 means a plain vector)."""
        return self.rhs[0].shape[1] if self.rhs[0].ndim == 2 else 0

    def with_rhs(self, rhs: Sequence[np.ndarray]) -> "DleProblem":
        return replace(self, rhs=tuple(rhs))


@dataclass
class DleState:
    k: int
    estimates: np.ndarray          # (N, n, cols)
    projectors: np.ndarray         # (N, n, n)
    pinvs: tuple
    problem: DleProblem
    vector: bool = True

    def solutions(self) -> np.ndarray:
        """Per-agent estimates, shape ``(N, n)`` or ``(N, n, cols)``."""
        return self.estimates[:, :, 0].copy() if self.vector else self.estimates.copy()


@dataclass
class DleReport:
    iterations: int
    disagreement: np.ndarray
    converged: bool
    start_round: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def final_disagreement(self) -> float:
        return float(self.disagreement[-1])


def _as_columns(b: np.ndarray) -> np.ndarray:
    return b[:, None] if b.ndim == 1 else b


def dle_init(p: DleProblem) -> DleState:
    n = p.n
    N = p.agent_count
    vector = p.rhs[0].ndim == 1
    cols = 1 if vector else p.rhs[0].shape[1]
    projectors = np.empty((N, n, n))
    pinvs = []
    X = np.empty((N, n, cols))
    for i, (a, b) in enumerate(zip(p.rows, p.rhs)):
        projectors[i] = linalg.kernel_projector(a, n=n)
        pinvs.append(linalg.pinv(a) if a.shape[0] else np.zeros((n, 0)))
        try:
            X[i] = _as_columns(linalg.min_norm_solution(a, _as_columns(b), n=n))
        except linalg.InconsistentSystemError:
            raise DleInconsistentAgent(i) from None
    return DleState(0, X, projectors, tuple(pinvs), p, vector)


def reproject(state: DleState, p: DleProblem, X: np.ndarray) -> DleState:
    """Re-seat estimates ``X`` onto the local rows of ``p`` (warm start).

    ``p`` must have the same rows as the problem ``state`` was built for;
    only the right-hand sides may differ.  Each agent maps its estimate to
    the nearest point of its own affine solution set.
    """
    out = np.empty_like(state.estimates)
    for i, (a, b) in enumerate(zip(p.rows, p.rhs)):
        x = X[i]
        if a.shape[0]:
            x = x - state.pinvs[i] @ (a @ x - _as_columns(b))
        out[i] = x
    return DleState(0, out, state.projectors, state.pinvs, p, state.vector)


def check_local_consistency(state: DleState, tol: float = CONSISTENCY_TOL) -> float:
    """Largest ``|A_i x_i - b_i|`` over agents (scaled by ``max(1, |b_i|)``)."""
    worst = 0.0
    for i, (a, b) in enumerate(zip(state.problem.rows, state.problem.rhs)):
        if a.shape[0] == 0:
            continue
        bc = _as_columns(b)
        r = np.abs(a @ state.estimates[i] - bc).max() / max(1.0, np.abs(bc).max())
        worst = max(worst, float(r))
    return worst


def dle_step(s: DleState, g: Graph) -> DleState:
    if g.node_count != s.estimates.shape[0]:
        raise ValueError("graph size does not match agent count")
    indptr, indices = g.csr()
    X = kernels.dle_round(s.estimates, s.projectors, indptr, indices)
    return DleState(s.k + 1, X, s.projectors, s.pinvs, s.problem, s.vector)


def disagreement(s: DleState) -> float:
    """Max pairwise sup-norm gap between agent estimates (harness-side metric)."""
    return float(kernels.disagreement(s.estimates))


def dle_iterate(
    state: DleState,
    schedule: GraphSchedule,
    tol: float,
    max_iter: int,
    start_round: int = 0,
) -> tuple[DleState, DleReport]:
    """Run rounds from ``state`` until disagreement < ``tol`` or ``max_iter``."""
    if schedule.node_count != state.estimates.shape[0]:
        raise ValueError("schedule size does not match agent count")
    indptr, indices = schedule.csr_tables()
    hist = np.zeros(max_iter + 1)
    X, k = kernels.dle_iterate(
        np.ascontiguousarray(state.estimates), state.projectors, indptr, indices,
        int(start_round), float(tol), int(max_iter), hist,
    )
    report = DleReport(int(k), hist[: k + 1].copy(), bool(hist[k] < tol), start_round)
    return DleState(state.k + k, X, state.projectors, state.pinvs, state.problem, state.vector), report


def dle_solve(
    p: DleProblem,
    schedule: GraphSchedule | Graph,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    start_round: int = 0,
    warm: np.ndarray | None = None,
    state: DleState | None = None,
    check_schedule: bool = True,
) -> tuple[np.ndarray, DleReport]:
    """Solve ``p`` over ``schedule``; returns ``(per-agent solutions, report)``.

    ``warm`` seeds the iteration from earlier estimates (re-projected onto
    the local rows); ``state`` reuses cached projectors from a previous
    :func:`dle_init` on the same rows.

    Raises :class:`DleNonConvergence` when ``max_iter`` is exhausted.
    """
    if isinstance(schedule, Graph):
        schedule = GraphSchedule.static(schedule)
    if check_schedule and not is_repeatedly_jointly_strongly_connected(schedule, schedule.period):
        warnings.warn("schedule is not repeatedly jointly connected; the d-LE may not converge",
                      RuntimeWarning, stacklevel=2)
    if state is None:
        state = dle_init(p)
    elif warm is None:
        state = reproject(state, p, state.estimates)
    if warm is not None:
        w = np.asarray(warm, dtype=float)
        state = reproject(state, p, w[:, :, None] if w.ndim == 2 else w)
    final, report = dle_iterate(state, schedule, tol, max_iter, start_round)
    if not report.converged:
        raise DleNonConvergence(
            f"d-LE did not reach disagreement {tol:g} within {max_iter} rounds "
            f"(last {report.final_disagreement:.3e})", report)
    log.debug("d-LE converged in %d rounds", report.iterations)
    report.extra["state"] = final
    return final.solutions(), report

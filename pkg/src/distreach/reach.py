"""Polytopic reachable-set propagation, centralised and distributed.

Every face ``(c_j, g_j)`` of the stacked initial set is traced through time
as a triple ``(lambda_j, xi_j, gamma_j)``: the co-state (face normal) follows
``lambda' = -AA^T lambda``, the contact point follows the closed loop driven
by the disturbance vertex that maximises ``<BB^T lambda, w>``, and
``gamma_j = <lambda_j, xi_j>``.  At each time the halfspaces
``<lambda_j, x> <= gamma_j`` bound the reachable set from outside while the
contact points span an inner approximation.

Time is discretised on a uniform grid and the disturbance is held on each
step.  Three flows are available:

``exact``
    matrix exponentials; the held vertex maximises the step-averaged
    co-state ``Bd^T lambda_{k+1}``.  Centralised only.
``midpoint``
    implicit half-steps ``(I + h AA^T) mu = lambda_k`` and
    ``(I - h AA) zeta = xi_k + h BB w`` with ``h = dt/2``, followed by the
    local extrapolations ``lambda_{k+1} = 2 mu - lambda_k`` and
    ``xi_{k+1} = 2 zeta - xi_k``.  The pairing ``<lambda, xi>`` is preserved
    exactly, so traced halfspaces keep supporting the discrete reachable set.
``euler``
    plain implicit Euler with ``h = dt`` and no extrapolation.  Cheaper to
    reason about, but it does not preserve the pairing.

Both implicit flows are linear equations per step, which is what the
distributed mode solves over the network.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import consensus, dle, linalg
from . import polytope as pt
from .graph import (GraphSchedule, is_repeatedly_jointly_strongly_connected,
                    worst_flooding_rounds)
from .model import (InformationSet, StackedSystem, attach_vertex_shares,
                    closed_loop_block_row, transpose_block_rows)

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-9
SANDWICH_TOL = 1e-8
LAMBDA_FLOOR = 1e-14

FLOWS = ("exact", "midpoint", "euler")


class ReachError(RuntimeError):
    pass


class SupportInconsistency(ReachError):
    pass


class DistributedNonConvergence(ReachError):
    def __init__(self, message, step, trace, report=None):
        super().__init__(message)
        self.step = step
        self.trace = trace
        self.report = report


@dataclass(frozen=True)
class ReachConfig:
    t0: float = 0.0
    tau: float = 1.0
    dt: float = 0.01
    flow: str = "midpoint"
    disturbance: str = "shares"
    dle_tol: float = 1e-10
    dle_max_iter: int = 200_000
    consensus_rounds: int | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.tau < self.t0:
            raise ValueError("tau must not precede t0")
        steps = (self.tau - self.t0) / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"(tau - t0) / dt = {steps} is not an integer")
        if self.flow not in FLOWS:
            raise ValueError(f"flow must be one of {FLOWS}, got {self.flow!r}")
        if self.disturbance not in ("shares", "product"):
            raise ValueError(f"disturbance must be 'shares' or 'product', got {self.disturbance!r}")

    @property
    def n_steps(self) -> int:
        return int(round((self.tau - self.t0) / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class HyperplaneTrace:
    lambdas: np.ndarray     # (K + 1, n)
    contacts: np.ndarray    # (K + 1, n)
    gammas: np.ndarray      # (K + 1,)
    w_star: np.ndarray      # (K, nw)


@dataclass
class ReachResult:
    times: np.ndarray
    lambdas: np.ndarray     # (K + 1, m, n)
    contacts: np.ndarray    # (K + 1, m, n)
    gammas: np.ndarray      # (K + 1, m)
    w_star: np.ndarray      # (K, m, nw)
    w_ids: np.ndarray       # (K, m); stacked vertex ids
    flow: str
    step_map: tuple         # (Ad, Bd @ BB) of the discrete flow used
    agent: int | None = None
    stats: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def trace_count(self) -> int:
        return self.gammas.shape[1]

    def outer(self, k: int = -1) -> pt.HPolytope:
        return pt.HPolytope(self.lambdas[k], self.gammas[k])

    def inner(self, k: int = -1) -> pt.VPolytope:
        return pt.VPolytope(self.contacts[k])

    def trace(self, j: int) -> HyperplaneTrace:
        return HyperplaneTrace(self.lambdas[:, j], self.contacts[:, j], self.gammas[:, j],
                               self.w_star[:, j])

    def support_residual(self) -> float:
        """``max |gamma - <lambda, xi>|`` over all steps and traces."""
        pair = np.einsum("kmn,kmn->km", self.lambdas, self.contacts)
        return float(np.abs(self.gammas - pair).max())

    def sandwich_margin(self) -> tuple[float, int]:
        """Worst ``gamma_i - <lambda_i, xi_j>`` over steps and trace pairs."""
        pair = np.einsum("kin,kjn->kij", self.lambdas, self.contacts)
        margin = self.gammas[:, :, None] - pair
        worst = margin.min(axis=(1, 2))
        k = int(np.argmin(worst))
        return float(worst[k]), k


# ------------------------------------------------------------------ building blocks

def _initial_arrays(sys: StackedSystem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h, v = sys.Xi0.h, sys.Xi0.v
    lam = h.normals.copy()
    values = v.vertices @ lam.T
    idx = np.argmax(values, axis=0)
    contacts = v.vertices[idx].copy()
    gammas = h.offsets.copy()
    got = np.einsum("mn,mn->m", lam, contacts)
    bad = np.abs(got - gammas) > SUPPORT_TOL * np.maximum(1.0, np.abs(gammas))
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise SupportInconsistency(
            f"face {j} does not support the initial set: max <c, v> = {got[j]:.12g}, "
            f"offset = {gammas[j]:.12g}")
    return lam, contacts, gammas


def init_traces(sys: StackedSystem) -> list[HyperplaneTrace]:
    lam, contacts, gammas = _initial_arrays(sys)
    empty = np.zeros((0, sys.nw))
    return [HyperplaneTrace(lam[j][None], contacts[j][None], gammas[j:j + 1], empty)
            for j in range(len(gammas))]


def costate_step_centralized(lam, sys: StackedSystem, dt: float) -> np.ndarray:
    return linalg.state_transition(-sys.AA.T, dt) @ np.asarray(lam, dtype=float)


def contact_step_centralized(contact, w_star, sys: StackedSystem, dt: float) -> np.ndarray:
    Ad, Bd = linalg.zoh_pair(sys.AA, dt)
    return Ad @ np.asarray(contact, dtype=float) + Bd @ (sys.BB @ np.asarray(w_star, dtype=float))


def _product_argmax(directions: np.ndarray, sys: StackedSystem) -> tuple[np.ndarray, np.ndarray]:
    """Per-factor argmax for a batch of ``BB^T lambda`` rows.

    Returns ``(w_star (q, nw), ids (q,))``; ids are positions in the
    lexicographic stacked vertex order.
    """
    q = directions.shape[0]
    w = np.zeros((q, sys.nw))
    ids = np.zeros(q, dtype=np.int64)
    for i, W in enumerate(sys.W_factors):
        blk = sys.w_block(i)
        k = np.argmax(directions[:, blk] @ W.vertices.T, axis=1)
        w[:, blk] = W.vertices[k]
        ids = ids * len(W) + k
    return w, ids


def _stacked_argmax(directions: np.ndarray, sys: StackedSystem) -> tuple[np.ndarray, np.ndarray]:
    if sys.WW is None:
        raise ReachError("stacked disturbance vertices are not available")
    k = np.argmax(directions @ sys.WW.vertices.T, axis=1)
    return sys.WW.vertices[k].copy(), k.astype(np.int64)


def optimal_disturbance(lam, sys: StackedSystem, mode: str = "stacked") -> tuple[np.ndarray, int]:
    """Disturbance vertex maximising ``<BB^T lam, w>``; returns ``(w, stacked id)``.

    ``mode="product"`` maximises each agent's factor separately, which gives
    the same vertex because the objective separates over the product.
    """
    d = (sys.BB.T @ np.asarray(lam, dtype=float))[None, :]
    if mode == "stacked":
        w, ids = _stacked_argmax(d, sys)
    elif mode == "product":
        w, ids = _product_argmax(d, sys)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return w[0], int(ids[0])


@dataclass(frozen=True)
class _Scheme:
    """Per-step linear maps for one flow and step size."""

    flow: str
    h: float
    extrapolate: bool
    costate: np.ndarray     # lambda_k -> lambda_{k+1}
    effective: np.ndarray   # lambda_k -> co-state used for the argmax
    state: np.ndarray       # xi_k -> xi_{k+1} (homogeneous part)
    inject: np.ndarray      # w -> xi_{k+1} (input part)

    @classmethod
    def build(cls, sys: StackedSystem, flow: str, dt: float) -> "_Scheme":
        n = sys.n
        eye = np.eye(n)
        if flow == "exact":
            Ad, Bd = linalg.zoh_pair(sys.AA, dt)
            back = linalg.state_transition(-sys.AA.T, dt)
            return cls(flow, dt, False, back, Bd.T @ back / dt, Ad, Bd @ sys.BB)
        h = dt / 2 if flow == "midpoint" else dt
        if h * np.linalg.norm(sys.AA, 2) >= 1.0:
            warnings.warn(f"step {dt} is large for |AA| = {np.linalg.norm(sys.AA, 2):.3g}; "
                          "the implicit systems may be ill-conditioned", RuntimeWarning, stacklevel=3)
        co = np.linalg.inv(eye + h * sys.AA.T)
        st = np.linalg.inv(eye - h * sys.AA)
        if flow == "midpoint":
            return cls(flow, h, True, 2 * co - eye, co, 2 * st - eye, 2 * h * st @ sys.BB)
        return cls(flow, h, False, co, co, st, h * st @ sys.BB)


def reach_centralized(sys: StackedSystem, cfg: ReachConfig, flow: str | None = None,
                      disturbance: str = "stacked") -> ReachResult:
    """Trace every stacked face on the grid of ``cfg`` with full knowledge.

    ``flow`` overrides ``cfg.flow``; ``"exact"`` is the matrix-exponential
    oracle.  ``disturbance`` selects the stacked or per-factor argmax.
    """
    flow = flow or cfg.flow
    scheme = _Scheme.build(sys, flow, cfg.dt)
    lam, xi, gam = _initial_arrays(sys)
    K, m, n = cfg.n_steps, len(gam), sys.n
    lams = np.empty((K + 1, m, n))
    xis = np.empty((K + 1, m, n))
    gams = np.empty((K + 1, m))
    ws = np.empty((K, m, sys.nw))
    wids = np.empty((K, m), dtype=np.int64)
    lams[0], xis[0], gams[0] = lam, xi, gam
    argmax = _stacked_argmax if disturbance == "stacked" else _product_argmax
    for k in range(K):
        eff = lam @ scheme.effective.T
        w, ids = argmax(eff @ sys.BB, sys)
        lam = lam @ scheme.costate.T
        xi = xi @ scheme.state.T + w @ scheme.inject.T
        if np.linalg.norm(lam, axis=1).min() < LAMBDA_FLOOR:
            raise ReachError(f"co-state vanished at step {k + 1}")
        lams[k + 1], xis[k + 1] = lam, xi
        gams[k + 1] = np.einsum("mn,mn->m", lam, xi)
        ws[k], wids[k] = w, ids
    return ReachResult(cfg.times, lams, xis, gams, ws, wids, flow,
                       (scheme.state, scheme.inject), stats={"mode": "centralized"})


# ------------------------------------------------------------------ distributed

def _identity_rows(block_dims: Sequence[int]) -> list[np.ndarray]:
    off = pt.block_offsets(block_dims)
    eye = np.eye(off[-1])
    return [eye[off[i]:off[i + 1]] for i in range(len(block_dims))]


def _local_initial_blocks(infos: Sequence[InformationSet]):
    """Each agent's blocks of the initial co-states and contacts, per trace.

    Traces are ordered agent by agent, each agent's faces in their own
    order, matching the stacked H-representation.  A non-owner sees a zero
    normal on its block and picks its lowest-index vertex.
    """
    owners = [(i, f) for i, info in enumerate(infos) for f in range(info.faces.face_count)]
    lam_blocks, xi_blocks = [], []
    for info in infos:
        i = info.agent_id
        nx = info.model.nx
        V = info.model.X0.v.vertices
        lb = np.zeros((nx, len(owners)))
        xb = np.zeros((nx, len(owners)))
        for j, (owner, f) in enumerate(owners):
            if owner == i:
                lb[:, j] = info.faces.normals[f]
            xb[:, j] = V[int(np.argmax(V @ lb[:, j]))]
        lam_blocks.append(lb)
        xi_blocks.append(xb)
    offsets = np.array([infos[o].faces.offsets[f] for o, f in owners])
    return lam_blocks, xi_blocks, offsets


def _blocks_of(est: np.ndarray, block_dims) -> list[np.ndarray]:
    """Agent i's own block of its own estimate: ``est[i, block_i, :]``."""
    off = pt.block_offsets(block_dims)
    return [est[i, off[i]:off[i + 1], :] for i in range(len(block_dims))]


def reach_distributed(
    agents: Sequence[InformationSet],
    schedule: GraphSchedule,
    cfg: ReachConfig,
    sys: StackedSystem | None = None,
) -> list[ReachResult]:
    """Run the fully distributed propagation; one :class:`ReachResult` per agent.

    Every agent keeps its own estimate of every co-state and contact point.
    Per step and for all traces at once:

    1. co-state: d-LE on the agent-owned rows of ``I + h AA^T``;
    2. disturbance: agents evaluate their vertex shares (or their own
       factor in ``product`` mode) and run max-consensus on the winner;
    3. contact: d-LE on the agent-owned rows of ``I - h AA``.

    ``sys`` supplies the offline disturbance vertex list for the shares and
    the step map recorded for later containment checks; the propagation
    itself reads only the agents' information sets.
    """
    if cfg.flow == "exact":
        raise ValueError("the distributed mode needs an implicit flow ('midpoint' or 'euler')")
    N = len(agents)
    if schedule.node_count != N:
        raise ValueError(f"schedule has {schedule.node_count} nodes for {N} agents")
    if not is_repeatedly_jointly_strongly_connected(schedule, schedule.period):
        warnings.warn("communication schedule is not repeatedly jointly connected",
                      RuntimeWarning, stacklevel=2)
    block_dims = agents[0].block_dims
    off = pt.block_offsets(block_dims)
    n = off[-1]
    h = cfg.dt / 2 if cfg.flow == "midpoint" else cfg.dt
    extrapolate = cfg.flow == "midpoint"

    use_shares = cfg.disturbance == "shares"
    if use_shares:
        if sys is None:
            raise ValueError("shares mode needs the offline stacked vertex list (pass sys)")
        agents = attach_vertex_shares(agents, sys)
    rounds = cfg.consensus_rounds
    if use_shares and rounds is None:
        rounds = worst_flooding_rounds(schedule) if N > 1 else 0

    own_rows = [closed_loop_block_row(info) for info in agents]
    t_rows = transpose_block_rows(agents)
    ident = _identity_rows(block_dims)
    co_rows = [ident[i] + h * t_rows[i] for i in range(N)]
    st_rows = [ident[i] - h * own_rows[i] for i in range(N)]
    B1 = [info.model.B1 for info in agents]

    lam_blocks, xi_blocks, _ = _local_initial_blocks(agents)
    m = lam_blocks[0].shape[1]
    clock = 0
    stats = {"dle_rounds": 0, "dle_solves": 0, "consensus_rounds": 0, "max_dle_rounds": 0}

    def solve(rows, rhs, warm, state, step, what):
        nonlocal clock
        p = dle.DleProblem(tuple(rows), tuple(rhs), n)
        try:
            _, rep = dle.dle_solve(p, schedule, cfg.dle_tol, cfg.dle_max_iter, clock,
                                   warm=warm, state=state, check_schedule=False)
        except dle.DleNonConvergence as exc:
            d = exc.report
            raise DistributedNonConvergence(
                f"d-LE ({what}) did not converge at step {step}: disagreement "
                f"{d.final_disagreement:.3e} after {d.iterations} rounds",
                step, -1, d) from None
        clock += rep.iterations
        stats["dle_rounds"] += rep.iterations
        stats["dle_solves"] += 1
        stats["max_dle_rounds"] = max(stats["max_dle_rounds"], rep.iterations)
        return rep.extra["state"]

    # spread the locally known blocks of lambda_0 and xi_0 (identity d-LE)
    id_state = dle.dle_init(dle.DleProblem(tuple(ident), tuple(lam_blocks), n))
    lam_est = solve(ident, lam_blocks, None, id_state, 0, "initial co-state").estimates
    xi_est = solve(ident, xi_blocks, None, id_state, 0, "initial contact").estimates

    co_state = dle.dle_init(dle.DleProblem(tuple(co_rows), tuple(np.zeros((r.shape[0], m)) for r in co_rows), n))
    st_state = dle.dle_init(dle.DleProblem(tuple(st_rows), tuple(np.zeros((r.shape[0], m)) for r in st_rows), n))

    K = cfg.n_steps
    lam_hist = np.empty((K + 1, N, m, n))
    xi_hist = np.empty((K + 1, N, m, n))
    w_hist = np.empty((K, m, sys.nw if sys is not None else sum(b.shape[1] for b in B1)))
    wid_hist = np.full((K, m), -1, dtype=np.int64)
    lam_hist[0] = lam_est.transpose(0, 2, 1)
    xi_hist[0] = xi_est.transpose(0, 2, 1)
    woff = pt.block_offsets([b.shape[1] for b in B1])

    for k in range(K):
        # 1. co-state half step
        rhs = _blocks_of(lam_est, block_dims)
        mu = solve(co_rows, rhs, lam_est, co_state, k, "co-state").estimates
        new_lam = 2 * mu - lam_est if extrapolate else mu

        # 2. extremal disturbance, every agent from its own mu estimate
        w_blocks = []
        if use_shares:
            vals = np.empty((N, m))
            ids = np.empty((N, m), dtype=np.int64)
            for i, info in enumerate(agents):
                share = info.share
                vals[i], ids[i] = consensus.local_argmax_batch(share.images @ mu[i], share.ids)
            if N > 1:
                vals, ids = consensus.max_consensus_arrays(vals, ids, schedule, rounds, clock)
                clock += rounds
                stats["consensus_rounds"] += rounds
            if np.any(ids != ids[0]):
                bad = int(np.flatnonzero((ids != ids[0]).any(axis=0))[0])
                raise DistributedNonConvergence(
                    f"max-consensus disagreed at step {k} after {rounds} rounds", k, bad)
            w_full = sys.WW.vertices[ids[0]]
            w_blocks = [w_full[:, woff[i]:woff[i + 1]] for i in range(N)]
            wid_hist[k] = ids[0]
        else:
            w_ids = np.zeros(m, dtype=np.int64)
            for i, info in enumerate(agents):
                Wv = info.model.W.vertices
                d = (B1[i].T @ mu[i, off[i]:off[i + 1], :]).T
                pick = np.argmax(d @ Wv.T, axis=1)
                w_blocks.append(Wv[pick])
                w_ids = w_ids * len(Wv) + pick
            w_full = np.hstack(w_blocks)
            wid_hist[k] = w_ids
        w_hist[k] = w_full

        # 3. contact half step
        rhs = [xi_est[i, off[i]:off[i + 1], :] + h * (B1[i] @ w_blocks[i].T) for i in range(N)]
        zeta = solve(st_rows, rhs, xi_est, st_state, k, "contact").estimates
        new_xi = 2 * zeta - xi_est if extrapolate else zeta

        lam_est, xi_est = new_lam, new_xi
        lam_hist[k + 1] = lam_est.transpose(0, 2, 1)
        xi_hist[k + 1] = xi_est.transpose(0, 2, 1)

    stats["rounds_total"] = clock
    step_map = _Scheme.build(sys, cfg.flow, cfg.dt) if sys is not None else None
    results = []
    for i in range(N):
        lams, xis = lam_hist[:, i], xi_hist[:, i]
        gams = np.einsum("kmn,kmn->km", lams, xis)
        results.append(ReachResult(
            cfg.times, lams.copy(), xis.copy(), gams, w_hist.copy(), wid_hist.copy(), cfg.flow,
            (step_map.state, step_map.inject) if step_map else None, agent=i,
            stats=dict(stats, mode="distributed")))
    return results


# ------------------------------------------------------------------ reporting

@dataclass
class AgentView:
    agent: int
    cloud: np.ndarray       # (m, n_i) contact points in the agent's coordinates
    lo: np.ndarray
    hi: np.ndarray
    flagged: list


def per_agent_views(result: ReachResult, sys: StackedSystem, k: int = -1) -> list[AgentView]:
    """Project the stacked bounds at step ``k`` onto each agent's coordinates.

    The inner cloud is the projected contact points.  The outer bound is a
    coordinate box from one LP per coordinate and direction over the stacked
    outer polytope; coordinates whose LP fails are flagged and left as NaN.
    """
    outer = result.outer(k)
    views = []
    for i in range(sys.agent_count):
        blk = sys.block(i)
        idx = range(blk.start, blk.stop)
        lo = np.full(len(idx), np.nan)
        hi = np.full(len(idx), np.nan)
        flagged = []
        for c, coord in enumerate(idx):
            e = np.zeros(sys.n)
            e[coord] = 1.0
            for sense, target in (("max", hi), ("min", lo)):
                try:
                    target[c], _ = linalg.solve_lp(linalg.LpProblem(e, outer.normals, outer.offsets, sense))
                except (linalg.InfeasibleError, linalg.UnboundedError) as exc:
                    flagged.append((coord, sense, type(exc).__name__))
        views.append(AgentView(i, result.contacts[k][:, blk].copy(), lo, hi, flagged))
    return views


@dataclass
class ContainmentReport:
    passed: bool
    n_samples: int
    worst_margin: float
    worst_sample: int
    worst_step: int
    inner_margin: float
    inner_step: int
    sample_tol: float
    inner_tol: float

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (np.floating, float)) else v)
                for k, v in self.__dict__.items()}


def sample_trajectories(sys: StackedSystem, n_samples: int, n_steps: int, seed: int):
    """Seeded initial points (hull samples per factor) and vertex-valued inputs."""
    rng = np.random.default_rng(seed)
    x0 = np.hstack([pt.hull_sample(x.v, rng, n_samples) for x in sys.X0_factors])
    w_seq = np.empty((n_samples, n_steps, sys.nw))
    for i, W in enumerate(sys.W_factors):
        picks = rng.integers(0, len(W), size=(n_samples, n_steps))
        w_seq[:, :, sys.w_block(i)] = W.vertices[picks]
    return x0, w_seq


def verify_containment(
    result: ReachResult,
    sys: StackedSystem,
    cfg: ReachConfig,
    n_samples: int = 1000,
    seed: int = 0,
    sample_tol: float = 1e-6,
    inner_tol: float = SANDWICH_TOL,
) -> ContainmentReport:
    """Check sampled trajectories and contact points against the outer bounds.

    Trajectories are integrated with the same held-input step map the
    result was computed with (``exact`` results use the ZOH pair).
    """
    from ._kernels import kernels

    inner_margin, inner_step = result.sandwich_margin()
    worst, ws, wk = np.inf, -1, -1
    if n_samples > 0:
        x0, w_seq = sample_trajectories(sys, n_samples, result.n_steps, seed)
        Ad, inject = result.step_map
        margins = kernels.trajectory_margins(
            np.ascontiguousarray(x0), np.ascontiguousarray(w_seq), np.ascontiguousarray(Ad),
            np.ascontiguousarray(inject), np.ascontiguousarray(result.lambdas),
            np.ascontiguousarray(result.gammas))
        wk, ws = np.unravel_index(int(np.argmin(margins)), margins.shape)
        worst = float(margins[wk, ws])
    passed = inner_margin >= -inner_tol and (n_samples == 0 or worst >= -sample_tol)
    return ContainmentReport(bool(passed), n_samples, worst, int(ws), int(wk), inner_margin,
                             inner_step, sample_tol, inner_tol)

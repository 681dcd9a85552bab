"""Agent dynamics, per-agent information sets and the stacked closed loop.

Agent ``i`` evolves as ``x_i' = A_i x_i + B_i u_i + B1_i w_i`` with the
neighbourhood feedback ``u_i = K_ii x_i + sum_j K_ij (x_i - x_j)``.
Expanding the feedback gives the stacked block row

    diag block   A_i + B_i K_ii + B_i sum_j K_ij
    block (i, j) -B_i K_ij          (j a neighbour)

which is what :func:`closed_loop_block_row` builds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import polytope as pt
from .graph import Graph
from .linalg import as_matrix


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class AgentModel:
    A: np.ndarray
    B: np.ndarray
    B1: np.ndarray
    K_self: np.ndarray
    X0: pt.PolytopePair
    W: pt.VPolytope
    K_neighbor: Mapping[int, np.ndarray] = field(default_factory=dict)
    rho: float | None = None

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        nx = A.shape[0]
        if A.shape != (nx, nx):
            raise ModelError(f"A must be square, got {A.shape}")
        B = as_matrix(self.B, "B").reshape(nx, -1)
        B1 = as_matrix(self.B1, "B1").reshape(nx, -1)
        K = as_matrix(self.K_self, "K_self")
        if K.shape != (B.shape[1], nx):
            raise ModelError(f"K_self must be {B.shape[1]}x{nx}, got {K.shape}")
        gains = {}
        for j, kij in dict(self.K_neighbor).items():
            kij = as_matrix(kij, f"K_neighbor[{j}]")
            if kij.shape != (B.shape[1], nx):
                raise ModelError(f"K_neighbor[{j}] must be {B.shape[1]}x{nx}, got {kij.shape}")
            gains[int(j)] = kij
        if self.X0.dim != nx:
            raise ModelError(f"X0 has dim {self.X0.dim}, state has dim {nx}")
        if self.X0.h is None or self.X0.v is None:
            raise ModelError("X0 needs both face (H) and vertex (V) representations")
        if self.W.dim != B1.shape[1]:
            raise ModelError(f"W has dim {self.W.dim}, B1 has {B1.shape[1]} columns")
        for name, val in (("A", A), ("B", B), ("B1", B1), ("K_self", K)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "K_neighbor", gains)

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nw(self) -> int:
        return self.B1.shape[1]


@dataclass(frozen=True)
class VertexShare:
    """Disturbance vertices an agent is responsible for.

    ``images`` holds ``BB @ v`` for each vertex, computed offline when the
    shares are handed out, so agents never need another agent's ``B1``.
    """

    ids: np.ndarray
    vertices: np.ndarray
    images: np.ndarray


@dataclass(frozen=True)
class InformationSet:
    agent_id: int
    model: AgentModel
    neighbors: tuple
    block_dims: tuple
    share: VertexShare | None = None

    @property
    def faces(self) -> pt.HPolytope:
        return self.model.X0.h


def build_information_sets(models: Sequence[AgentModel], graph: Graph) -> list[InformationSet]:
    if graph.node_count != len(models):
        raise ModelError(f"graph has {graph.node_count} nodes for {len(models)} agents")
    dims = tuple(m.nx for m in models)
    return [InformationSet(i, m, tuple(graph.neighbors(i)), dims) for i, m in enumerate(models)]


def closed_loop_block_row(info: InformationSet, graph: Graph | None = None) -> np.ndarray:
    m = info.model
    neighbors = info.neighbors if graph is None else tuple(graph.neighbors(info.agent_id))
    off = pt.block_offsets(info.block_dims)
    row = np.zeros((m.nx, off[-1]))
    diag = m.A + m.B @ m.K_self
    for j in neighbors:
        if j not in m.K_neighbor:
            raise ModelError(f"agent {info.agent_id}: no gain for neighbour {j}")
        if info.block_dims[j] != m.nx:
            raise ModelError(f"agent {info.agent_id}: neighbour {j} has state dim "
                             f"{info.block_dims[j]}, expected {m.nx}")
        kij = m.B @ m.K_neighbor[j]
        diag = diag + kij
        row[:, off[j]:off[j + 1]] = -kij
    i = info.agent_id
    row[:, off[i]:off[i + 1]] = diag
    return row


def coupling_block(info: InformationSet, to_agent: int) -> np.ndarray:
    """What agent ``info.agent_id`` tells neighbour ``to_agent`` at setup.

    This is the stacked block ``AA[sender, receiver] = -B_s K_sr``; the
    receiver needs it to own the rows of the transposed system.
    """
    m = info.model
    if to_agent not in info.neighbors:
        raise ModelError(f"agent {to_agent} is not a neighbour of {info.agent_id}")
    return -(m.B @ m.K_neighbor[to_agent])


def transpose_block_rows(infos: Sequence[InformationSet]) -> list[np.ndarray]:
    """Block rows of ``AA.T`` assembled from one setup exchange.

    Agent ``i`` owns ``AA[:, block_i].T``: its own diagonal block transposed
    plus, for every neighbour ``j``, the block ``AA[j, i]`` received from j.
    """
    out = []
    for info in infos:
        i = info.agent_id
        off = pt.block_offsets(info.block_dims)
        own = closed_loop_block_row(info)
        rows = np.zeros((info.model.nx, off[-1]))
        rows[:, off[i]:off[i + 1]] = own[:, off[i]:off[i + 1]].T
        for j in info.neighbors:
            received = coupling_block(infos[j], i)
            rows[:, off[j]:off[j + 1]] = received.T
        out.append(rows)
    return out


@dataclass(frozen=True)
class StackedSystem:
    AA: np.ndarray
    BB: np.ndarray
    Xi0: pt.PolytopePair
    WW: pt.VPolytope | None
    block_dims: tuple
    w_dims: tuple
    X0_factors: tuple
    W_factors: tuple

    @property
    def n(self) -> int:
        return self.AA.shape[0]

    @property
    def nw(self) -> int:
        return self.BB.shape[1]

    @property
    def agent_count(self) -> int:
        return len(self.block_dims)

    def block(self, i: int) -> slice:
        off = pt.block_offsets(self.block_dims)
        return slice(off[i], off[i + 1])

    def w_block(self, i: int) -> slice:
        off = pt.block_offsets(self.w_dims)
        return slice(off[i], off[i + 1])


def assemble_stacked(
    agents: Sequence[InformationSet],
    graph: Graph,
    vertex_cap: int = pt.VERTEX_CAP,
    stack_w: bool = True,
) -> StackedSystem:
    """Centralised view of the MAS (the oracle's input).

    ``stack_w=False`` skips the Cartesian product of disturbance vertices,
    for systems that only ever use per-factor argmaxes.
    """
    if graph.node_count != len(agents):
        raise ModelError(f"graph has {graph.node_count} nodes for {len(agents)} agents")
    AA = np.vstack([closed_loop_block_row(info, graph) for info in agents])
    nw = [info.model.nw for info in agents]
    BB = np.zeros((AA.shape[0], sum(nw)))
    off, woff = pt.block_offsets(agents[0].block_dims), pt.block_offsets(nw)
    for i, info in enumerate(agents):
        BB[off[i]:off[i + 1], woff[i]:woff[i + 1]] = info.model.B1
    X0s = tuple(info.model.X0 for info in agents)
    Ws = tuple(info.model.W for info in agents)
    Xi0 = pt.PolytopePair(
        pt.product_h([x.h for x in X0s]),
        pt.product([x.v for x in X0s], cap=vertex_cap),
    )
    WW = pt.product(Ws, cap=vertex_cap) if stack_w else None
    return StackedSystem(AA, BB, Xi0, WW, tuple(agents[0].block_dims), tuple(nw), X0s, Ws)


def assign_vertex_shares(agent_count: int, vertex_count: int) -> list[np.ndarray]:
    """Round-robin partition of vertex ids across agents."""
    return [np.arange(i, vertex_count, agent_count, dtype=np.int64) for i in range(agent_count)]


def attach_vertex_shares(agents: Sequence[InformationSet], sys: StackedSystem) -> list[InformationSet]:
    if sys.WW is None:
        raise ModelError("stacked disturbance vertices were not assembled")
    parts = assign_vertex_shares(len(agents), len(sys.WW))
    out = []
    for info, ids in zip(agents, parts):
        verts = sys.WW.vertices[ids]
        out.append(replace(info, share=VertexShare(ids, verts, verts @ sys.BB.T)))
    return out

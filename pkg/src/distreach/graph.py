"""Undirected communication graphs and round-indexed graph schedules.

Nodes are labelled ``0 .. node_count - 1``.  Edges are stored as sorted
pairs without self-loops; self-loops are implied wherever an agent keeps its
own value between rounds (composition, flooding bounds).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs or graph-dependent preconditions."""


@dataclass(frozen=True)
class Graph:
    node_count: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.node_count < 1:
            raise GraphError("node_count must be positive")
        normalized = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise GraphError(f"edge ({i}, {j}) out of range for {self.node_count} nodes")
            if i == j:
                continue
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[Sequence[int]]) -> "Graph":
        return cls(node_count, frozenset(tuple(e) for e in edges))

    def neighbors(self, i: int) -> list[int]:
        out = [b for a, b in self.edges if a == i] + [a for a, b in self.edges if b == i]
        return sorted(out)

    def neighbor_lists(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.node_count)]
        for a, b in self.edges:
            nbrs[a].append(b)
            nbrs[b].append(a)
        return [sorted(n) for n in nbrs]

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Neighbour lists as ``(indptr, indices)`` int64 arrays."""
        nbrs = self.neighbor_lists()
        indptr = np.zeros(self.node_count + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(n) for n in nbrs])
        indices = np.array([j for n in nbrs for j in n], dtype=np.int64)
        return indptr, indices

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> Graph:
    if n < 3:
        return path_graph(n)
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def star_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(0, i) for i in range(1, n)])


def complete_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def random_tree(n: int, rng: np.random.Generator) -> Graph:
    return Graph.from_edges(n, [(i, int(rng.integers(0, i))) for i in range(1, n)])


def adjacency(g: Graph, self_loops: bool = False) -> np.ndarray:
    adj = np.zeros((g.node_count, g.node_count))
    for i, j in g.edges:
        adj[i, j] = adj[j, i] = 1.0
    if self_loops:
        adj += np.eye(g.node_count)
    return adj


def degree(g: Graph) -> np.ndarray:
    return np.diag(adjacency(g).sum(axis=1))


def laplacian(g: Graph) -> np.ndarray:
    return degree(g) - adjacency(g)


def _bfs_depths(nbrs: list[list[int]], source: int) -> list[int]:
    depth = [-1] * len(nbrs)
    depth[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if depth[v] < 0:
                depth[v] = depth[u] + 1
                queue.append(v)
    return depth


def is_connected(g: Graph) -> bool:
    return min(_bfs_depths(g.neighbor_lists(), 0)) >= 0


def diameter(g: Graph) -> int:
    nbrs = g.neighbor_lists()
    best = 0
    for s in range(g.node_count):
        depth = _bfs_depths(nbrs, s)
        if min(depth) < 0:
            raise GraphError("graph not connected")
        best = max(best, max(depth))
    return best


def compose(g1: Graph, g2: Graph) -> np.ndarray:
    """Directed support of ``adj(g1) @ adj(g2)`` with unit self-loops.

    Returns a boolean matrix ``S`` where ``S[i, j]`` marks the edge i -> j.
    """
    if g1.node_count != g2.node_count:
        raise GraphError("cannot compose graphs of different sizes")
    return (adjacency(g1, self_loops=True) @ adjacency(g2, self_loops=True)) != 0


def compose_many(graphs: Sequence[Graph]) -> np.ndarray:
    if not graphs:
        raise GraphError("nothing to compose")
    n = graphs[0].node_count
    support = np.eye(n, dtype=bool)
    for g in graphs:
        if g.node_count != n:
            raise GraphError("cannot compose graphs of different sizes")
        support = (support.astype(np.int64) @ adjacency(g, self_loops=True).astype(np.int64)) != 0
    return support


def is_strongly_connected_support(support: np.ndarray) -> bool:
    """Directed reachability from node 0 on both ``support`` and its transpose."""
    n = support.shape[0]

    def reach_all(adj):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(adj[u]):
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        return bool(seen.all())

    return reach_all(support) and reach_all(support.T)


def support_diameter(support: np.ndarray) -> int:
    """Longest directed shortest path in a support graph (self-loops ignored)."""
    n = support.shape[0]
    best = 0
    for s in range(n):
        depth = np.full(n, -1)
        depth[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in np.flatnonzero(support[u]):
                if depth[v] < 0:
                    depth[v] = depth[u] + 1
                    queue.append(v)
        if (depth < 0).any():
            raise GraphError("graph not connected")
        best = max(best, int(depth.max()))
    return best


@dataclass(frozen=True)
class GraphSchedule:
    """One graph per synchronous round.

    ``mode="static"`` holds a single graph for every round; ``"periodic"``
    cycles through ``graphs`` with period ``len(graphs)``.
    """

    graphs: tuple
    mode: str = "static"

    def __post_init__(self):
        graphs = tuple(self.graphs)
        if not graphs:
            raise GraphError("schedule needs at least one graph")
        if self.mode not in ("static", "periodic"):
            raise GraphError(f"unknown schedule mode {self.mode!r}")
        if self.mode == "static" and len(graphs) != 1:
            raise GraphError("static schedule holds exactly one graph")
        n = graphs[0].node_count
        if any(g.node_count != n for g in graphs):
            raise GraphError("all graphs in a schedule must share node_count")
        object.__setattr__(self, "graphs", graphs)

    @classmethod
    def static(cls, g: Graph) -> "GraphSchedule":
        return cls((g,), "static")

    @classmethod
    def periodic(cls, graphs: Sequence[Graph]) -> "GraphSchedule":
        return cls(tuple(graphs), "periodic")

    @property
    def node_count(self) -> int:
        return self.graphs[0].node_count

    @property
    def period(self) -> int:
        return len(self.graphs)

    def graph_at(self, round_index: int) -> Graph:
        return self.graphs[round_index % self.period]

    def csr_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked CSR neighbour tables for kernel consumption.

        Returns ``(indptr, indices)``: ``indptr`` has shape
        ``(period, N + 1)`` with per-graph offsets already shifted into the
        flat ``indices`` array.
        """
        n = self.node_count
        indptr = np.zeros((self.period, n + 1), dtype=np.int64)
        chunks = []
        base = 0
        for p, g in enumerate(self.graphs):
            ip, idx = g.csr()
            indptr[p] = ip + base
            chunks.append(idx)
            base += len(idx)
        indices = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
        return indptr, indices.astype(np.int64)


def is_repeatedly_jointly_strongly_connected(s: GraphSchedule, window: int) -> bool:
    if window < 1:
        raise GraphError("window must be >= 1")
    if s.mode == "static":
        return is_connected(s.graphs[0])
    # windows starting at multiples of `window` repeat with period lcm(window, period)
    span = np.lcm(window, s.period)
    for start in range(0, span, window):
        support = compose_many([s.graph_at(start + k) for k in range(window)])
        if not is_strongly_connected_support(support):
            return False
    return True


def window_supports(s: GraphSchedule, window: int) -> list[np.ndarray]:
    """Compositions over each window-aligned interval of one schedule cycle."""
    span = window if s.mode == "static" else int(np.lcm(window, s.period))
    return [compose_many([s.graph_at(start + k) for k in range(window)])
            for start in range(0, span, window)]


def flooding_rounds(s: GraphSchedule, start: int = 0, max_rounds: int | None = None) -> int:
    """Rounds until every node has heard (transitively) from every node.

    Counts from round ``start``.  Raises :class:`GraphError` when the schedule
    never floods within ``max_rounds`` (default: ``N * period`` rounds).
    """
    n = s.node_count
    if n == 1:
        return 0
    limit = max_rounds if max_rounds is not None else n * s.period + 1
    informed = np.eye(n, dtype=bool)
    for r in range(limit):
        adj = adjacency(s.graph_at(start + r), self_loops=True) != 0
        informed = (informed.astype(np.int64) @ adj.astype(np.int64)) != 0
        if informed.all():
            return r + 1
    raise GraphError("schedule is not jointly connected: flooding never completes")


def consensus_round_bound(s: GraphSchedule, window: int | None = None) -> int:
    """Round budget that guarantees max-consensus on ``s``.

    Static graphs need ``diameter`` rounds.  For a time-varying schedule the
    bound is ``window`` times the number of window-compositions needed to
    flood the composed sequence, maximised over window-aligned start offsets.
    """
    if s.mode == "static":
        return diameter(s.graphs[0])
    window = window or s.period
    supports = window_supports(s, window)
    n = s.node_count
    worst = 0
    for offset in range(len(supports)):
        informed = np.eye(n, dtype=bool)
        count = 0
        while not informed.all():
            if count > n * len(supports):
                raise GraphError("schedule is not repeatedly jointly connected")
            sup = supports[(offset + count) % len(supports)]
            informed = (informed.astype(np.int64) @ sup.astype(np.int64)) != 0
            count += 1
        worst = max(worst, count)
    return worst * window


def worst_flooding_rounds(s: GraphSchedule) -> int:
    """:func:`flooding_rounds` maximised over every start offset of the cycle."""
    return max(flooding_rounds(s, start) for start in range(s.period))

"""Max/argmax consensus used to agree on the extremal disturbance vertex.

A candidate is ``(value, id, payload)``; candidates compare by value, then by
the *lower* id, so exact ties resolve the same way on every agent.  Agents
with nothing to offer hold a ``-inf`` sentinel that loses every comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import kernels
from .graph import Graph, GraphError, GraphSchedule, is_connected

SENTINEL_ID = np.iinfo(np.int64).max


@dataclass(frozen=True)
class Candidate:
    value: float
    id: int
    payload: np.ndarray | None = None

    def beats(self, other: "Candidate") -> bool:
        return self.value > other.value or (self.value == other.value and self.id < other.id)

    @property
    def is_sentinel(self) -> bool:
        return self.value == -np.inf


SENTINEL = Candidate(-np.inf, SENTINEL_ID, None)


def local_argmax(vertices, ids, direction) -> Candidate:
    """Best of an agent's vertex share under ``<direction, v>``.

    ``vertices`` is ``(k, d)`` with matching global ``ids``.
    """
    v = np.asarray(vertices, dtype=float)
    ids = np.asarray(ids, dtype=np.int64).ravel()
    d = np.asarray(direction, dtype=float).ravel()
    if v.size == 0 or ids.size == 0:
        return SENTINEL
    v = v.reshape(ids.size, -1)
    if v.shape[1] != d.size:
        raise ValueError(f"direction has dim {d.size}, vertices have dim {v.shape[1]}")
    values = v @ d
    best = values.max()
    tied = np.flatnonzero(values == best)
    k = tied[np.argmin(ids[tied])]
    return Candidate(float(values[k]), int(ids[k]), v[k].copy())


def local_argmax_batch(values: np.ndarray, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise argmax of ``values`` (shares x queries); lowest id breaks ties."""
    if values.shape[0] == 0:
        q = values.shape[1]
        return np.full(q, -np.inf), np.full(q, SENTINEL_ID, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    v = values[order]
    k = np.argmax(v, axis=0)
    return v[k, np.arange(v.shape[1])], ids[order][k]


def _pack(candidates: Sequence[Candidate]):
    values = np.array([[c.value] for c in candidates], dtype=float)
    ids = np.array([[c.id] for c in candidates], dtype=np.int64)
    payloads = {c.id: c.payload for c in candidates}
    return values, ids, payloads


def _unpack(values, ids, payloads) -> list[Candidate]:
    return [Candidate(float(v), int(i), payloads.get(int(i))) for v, i in zip(values[:, 0], ids[:, 0])]


def consensus_round_arrays(values: np.ndarray, ids: np.ndarray, g: Graph):
    """One synchronous round on ``(N, m)`` value/id arrays (m parallel queries)."""
    indptr, indices = g.csr()
    return kernels.consensus_round(values, ids, indptr, indices)


def max_consensus_round(candidates: Sequence[Candidate], g: Graph) -> list[Candidate]:
    values, ids, payloads = _pack(candidates)
    return _unpack(*consensus_round_arrays(values, ids, g), payloads)


def max_consensus_arrays(values, ids, schedule: GraphSchedule, rounds: int, start_round: int = 0):
    if schedule.mode == "static" and not is_connected(schedule.graphs[0]):
        raise GraphError("graph not connected: max-consensus cannot reach agreement")
    values = np.ascontiguousarray(values, dtype=float)
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    tables = [g.csr() for g in schedule.graphs]
    for r in range(rounds):
        indptr, indices = tables[(start_round + r) % schedule.period]
        values, ids = kernels.consensus_round(values, ids, indptr, indices)
    return values, ids


def max_consensus(
    candidates: Sequence[Candidate],
    schedule: GraphSchedule | Graph,
    rounds: int,
    start_round: int = 0,
) -> list[Candidate]:
    if isinstance(schedule, Graph):
        schedule = GraphSchedule.static(schedule)
    values, ids, payloads = _pack(candidates)
    values, ids = max_consensus_arrays(values, ids, schedule, rounds, start_round)
    return _unpack(values, ids, payloads)


def agreement_round(values, ids, schedule: GraphSchedule, max_rounds: int, start_round: int = 0) -> int:
    """First round after which every agent holds the global winner (-1 if never)."""
    values = np.asarray(values, dtype=float).reshape(len(values), -1)
    ids = np.asarray(ids, dtype=np.int64).reshape(len(ids), -1)
    order = np.lexsort((ids, -values), axis=0)[0]
    cols = np.arange(values.shape[1])
    target_v, target_id = values[order, cols], ids[order, cols]

    def agreed(v, i):
        return bool(np.all(v == target_v) and np.all(i == target_id))

    if agreed(values, ids):
        return 0
    tables = [g.csr() for g in schedule.graphs]
    for r in range(max_rounds):
        indptr, indices = tables[(start_round + r) % schedule.period]
        values, ids = kernels.consensus_round(values, ids, indptr, indices)
        if agreed(values, ids):
            return r + 1
    return -1

"""Synchronous round-based message passing over a graph schedule.

A round has three phases: every agent emits one broadcast payload from its
current state, the harness delivers it along the edges of that round's
graph, and every agent steps on its inbox.  No agent can observe a state
produced in the same round, so the execution order of agents never matters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from . import dle
from .consensus import Candidate
from .graph import Graph, GraphSchedule


class AgentProtocol(Protocol):
    def emit(self, agent: int, state: Any) -> Any: ...

    def step(self, agent: int, state: Any, inbox: dict[int, Any]) -> Any: ...


@dataclass
class Outcome:
    states: list
    rounds: int
    converged: bool
    counts: list = field(default_factory=list)      # per round: {(src, dst): n}
    log: list = field(default_factory=list)         # (round, src, dst, size)


def _payload_size(payload) -> int:
    if isinstance(payload, np.ndarray):
        return int(payload.size)
    if isinstance(payload, Candidate):
        return 2 + (0 if payload.payload is None else int(np.size(payload.payload)))
    return 1


class RoundEngine:
    def __init__(self, schedule: GraphSchedule | Graph, record_log: bool = False):
        if isinstance(schedule, Graph):
            schedule = GraphSchedule.static(schedule)
        self.schedule = schedule
        self.round = 0
        self.record_log = record_log
        self.inboxes: list[dict] = [{} for _ in range(schedule.node_count)]
        self.counts: list[dict] = []
        self.log: list[tuple] = []

    def run_round(self, states: list, protocol: AgentProtocol, order: Sequence[int] | None = None) -> list:
        n = self.schedule.node_count
        order = range(n) if order is None else order
        g = self.schedule.graph_at(self.round)
        nbrs = g.neighbor_lists()
        outbox = {i: protocol.emit(i, states[i]) for i in order}
        self.inboxes = [{} for _ in range(n)]
        tally = {}
        for i in order:
            payload = outbox[i]
            if payload is None:
                continue
            for j in nbrs[i]:
                self.inboxes[j][i] = payload
                tally[(i, j)] = tally.get((i, j), 0) + 1
                if self.record_log:
                    self.log.append((self.round, i, j, _payload_size(payload)))
        self.counts.append(tally)
        new_states = list(states)
        for i in order:
            new_states[i] = protocol.step(i, states[i], self.inboxes[i])
        self.round += 1
        return new_states


def run_protocol(
    states: Sequence,
    schedule: GraphSchedule | Graph,
    protocol: AgentProtocol,
    stop: Callable[[list], bool] | None = None,
    max_rounds: int = 1000,
    start_round: int = 0,
    order: Sequence[int] | None = None,
    record_log: bool = False,
) -> Outcome:
    """Run rounds until ``stop(states)`` holds (checked before each round).

    Exhausting ``max_rounds`` is reported through ``converged=False``.
    """
    engine = RoundEngine(schedule, record_log)
    engine.round = start_round
    states = list(states)
    used = 0
    converged = stop is None
    while True:
        if stop is not None and stop(states):
            converged = True
            break
        if used >= max_rounds:
            break
        states = engine.run_round(states, protocol, order)
        used += 1
    return Outcome(states, used, converged, engine.counts, engine.log)


def message_counts(outcome: Outcome) -> dict:
    per_round = [sum(c.values()) for c in outcome.counts]
    per_edge: dict = {}
    for c in outcome.counts:
        for edge, k in c.items():
            per_edge[edge] = per_edge.get(edge, 0) + k
    return {"per_round": per_round, "per_edge": per_edge, "total": sum(per_round)}


def export_log(outcome: Outcome, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r, src, dst, size in outcome.log:
            fh.write(json.dumps({"round": r, "from": src, "to": dst, "size": size}) + "\n")


# ------------------------------------------------------------------ protocols

class EchoProtocol:
    """Each agent stores what its neighbours broadcast."""

    def emit(self, agent, state):
        return state["value"]

    def step(self, agent, state, inbox):
        return {"value": state["value"], "heard": dict(inbox)}


class MaxConsensusProtocol:
    def emit(self, agent, state: Candidate):
        return state

    def step(self, agent, state: Candidate, inbox):
        best = state
        for c in inbox.values():
            if c.beats(best):
                best = c
        return best


def all_agree(states: list[Candidate]) -> bool:
    return all(s.value == states[0].value and s.id == states[0].id for s in states)


class DleProtocol:
    """Projection-consensus step; each agent holds only its own projector."""

    def __init__(self, projectors: Sequence[np.ndarray]):
        self.projectors = list(projectors)

    def emit(self, agent, state):
        return state

    def step(self, agent, state, inbox):
        if not inbox:
            return state
        mean = sum(inbox[j] for j in sorted(inbox)) / len(inbox)
        return state - self.projectors[agent] @ (state - mean)


def dle_stop(tol: float) -> Callable[[list], bool]:
    def stop(states):
        X = np.stack(states)
        return bool((X.max(axis=0) - X.min(axis=0)).max() < tol) if len(states) > 1 else True
    return stop


def run_dle(p: dle.DleProblem, schedule, tol: float, max_rounds: int, record_log: bool = False) -> Outcome:
    """The d-LE of :mod:`distreach.dle` executed through the message harness."""
    state = dle.dle_init(p)
    states = [state.estimates[i, :, 0] if state.vector else state.estimates[i]
              for i in range(p.agent_count)]
    return run_protocol(states, schedule, DleProtocol(state.projectors), dle_stop(tol),
                        max_rounds, record_log=record_log)

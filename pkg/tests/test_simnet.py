from __future__ import annotations

import json

import numpy as np
from hypothesis import given, strategies as st

from distreach import dle, graph as gr, simnet
from distreach.consensus import Candidate
from oracles import well_conditioned


def test_echo_on_k2():
    out = simnet.run_protocol([{"value": "a"}, {"value": "b"}], gr.complete_graph(2),
                              simnet.EchoProtocol(), max_rounds=1)
    assert out.rounds == 1
    assert out.states[0]["heard"] == {1: "b"} and out.states[1]["heard"] == {0: "a"}


def test_max_consensus_stops_at_diameter():
    states = [Candidate(3.0, 0), Candidate(1.0, 1), Candidate(2.0, 2)]
    out = simnet.run_protocol(states, gr.path_graph(3), simnet.MaxConsensusProtocol(), simnet.all_agree, 50)
    assert out.converged and out.rounds == 2
    states = [Candidate(1.0, 0), Candidate(1.0, 1), Candidate(3.0, 2)]
    assert simnet.run_protocol(states, gr.path_graph(3), simnet.MaxConsensusProtocol(),
                               simnet.all_agree, 50).rounds == 2


def test_dle_rounds_match_dle_solve():
    rng = np.random.default_rng(3)
    A = well_conditioned(rng, 4)
    b = rng.standard_normal(4)
    p = dle.DleProblem.split(A, b, [[0, 2], [1, 3]])
    g = gr.path_graph(2)
    _, rep = dle.dle_solve(p, g, tol=1e-10)
    out = simnet.run_dle(p, g, 1e-10, 10_000)
    assert out.converged and out.rounds == rep.iterations
    np.testing.assert_allclose(np.stack(out.states), np.tile(np.linalg.solve(A, b), (2, 1)), atol=1e-8)


def test_dle_rounds_match_on_alternating_schedule():
    rng = np.random.default_rng(4)
    A = well_conditioned(rng, 3)
    b = rng.standard_normal(3)
    p = dle.DleProblem.split(A, b, [[0], [1], [2]])
    sched = gr.GraphSchedule.periodic([gr.Graph.from_edges(3, [(0, 1)]), gr.Graph.from_edges(3, [(1, 2)])])
    _, rep = dle.dle_solve(p, sched, tol=1e-9)
    assert simnet.run_dle(p, sched, 1e-9, 10_000).rounds == rep.iterations


def test_max_rounds_is_an_outcome_not_a_crash():
    p = dle.DleProblem.split(np.eye(2), [1, 2], [[0], [1]])
    out = simnet.run_dle(p, gr.Graph(2, ()), 1e-10, 25)
    assert not out.converged and out.rounds == 25


def test_message_counts():
    empty = simnet.run_protocol([Candidate(0.0, 0)], gr.Graph(1, ()), simnet.MaxConsensusProtocol(), max_rounds=0)
    c = simnet.message_counts(empty)
    assert c == {"per_round": [], "per_edge": {}, "total": 0}
    k3 = simnet.run_protocol([{"value": i} for i in range(3)], gr.complete_graph(3), simnet.EchoProtocol(),
                             max_rounds=1)
    assert simnet.message_counts(k3)["per_round"] == [6]
    sched = gr.GraphSchedule.periodic([gr.Graph.from_edges(3, [(0, 1)]), gr.Graph(3, ()),
                                       gr.Graph.from_edges(3, [(0, 1), (1, 2)])])
    alt = simnet.run_protocol([{"value": i} for i in range(3)], sched, simnet.EchoProtocol(), max_rounds=4)
    counts = simnet.message_counts(alt)
    assert counts["per_round"] == [2, 0, 4, 2]
    assert counts["per_edge"][(0, 1)] == 3 and counts["per_edge"][(2, 1)] == 1


def test_inbox_is_cleared_each_round():
    sched = gr.GraphSchedule.periodic([gr.complete_graph(2), gr.Graph(2, ())])
    out = simnet.run_protocol([{"value": 1}, {"value": 2}], sched, simnet.EchoProtocol(), max_rounds=2)
    assert out.states[0]["heard"] == {}


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_order_independence(seed, N):
    rng = np.random.default_rng(seed)
    g = gr.random_tree(N, rng)
    A = well_conditioned(rng, N)
    p = dle.DleProblem.split(A, rng.standard_normal(N), [[i] for i in range(N)])
    s = dle.dle_init(p)
    states = [s.estimates[i, :, 0] for i in range(N)]
    proto = simnet.DleProtocol(s.projectors)
    a = simnet.run_protocol(states, g, proto, max_rounds=7, record_log=True)
    b = simnet.run_protocol(states, g, proto, max_rounds=7, order=list(rng.permutation(N)), record_log=True)
    assert all(np.array_equal(x, y) for x, y in zip(a.states, b.states))
    assert simnet.message_counts(a) == simnet.message_counts(b)
    assert sorted(a.log) == sorted(b.log)


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_isolation_from_message_log(seed, N):
    rng = np.random.default_rng(seed)
    sched = gr.GraphSchedule.periodic([gr.random_tree(N, rng), gr.Graph(N, ()), gr.random_tree(N, rng)])
    out = simnet.run_protocol([{"value": i} for i in range(N)], sched, simnet.EchoProtocol(),
                              max_rounds=5, record_log=True)
    for r, src, dst, _ in out.log:
        assert dst in sched.graph_at(r).neighbors(src)


def test_log_export(tmp_path):
    out = simnet.run_protocol([{"value": 1}, {"value": 2}], gr.complete_graph(2), simnet.EchoProtocol(),
                              max_rounds=1, record_log=True)
    path = tmp_path / "log.jsonl"
    simnet.export_log(out, path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows == [{"round": 0, "from": 0, "to": 1, "size": 1}, {"round": 0, "from": 1, "to": 0, "size": 1}]

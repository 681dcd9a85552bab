from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from distreach import consensus as cs, graph as gr
from oracles import simulate_max_consensus


def cands(values, ids=None):
    ids = range(len(values)) if ids is None else ids
    return [cs.Candidate(float(v), int(i)) for v, i in zip(values, ids)]


def test_local_argmax_examples():
    c = cs.local_argmax([[1, 0], [0, 1]], [0, 1], [1, 0])
    assert (c.value, c.id) == (1, 0)
    assert cs.local_argmax(np.zeros((0, 2)), [], [1, 0]) == cs.SENTINEL
    c = cs.local_argmax([[3, 1], [0, 1]], [7, 2], [0, 0])
    assert (c.value, c.id) == (0, 2)
    with pytest.raises(ValueError):
        cs.local_argmax([[1, 0]], [0], [1, 0, 0])


def test_round_examples():
    p3 = gr.path_graph(3)
    r1 = cs.max_consensus_round(cands([3, 1, 2]), p3)
    assert [c.value for c in r1] == [3, 3, 2]
    r2 = cs.max_consensus_round(r1, p3)
    assert [c.value for c in r2] == [3, 3, 3]
    tie = cs.max_consensus(cands([5, 5, 5], [4, 1, 9]), p3, 2)
    assert all(c.id == 1 for c in tie)
    star = gr.star_graph(5)
    out = cs.max_consensus(cands([0, 0, 0, 0, 9]), star, 2)
    assert all(c.value == 9 for c in out)


def test_max_consensus_examples():
    out = cs.max_consensus(cands([1, 7, 3]), gr.complete_graph(3), 1)
    assert all(c.value == 7 for c in out)
    vals = [9, 0, 0, 0, 0]
    assert all(c.value == 9 for c in cs.max_consensus(cands(vals), gr.path_graph(5), 4))
    assert not all(c.value == 9 for c in cs.max_consensus(cands(vals), gr.path_graph(5), 3))
    alt = gr.GraphSchedule.periodic([gr.Graph.from_edges(3, [(0, 1)]), gr.Graph.from_edges(3, [(1, 2)])])
    for start in (0, 1):
        for pos in range(3):
            v = [0.0] * 3
            v[pos] = 1.0
            r = cs.agreement_round(v, list(range(3)), alt, 10, start)
            hist = simulate_max_consensus(v, range(3), [[(0, 1)], [(1, 2)]][start:] + [[(0, 1)], [(1, 2)]][:start], 10)
            assert r == next(k for k, h in enumerate(hist) if len(set(h)) == 1)
            assert r <= 4


def test_disconnected_static_graph_rejected():
    with pytest.raises(gr.GraphError):
        cs.max_consensus(cands([1, 2]), gr.Graph(2, ()), 3)


def test_sentinel_loses():
    out = cs.max_consensus([cs.SENTINEL, cs.Candidate(-1e300, 5)], gr.path_graph(2), 1)
    assert all(c.id == 5 for c in out)


def test_payload_travels_with_winner():
    c = [cs.Candidate(1.0, 0, np.array([1.0])), cs.Candidate(2.0, 1, np.array([2.0]))]
    out = cs.max_consensus(c, gr.path_graph(2), 1)
    assert all(np.array_equal(x.payload, [2.0]) for x in out)


@given(st.integers(0, 10_000), st.integers(1, 7))
def test_monotone_and_exact_after_bound(seed, N):
    rng = np.random.default_rng(seed)
    g = gr.random_tree(N, rng)
    values = rng.integers(-3, 4, N).astype(float)
    ids = rng.permutation(N)
    v = values[:, None].copy()
    i = ids[:, None].copy()
    bound = gr.diameter(g)
    for _ in range(bound):
        nv, ni = cs.consensus_round_arrays(v, i, g)
        assert np.all(nv >= v)
        v, i = nv, ni
    best = max(zip(values, -ids))
    assert np.all(v[:, 0] == best[0]) and np.all(i[:, 0] == -best[1])


@given(st.integers(2, 8))
def test_path_bound_is_tight(n):
    g = gr.GraphSchedule.static(gr.path_graph(n))
    v = np.zeros(n)
    v[0] = 1
    assert cs.agreement_round(v, np.arange(n), g, 3 * n) == n - 1


def test_batch_argmax_tie_breaks_by_id():
    vals = np.array([[1.0, 0.0], [1.0, 2.0], [0.5, 2.0]])
    ids = np.array([9, 3, 1])
    v, i = cs.local_argmax_batch(vals, ids)
    assert v.tolist() == [1.0, 2.0] and i.tolist() == [3, 1]
    v, i = cs.local_argmax_batch(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    assert np.all(v == -np.inf) and np.all(i == cs.SENTINEL_ID)

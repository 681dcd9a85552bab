from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from distreach import dle, graph as gr
from oracles import lstsq_min_norm, well_conditioned


def split_rows(n, N):
    return [list(range(i, n, N)) for i in range(N)]


def test_init_examples():
    p = dle.DleProblem((np.zeros((0, 2)), np.eye(2), [[1, 1]]), (np.zeros(0), [4, 5], [2]), 2)
    s = dle.dle_init(p)
    np.testing.assert_array_equal(s.solutions()[0], [0, 0])
    np.testing.assert_array_equal(s.projectors[0], np.eye(2))
    np.testing.assert_allclose(s.solutions()[1], [4, 5])
    np.testing.assert_allclose(s.projectors[1], np.zeros((2, 2)), atol=1e-15)
    np.testing.assert_allclose(s.solutions()[2], lstsq_min_norm([[1, 1]], [2]))
    np.testing.assert_allclose(s.solutions()[2], [1, 1])


def test_inconsistent_agent_is_named():
    p = dle.DleProblem(([[1, 0]], [[1, 1], [2, 2]]), ([1], [1, 3]), 2)
    with pytest.raises(dle.DleInconsistentAgent) as exc:
        dle.dle_init(p)
    assert exc.value.agent == 1


def test_step_examples():
    p = dle.DleProblem.split(np.eye(2), [3, 5], [[0], [1]])
    s = dle.dle_init(p)
    g = gr.complete_graph(2)
    for _ in range(200):
        s = dle.dle_step(s, g)
    np.testing.assert_allclose(s.solutions(), [[3, 5], [3, 5]], atol=1e-8)
    fixed = dle.dle_step(s, g)
    np.testing.assert_allclose(fixed.solutions(), s.solutions(), atol=1e-12)
    single = dle.dle_init(dle.DleProblem((np.array([[2.0, 1], [1, 1]]),), (np.array([1.0, 2]),), 2))
    np.testing.assert_array_equal(dle.dle_step(single, gr.Graph(1, ())).solutions(), single.solutions())


def test_solve_invertible_on_cycle():
    rng = np.random.default_rng(4)
    A = well_conditioned(rng, 4)
    b = rng.standard_normal(4)
    x, rep = dle.dle_solve(dle.DleProblem.split(A, b, split_rows(4, 4)), gr.cycle_graph(4))
    np.testing.assert_allclose(x, np.tile(np.linalg.solve(A, b), (4, 1)), atol=1e-6)
    assert rep.converged and rep.iterations == len(rep.disagreement) - 1


def test_solve_underdetermined():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((3, 6))
    b = rng.standard_normal(3)
    x, _ = dle.dle_solve(dle.DleProblem.split(A, b, [[0], [1], [2]]), gr.path_graph(3))
    assert np.ptp(x, axis=0).max() < 1e-9
    np.testing.assert_allclose(A @ x[0], b, atol=1e-6)


def test_solve_alternating_disconnected_graphs():
    rng = np.random.default_rng(6)
    A = well_conditioned(rng, 3)
    b = rng.standard_normal(3)
    sched = gr.GraphSchedule.periodic([gr.Graph.from_edges(3, [(0, 1)]), gr.Graph.from_edges(3, [(1, 2)])])
    x, rep = dle.dle_solve(dle.DleProblem.split(A, b, [[0], [1], [2]]), sched)
    np.testing.assert_allclose(x, np.tile(np.linalg.solve(A, b), (3, 1)), atol=1e-6)


def test_non_convergence_and_warning():
    p = dle.DleProblem.split(np.eye(2), [1, 2], [[0], [1]])
    with pytest.warns(RuntimeWarning, match="jointly"):
        with pytest.raises(dle.DleNonConvergence) as exc:
            dle.dle_solve(p, gr.Graph(2, ()), max_iter=50)
    assert exc.value.report.iterations == 50 and not exc.value.report.converged


def test_matrix_right_hand_sides_match_columnwise():
    rng = np.random.default_rng(7)
    A = well_conditioned(rng, 4)
    B = rng.standard_normal((4, 3))
    X, _ = dle.dle_solve(dle.DleProblem.split(A, B, split_rows(4, 2)), gr.path_graph(2))
    for c in range(3):
        x, _ = dle.dle_solve(dle.DleProblem.split(A, B[:, c], split_rows(4, 2)), gr.path_graph(2))
        np.testing.assert_allclose(X[:, :, c], x, atol=1e-9)


def test_warm_start_keeps_consistency_and_saves_rounds():
    rng = np.random.default_rng(8)
    A = well_conditioned(rng, 5)
    b = rng.standard_normal(5)
    p = dle.DleProblem.split(A, b, split_rows(5, 3))
    g = gr.path_graph(3)
    x, cold = dle.dle_solve(p, g)
    p2 = p.with_rhs(tuple(r + 1e-3 for r in p.rhs))
    state = dle.reproject(dle.dle_init(p2), p2, x[:, :, None])
    assert dle.check_local_consistency(state) < 1e-9
    _, warm = dle.dle_solve(p2, g, warm=x)
    assert warm.iterations < cold.iterations


@given(st.integers(0, 10_000), st.integers(2, 5), st.sampled_from(["path", "cycle", "star"]))
def test_projection_consistency_every_round(seed, N, kind):
    rng = np.random.default_rng(seed)
    n = rng.integers(N, 7)
    A = rng.standard_normal((n, n))
    b = rng.standard_normal(n)
    p = dle.DleProblem.split(A, b, split_rows(n, N))
    g = {"path": gr.path_graph, "cycle": gr.cycle_graph, "star": gr.star_graph}[kind](N)
    s = dle.dle_init(p)
    for _ in range(30):
        s = dle.dle_step(s, g)
        for i, (a, bi) in enumerate(zip(p.rows, p.rhs)):
            assert np.abs(a @ s.solutions()[i] - bi).max() < 1e-9 * max(1, np.abs(bi).max())


@given(st.integers(0, 10_000), st.integers(2, 5))
def test_permutation_equivariance(seed, N):
    rng = np.random.default_rng(seed)
    n = 6
    A = well_conditioned(rng, n)
    b = rng.standard_normal(n)
    owners = split_rows(n, N)
    perm = rng.permutation(N)
    g = gr.random_tree(N, rng)
    g_perm = gr.Graph.from_edges(N, [(int(np.flatnonzero(perm == i)[0]), int(np.flatnonzero(perm == j)[0]))
                                     for i, j in g.edges])
    s1 = dle.dle_init(dle.DleProblem.split(A, b, owners))
    s2 = dle.dle_init(dle.DleProblem.split(A, b, [owners[perm[k]] for k in range(N)]))
    for _ in range(20):
        s1, s2 = dle.dle_step(s1, g), dle.dle_step(s2, g_perm)
    np.testing.assert_allclose(s2.solutions(), s1.solutions()[perm], atol=1e-12)


def test_determinism_bit_identical():
    rng = np.random.default_rng(9)
    A = well_conditioned(rng, 5)
    b = rng.standard_normal(5)
    p = dle.DleProblem.split(A, b, split_rows(5, 3))
    runs = [dle.dle_solve(p, gr.path_graph(3))[0] for _ in range(2)]
    assert np.array_equal(runs[0], runs[1])


def test_empty_rows_agent_averages():
    rng = np.random.default_rng(10)
    A = well_conditioned(rng, 3)
    b = rng.standard_normal(3)
    p = dle.DleProblem((A[:2], A[2:], np.zeros((0, 3))), (b[:2], b[2:], np.zeros(0)), 3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        x, _ = dle.dle_solve(p, gr.path_graph(3))
    np.testing.assert_allclose(x[2], np.linalg.solve(A, b), atol=1e-8)

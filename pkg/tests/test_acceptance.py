"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
(and when the module is executed directly with ``python3``).
"""

from __future__ import annotations

import functools
import math
import time
import warnings

import numpy as np
import pytest

from distreach import cli, consensus, dle, graph as gr, linalg, reach as rc
from distreach.scenario import bundled_scenarios, load_scenario
from oracles import brute_force_argmax, expm, simulate_max_consensus, well_conditioned

RESULTS: dict[int, str] = {}


def record(number: int, title: str):
    """Decorator that stores a PASS/FAIL line for criterion ``number``."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                RESULTS[number] = f"acceptance {number:2d} FAIL  {title}: {type(exc).__name__}: {exc}"
                raise
            took = time.perf_counter() - t0
            RESULTS[number] = f"acceptance {number:2d} PASS  {title} ({took:.2f} s){'; ' + detail if detail else ''}"
            print(RESULTS[number])

        return run

    return wrap


def _scenarios():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return {name: load_scenario(p) for name, p in sorted(bundled_scenarios().items())}


SCENARIOS = _scenarios()


# ------------------------------------------------------------------ 1

def _r_squared(x, y):
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    total = ((y - y.mean()) ** 2).sum()
    return slope, 1.0 - resid @ resid / total


@record(1, "d-LE exponential convergence on 20 random systems")
def test_dle_exponential_convergence():
    rng = np.random.default_rng(2024)
    kinds = ["path", "cycle", "star", "tree"]
    t0 = time.perf_counter()
    worst_err, worst_r2 = 0.0, 1.0
    for trial in range(20):
        N = int(rng.integers(2, 7))
        n = int(rng.integers(N, 13))
        kind = kinds[trial % 4]
        if kind == "cycle" and N < 3:
            kind = "path"
        g = {"path": gr.path_graph, "cycle": gr.cycle_graph, "star": gr.star_graph}.get(kind)
        g = g(N) if g else gr.random_tree(N, rng)
        A = well_conditioned(rng, n)
        b = rng.standard_normal(n)
        truth = np.linalg.solve(A, b)
        owners = [list(range(i, n, N)) for i in range(N)]
        state = dle.dle_init(dle.DleProblem.split(A, b, owners))
        errs = [np.abs(state.solutions() - truth).max()]
        for _ in range(20_000):
            if errs[-1] < 1e-12:
                break
            state = dle.dle_step(state, g)
            errs.append(np.abs(state.solutions() - truth).max())
        errs = np.array(errs)
        worst_err = max(worst_err, errs[-1])
        assert errs[-1] < 1e-6, f"trial {trial}: final error {errs[-1]:.2e}"
        seg = np.flatnonzero((errs < 1e-1 * errs[0]) & (errs > 1e-11))
        slope, r2 = _r_squared(seg.astype(float), np.log(errs[seg]))
        worst_r2 = min(worst_r2, r2)
        assert slope < 0 and r2 >= 0.9, f"trial {trial}: slope {slope:.3g}, R^2 {r2:.3f}"
    took = time.perf_counter() - t0
    assert took < 5.0, f"took {took:.2f} s"
    return f"worst final error {worst_err:.1e}, worst R^2 {worst_r2:.3f}"


# ------------------------------------------------------------------ 2

@record(2, "d-LE over the alternating schedule")
def test_time_varying_convergence():
    t0 = time.perf_counter()
    sched = gr.GraphSchedule.periodic([gr.Graph.from_edges(3, [(0, 1)]), gr.Graph.from_edges(3, [(1, 2)])])
    assert not any(gr.is_connected(g) for g in sched.graphs)
    assert gr.is_repeatedly_jointly_strongly_connected(sched, 2)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(5):
        A = well_conditioned(rng, 3)
        b = rng.standard_normal(3)
        x, _ = dle.dle_solve(dle.DleProblem.split(A, b, [[0], [1], [2]]), sched)
        worst = max(worst, np.abs(x - np.linalg.solve(A, b)).max())
    took = time.perf_counter() - t0
    assert worst < 1e-6, f"error {worst:.2e}"
    assert took < 2.0, f"took {took:.2f} s"
    return f"max error {worst:.1e}"


# ------------------------------------------------------------------ 3

@record(3, "max-consensus diameter bound")
def test_max_consensus_diameter():
    for n in range(2, 9):
        g = gr.path_graph(n)
        values = np.zeros((n, 1))
        values[-1] = 1.0
        ids = np.arange(n, dtype=np.int64)[:, None]
        r = consensus.agreement_round(values, ids, gr.GraphSchedule.static(g), 4 * n)
        assert r == gr.diameter(g) == n - 1, f"P{n}: agreement at round {r}"
        hist = simulate_max_consensus(values[:, 0].tolist(), ids[:, 0].tolist(), [g.sorted_edges()], n)
        assert min(v for v, _ in hist[n - 2]) < 1.0 and min(v for v, _ in hist[n - 1]) == 1.0
    rng = np.random.default_rng(3)
    tested = 0
    while tested < 40:
        n = int(rng.integers(2, 8))
        period = int(rng.integers(1, 4))
        graphs = []
        for _ in range(period):
            pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.35]
            graphs.append(gr.Graph.from_edges(n, pairs))
        sched = gr.GraphSchedule.periodic(graphs)
        if not gr.is_repeatedly_jointly_strongly_connected(sched, period):
            continue
        bound = gr.consensus_round_bound(sched, period)
        for start in range(period):
            values = rng.integers(0, 3, (n, 1)).astype(float)
            ids = rng.permutation(n).astype(np.int64)[:, None]
            r = consensus.agreement_round(values, ids, sched, 10 * n * period, start_round=start)
            assert 0 <= r <= bound, f"n={n} period={period}: agreement at {r}, bound {bound}"
        tested += 1
    return "P2..P8 exact, 40 random schedules within bound"


# ------------------------------------------------------------------ 4

@record(4, "support identity and sandwich on bundled scenarios")
def test_support_identity_and_sandwich():
    worst_res, worst_margin = 0.0, np.inf
    for name, sc in SCENARIOS.items():
        sys = sc.stacked()
        runs = [rc.reach_centralized(sys, sc.config)]
        runs += rc.reach_distributed(sc.infos(), sc.schedule, sc.config, sys)
        for r in runs:
            res = r.support_residual()
            margin, step = r.sandwich_margin()
            assert res < 1e-9, f"{name} agent {r.agent}: residual {res:.2e}"
            assert margin >= -1e-8, f"{name} agent {r.agent}: sandwich {margin:.2e} at step {step}"
            worst_res, worst_margin = max(worst_res, res), min(worst_margin, margin)
    return f"residual {worst_res:.1e}, sandwich margin {worst_margin:.1e}"


# ------------------------------------------------------------------ 5

@record(5, "scalar integrator benchmark")
def test_scalar_benchmark():
    sc = SCENARIOS["scalar_integrator"]
    t0 = time.perf_counter()
    sys = sc.stacked()
    central = rc.reach_centralized(sys, sc.config)
    view = rc.per_agent_views(central, sys)[0]
    dist = rc.reach_distributed(sc.infos(), sc.schedule, sc.config, sys)
    took = time.perf_counter() - t0
    lo, hi = float(view.lo[0]), float(view.hi[0])
    assert abs(lo + 1) <= 5e-3 and abs(hi - 2) <= 5e-3, f"interval [{lo}, {hi}]"
    gap = max(np.abs(r.gammas - central.gammas).max() for r in dist)
    assert gap <= 1e-6, f"distributed gap {gap:.2e}"
    assert took < 2.0, f"took {took:.2f} s"
    return f"interval [{lo:.6f}, {hi:.6f}], distributed gap {gap:.1e}"


# ------------------------------------------------------------------ 6

@record(6, "coupled pair cross-check")
def test_coupled_pair_cross_check():
    sc = SCENARIOS["coupled_pair"]
    t0 = time.perf_counter()
    sys = sc.stacked()
    np.testing.assert_array_equal(sys.AA, [[-2, 1], [1, -2]])
    dts = [0.04, 0.02, 0.01, 0.005]
    errs = []
    for dt in dts:
        cfg = sc.with_overrides(dt=dt).config
        dist = rc.reach_distributed(sc.infos(), sc.schedule, cfg, sys)
        spread = np.abs(dist[0].gammas - dist[1].gammas).max()
        assert spread <= 1e-6, f"dt={dt}: agents disagree by {spread:.2e}"
        exact = rc.reach_centralized(sys, cfg, "exact")
        errs.append(max(np.abs(r.gammas - exact.gammas).max() for r in dist))
    consts = [e / dt for e, dt in zip(errs, dts)]
    orders = [math.log2(errs[k] / errs[k + 1]) for k in range(len(errs) - 1)]
    took = time.perf_counter() - t0
    assert all(c2 <= c1 for c1, c2 in zip(consts, consts[1:])), f"C estimates {consts}"
    assert min(orders) >= 1.0, f"observed orders {orders}"
    assert took < 10.0, f"took {took:.2f} s"
    return f"errors {', '.join(f'{e:.2e}' for e in errs)}; orders {', '.join(f'{o:.2f}' for o in orders)}"


# ------------------------------------------------------------------ 7

@record(7, "sampled containment on bundled scenarios")
def test_containment_sampling():
    t0 = time.perf_counter()
    worst = np.inf
    for name, sc in SCENARIOS.items():
        sys = sc.stacked()
        result = rc.reach_centralized(sys, sc.config)
        rep = rc.verify_containment(result, sys, sc.config, n_samples=1000, seed=sc.seed)
        assert rep.worst_margin >= -1e-6, f"{name}: margin {rep.worst_margin:.2e} at step {rep.worst_step}"
        worst = min(worst, rep.worst_margin)
    took = time.perf_counter() - t0
    assert took < 10.0, f"took {took:.2f} s"
    return f"worst margin {worst:.2e}"


# ------------------------------------------------------------------ 8

@record(8, "product vs stacked argmax")
def test_argmax_equivalence():
    checked = 0
    for name, sc in SCENARIOS.items():
        sys = sc.stacked()
        assert len(sys.WW) <= 64
        factors = [W.vertices for W in sys.W_factors]
        rng = np.random.default_rng(len(name))
        for lam in rng.standard_normal((1000, sys.n)):
            _, a = rc.optimal_disturbance(lam, sys, "stacked")
            _, b = rc.optimal_disturbance(lam, sys, "product")
            _, ref, _ = brute_force_argmax(factors, sys.BB.T @ lam)
            assert a == b == ref, f"{name}: ids {a}, {b}, brute force {ref}"
            checked += 1
    return f"{checked} directions"


# ------------------------------------------------------------------ 9

@record(9, "transition matrix identities")
def test_linalg_identities():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        M = rng.standard_normal((n, n))
        M *= rng.uniform(0, 5) / max(np.linalg.norm(M, 2), 1e-12)
        a, b = rng.uniform(0, 1, 2)
        Pa, Pb, Pab = (linalg.state_transition(M, t) for t in (a, b, a + b))
        scale = max(1.0, np.abs(Pab).max())
        semi = np.abs(Pab - Pa @ Pb).max() / scale
        inv = np.abs(Pa @ linalg.state_transition(-M, a) - np.eye(n)).max()
        ref = np.abs(Pa - expm(M, a)).max() / max(1.0, np.abs(Pa).max())
        lam, x = rng.standard_normal((2, n))
        adj = abs((linalg.state_transition(-M.T, a) @ lam) @ (Pa @ x) - lam @ x) / max(1.0, abs(lam) @ abs(x))
        worst = max(worst, semi, inv, ref, adj)
        assert max(semi, inv, ref, adj) <= 1e-8, f"semigroup {semi:.1e}, inverse {inv:.1e}, adjoint {adj:.1e}"
    return f"worst relative defect {worst:.1e}"


# ------------------------------------------------------------------ 10

@record(10, "bit-identical exports")
def test_determinism(tmp_path):
    for name in ("coupled_pair", "planar_pair"):
        dirs = [tmp_path / f"{name}_{k}" for k in range(2)]
        for d in dirs:
            assert cli.main(["run", str(bundled_scenarios()[name]), "--out", str(d), "--seed", "7"]) == 0
        files = sorted(p.name for p in dirs[0].iterdir())
        assert files == sorted(p.name for p in dirs[1].iterdir())
        for f in files:
            assert (dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes(), f"{name}/{f} differs"
    return "2 scenarios"


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))

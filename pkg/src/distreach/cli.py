"""Command line driver: ``distreach {run,verify,graphcheck} SCENARIO``.

Exit codes: 0 success, 1 verification failure, 2 invalid input,
3 non-convergence (including a communication schedule that can never
converge).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import export
from .dle import DleNonConvergence
from .graph import (GraphError, diameter, is_connected, is_repeatedly_jointly_strongly_connected,
                    is_strongly_connected_support, support_diameter, window_supports)
from .model import ModelError
from .polytope import PolytopeError
from .reach import (SANDWICH_TOL, DistributedNonConvergence, ReachError, reach_centralized,
                    reach_distributed, verify_containment)
from .scenario import Scenario, ScenarioError, load_scenario

log = logging.getLogger("distreach")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NONCONV = 0, 1, 2, 3


class _Abort(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load(args) -> Scenario:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sc = load_scenario(args.scenario)
        sc = sc.with_overrides(tau=args.tau, dt=args.dt, dle_tol=args.dle_tol,
                               dle_max_iter=args.max_iters, consensus_rounds=args.rounds,
                               seed=getattr(args, "seed", None), samples=getattr(args, "samples", None))
    except ScenarioError as exc:
        raise _Abort(EXIT_INPUT, str(exc)) from None
    except ValueError as exc:
        raise _Abort(EXIT_INPUT, f"{args.scenario}: invalid override: {exc}") from None
    for note in sc.warnings:
        log.warning("%s", note)
    return sc


def connectivity_diagnosis(sc: Scenario) -> str | None:
    """Why the schedule cannot support distributed convergence, or ``None``."""
    s = sc.schedule
    if s.node_count == 1:
        return None
    if s.mode == "static":
        if is_connected(s.graphs[0]):
            return None
        return "communication graph is not connected: " + _components(s.graphs[0])
    if is_repeatedly_jointly_strongly_connected(s, s.period):
        return None
    return f"communication schedule is NOT jointly connected over its period {s.period}"


def _components(g) -> str:
    seen, comps = set(), []
    for start in range(g.node_count):
        if start in seen:
            continue
        stack, comp = [start], []
        seen.add(start)
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in g.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        comps.append(sorted(comp))
    return f"{len(comps)} components " + " ".join("{" + ",".join(map(str, c)) + "}" for c in comps)


def _run_distributed(sc: Scenario, sys_):
    why = connectivity_diagnosis(sc)
    if why:
        raise _Abort(EXIT_NONCONV, f"cannot converge: {why}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return reach_distributed(sc.infos(), sc.schedule, sc.config, sys_)
    except DistributedNonConvergence as exc:
        raise _Abort(EXIT_NONCONV, f"non-convergence: {exc}") from None
    except (DleNonConvergence, GraphError) as exc:
        raise _Abort(EXIT_NONCONV, f"non-convergence: {exc}") from None


def _stacked(sc: Scenario):
    try:
        return sc.stacked()
    except (ModelError, PolytopeError) as exc:
        raise _Abort(EXIT_INPUT, f"{sc.source}: {exc}") from None


def _summary(sc: Scenario, results, mode: str) -> dict:
    r0 = results[0]
    g = np.stack([r.gammas for r in results])
    return {
        "scenario": sc.name,
        "mode": mode,
        "flow": r0.flow,
        "agents": sc.agent_count,
        "traces": r0.trace_count,
        "steps": r0.n_steps,
        "t0": sc.config.t0,
        "tau": sc.config.tau,
        "dt": sc.config.dt,
        "dle_tol": sc.config.dle_tol,
        "dle_rounds_total": r0.stats.get("dle_rounds", 0),
        "dle_solves": r0.stats.get("dle_solves", 0),
        "max_dle_rounds": r0.stats.get("max_dle_rounds", 0),
        "consensus_rounds": r0.stats.get("consensus_rounds", 0),
        "rounds_total": r0.stats.get("rounds_total", 0),
        "gamma_spread": float((g.max(axis=0) - g.min(axis=0)).max()),
        "support_residual": max(r.support_residual() for r in results),
        "sandwich_margin": min(r.sandwich_margin()[0] for r in results),
        "final_offsets": {str(export._label(r)): r.gammas[-1] for r in results},
        "warnings": list(sc.warnings),
    }


# ------------------------------------------------------------------ run

def cmd_run(args) -> int:
    sc = _load(args)
    sys_ = _stacked(sc)
    if args.oracle:
        try:
            results = [reach_centralized(sys_, sc.config)]
        except ReachError as exc:
            raise _Abort(EXIT_NONCONV, str(exc)) from None
        mode = "centralized"
    else:
        results = _run_distributed(sc, sys_)
        mode = "distributed"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export.write_traces(results, out, args.format)
    export.write_outer(results, out)
    export.write_json(out / "agents_boxes.json", export.agent_boxes(results, sys_))
    summary = _summary(sc, results, mode)
    export.write_json(out / "report.json", summary)
    print(f"{sc.name}: {mode} run, {summary['steps']} steps, {summary['traces']} traces, "
          f"{summary['agents']} agents")
    print(f"  d-LE rounds total {summary['dle_rounds_total']} (max per solve "
          f"{summary['max_dle_rounds']}), consensus rounds {summary['consensus_rounds']}")
    for box in export.agent_boxes(results[:1], sys_):
        lo = ", ".join(f"{v:.6g}" for v in box["lo"])
        hi = ", ".join(f"{v:.6g}" for v in box["hi"])
        print(f"  agent {box['agent']} final box lo [{lo}] hi [{hi}]")
    print(f"  wrote {out}")
    return EXIT_OK


# ------------------------------------------------------------------ verify

def gamma_mismatches(distributed, central, tol: float) -> list[dict]:
    """Every (agent, trace, step) whose gamma differs from ``central`` by more than ``tol``."""
    out = []
    for r in distributed:
        diff = np.abs(r.gammas - central.gammas)
        for k, j in zip(*np.nonzero(~(diff <= tol))):
            out.append({"agent": export._label(r), "trace": int(j), "step": int(k),
                        "time": float(r.times[k]), "diff": float(diff[k, j])})
    return out


def verification_report(sc: Scenario, sys_, central, oracle, distributed, tol: float) -> dict:
    """Checks (a) inner in outer, (b) sampled containment, (c) gamma agreement."""
    cfg = sc.config
    inner = []
    for label, r in [("centralized", central), ("oracle", oracle)] + \
            [(f"agent{r.agent}", r) for r in distributed]:
        m, k = r.sandwich_margin()
        inner.append({"result": label, "margin": m, "step": k, "passed": bool(m >= -SANDWICH_TOL)})
    sampled = []
    for label, r in [("oracle", oracle)] + [(f"agent{r.agent}", r) for r in distributed]:
        rep = verify_containment(r, sys_, cfg, sc.samples, sc.seed)
        sampled.append(dict(rep.to_dict(), result=label))
    mism = gamma_mismatches(distributed, central, tol)
    checks = {
        "inner_in_outer": {"passed": all(c["passed"] for c in inner), "results": inner},
        "sampled_containment": {"passed": all(c["passed"] for c in sampled), "samples": sc.samples,
                                "seed": sc.seed, "results": sampled},
        "gamma_agreement": {"passed": not mism, "tol": tol, "mismatch_count": len(mism),
                            "mismatches": mism[:50],
                            "max_diff": max((float(np.abs(r.gammas - central.gammas).max())
                                             for r in distributed), default=0.0)},
    }
    return {"scenario": sc.name, "passed": all(c["passed"] for c in checks.values()), "checks": checks}


def cmd_verify(args) -> int:
    sc = _load(args)
    sys_ = _stacked(sc)
    distributed = _run_distributed(sc, sys_)
    try:
        central = reach_centralized(sys_, sc.config)
        oracle = reach_centralized(sys_, sc.config, flow="exact")
    except ReachError as exc:
        raise _Abort(EXIT_NONCONV, str(exc)) from None
    report = verification_report(sc, sys_, central, oracle, distributed, args.tol)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        export.write_json(out / "report.json", report)
    checks = report["checks"]
    for name, c in checks.items():
        print(f"{name}: {'PASS' if c['passed'] else 'FAIL'}")
    for c in checks["inner_in_outer"]["results"]:
        if not c["passed"]:
            print(f"  inner point outside outer bound: {c['result']} step {c['step']} margin {c['margin']:.3e}")
    for c in checks["sampled_containment"]["results"]:
        if not c["passed"]:
            print(f"  sample {c['worst_sample']} leaves {c['result']} bound at step {c['worst_step']} "
                  f"(margin {c['worst_margin']:.3e})")
    for m in checks["gamma_agreement"]["mismatches"][:10]:
        print(f"  gamma mismatch: agent {m['agent']} trace {m['trace']} step {m['step']} diff {m['diff']:.3e}")
    print(json.dumps({"scenario": report["scenario"], "passed": report["passed"]}, sort_keys=True))
    return EXIT_OK if report["passed"] else EXIT_FAIL


# ------------------------------------------------------------------ graphcheck

def cmd_graphcheck(args) -> int:
    sc = _load(args)
    s = sc.schedule
    g = sc.graph
    if is_connected(g):
        print(f"coupling graph: connected, diam {diameter(g)}")
    else:
        print(f"coupling graph: NOT connected ({_components(g)})")
    if s.mode == "static":
        c = s.graphs[0]
        if is_connected(c):
            print(f"communication: connected, diam {diameter(c)}")
            return EXIT_OK
        print(f"communication: NOT connected ({_components(c)})")
        print("NOT jointly connected")
        return EXIT_FAIL
    window = args.window or s.period
    ok = True
    for w, sup in enumerate(window_supports(s, window)):
        lo, hi = w * window, (w + 1) * window
        edges = sorted((int(i), int(j)) for i, j in zip(*np.nonzero(sup)) if i != j)
        strong = is_strongly_connected_support(sup)
        ok &= strong
        verdict = f"strongly connected, diam {support_diameter(sup)}" if strong else "NOT strongly connected"
        print(f"window rounds [{lo}, {hi}): {verdict}; support {edges}")
    if ok:
        print(f"jointly connected, window {window}")
        return EXIT_OK
    print(f"NOT jointly connected, window {window}")
    return EXIT_FAIL


# ------------------------------------------------------------------ entry point

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", help="scenario file")
    p.add_argument("--tau", type=float, help="final time (overrides the scenario)")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--dle-tol", type=float, help="d-LE disagreement tolerance")
    p.add_argument("--max-iters", type=int, help="d-LE round limit per solve")
    p.add_argument("--rounds", type=int, help="max-consensus rounds per step")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distreach", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="compute reachable-set bounds and export them")
    _common(run)
    run.add_argument("--oracle", action="store_true", help="centralized computation instead")
    run.add_argument("--out", default="distreach-out", help="output directory")
    run.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    run.add_argument("--seed", type=int)
    run.add_argument("--tol", dest="dle_tol", type=float, help="same as --dle-tol")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="check containment and centralized/distributed agreement")
    _common(ver)
    ver.add_argument("--samples", type=int, help="sampled trajectories")
    ver.add_argument("--seed", type=int, help="sampling seed")
    ver.add_argument("--tol", type=float, default=1e-6, help="gamma agreement tolerance")
    ver.add_argument("--out", help="directory for report.json")
    ver.set_defaults(func=cmd_verify)

    gc = sub.add_parser("graphcheck", help="connectivity of the communication schedule")
    _common(gc)
    gc.add_argument("--window", type=int, help="window length in rounds (default: period)")
    gc.set_defaults(func=cmd_graphcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _Abort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

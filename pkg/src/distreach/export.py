"""Writers (and a reader) for run artefacts.

Floats go out with 17 significant digits in CSV and as shortest round-trip
reprs in JSON, so reading a trace file back gives the exact doubles.  All
files are written in a fixed order with sorted JSON keys; identical runs
produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .reach import ReachResult, per_agent_views
from .model import StackedSystem

CENTRAL = -1


def _g(x: float) -> str:
    return format(float(x), ".17g")


def _clean(x):
    """JSON-safe copy: arrays to lists, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _label(r: ReachResult) -> int:
    return CENTRAL if r.agent is None else int(r.agent)


def trace_records(results: Sequence[ReachResult]):
    """One record per (agent, step, trace), in that nesting order."""
    for r in results:
        K = r.n_steps
        for k in range(K + 1):
            for j in range(r.trace_count):
                yield {
                    "agent": _label(r),
                    "step": k,
                    "time": float(r.times[k]),
                    "trace": j,
                    "gamma": float(r.gammas[k, j]),
                    "lambda": r.lambdas[k, j].tolist(),
                    "xi": r.contacts[k, j].tolist(),
                    "w_id": int(r.w_ids[k, j]) if k < K else None,
                    "w_star": r.w_star[k, j].tolist() if k < K else None,
                }


def write_traces(results: Sequence[ReachResult], out_dir, fmt: str = "csv") -> Path:
    out_dir = Path(out_dir)
    if fmt == "jsonl":
        path = out_dir / "traces.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for rec in trace_records(results):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return path
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    n = results[0].lambdas.shape[2]
    nw = results[0].w_star.shape[2]
    header = (["agent", "step", "time", "trace", "gamma", "w_id"]
              + [f"lambda_{a}" for a in range(n)] + [f"xi_{a}" for a in range(n)]
              + [f"w_{a}" for a in range(nw)])
    path = out_dir / "traces.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in trace_records(results):
            w_star = rec["w_star"] if rec["w_star"] is not None else [""] * nw
            w.writerow([rec["agent"], rec["step"], _g(rec["time"]), rec["trace"], _g(rec["gamma"]),
                        "" if rec["w_id"] is None else rec["w_id"]]
                       + [_g(v) for v in rec["lambda"]] + [_g(v) for v in rec["xi"]]
                       + [v if v == "" else _g(v) for v in w_star])
    return path


def read_traces(path) -> dict:
    """Gamma sequences keyed by ``(agent, trace)``, ordered by step."""
    path = Path(path)
    rows = []
    if path.suffix == ".jsonl":
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                rows.append((rec["agent"], rec["trace"], rec["step"], float(rec["gamma"])))
    else:
        with open(path, encoding="utf-8", newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append((int(rec["agent"]), int(rec["trace"]), int(rec["step"]), float(rec["gamma"])))
    out: dict = {}
    for agent, trace, step, gamma in sorted(rows):
        out.setdefault((agent, trace), []).append(gamma)
    return {k: np.array(v) for k, v in out.items()}


def write_outer(results: Sequence[ReachResult], out_dir) -> list[Path]:
    """``outer_kNNNNN.json`` per step, one polytope entry per result."""
    out_dir = Path(out_dir)
    K = results[0].n_steps
    width = max(5, len(str(K)))
    paths = []
    for k in range(K + 1):
        doc = {
            "step": k,
            "time": float(results[0].times[k]),
            "polytopes": [{"agent": _label(r), "normals": r.lambdas[k], "offsets": r.gammas[k],
                           "contacts": r.contacts[k]} for r in results],
        }
        p = out_dir / f"outer_k{k:0{width}d}.json"
        write_json(p, doc)
        paths.append(p)
    return paths


def agent_boxes(results: Sequence[ReachResult], sys: StackedSystem, k: int = -1) -> list[dict]:
    """Final per-agent views; a distributed agent reports from its own copy."""
    out = []
    for r in results:
        views = per_agent_views(r, sys, k)
        mine = views if r.agent is None else [views[r.agent]]
        for v in mine:
            out.append({"reporter": _label(r), "agent": v.agent, "lo": v.lo, "hi": v.hi,
                        "cloud": v.cloud, "flagged": [list(f) for f in v.flagged]})
    return out

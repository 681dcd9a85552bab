"""Scenario files: one YAML document describing agents, graphs and the run.

Grammar (all matrices row-major nested lists; a bare number is a 1x1
matrix; numbers may be written as ``1e-10`` or ``1.0e-10``)::

    name: coupled_pair                 # optional
    time:   {t0: 0, tau: 1, dt: 0.01}
    solver: {flow: midpoint, disturbance: shares,
             dle_tol: 1e-10, dle_max_iter: 200000, consensus_rounds: null}
    seed: 0                            # sampling seed (verify)
    samples: 1000                      # sampled trajectories (verify)
    vertex_cap: 4096                   # limit on stacked vertex counts
    graph:    {nodes: 2, edges: [[0, 1]]}          # coupling graph
    schedule: {mode: periodic, graphs: [[[0, 1]], []]}  # optional
    agents:
      - A: [[0]]
        B: [[1]]
        B1: [[1]]
        K_self: [[-1]]
        K_neighbors: {1: [[-1]]}
        X0: {box: {lo: [0], hi: [1]}}
        W:  {box: {lo: [-1], hi: [1]}}

``X0`` takes ``box`` or both ``hpoly {normals, offsets}`` and
``vpoly {vertices}``.  ``W`` takes ``box``, ``vpoly`` or
``ball {rho, resolution}``; an agent may give ``rho`` (and optionally
``resolution``) instead of ``W``.  The ball is approximated from inside.

Without ``schedule`` the agents communicate over the coupling graph.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import polytope as pt
from .graph import (Graph, GraphError, GraphSchedule, is_connected,
                    is_repeatedly_jointly_strongly_connected)
from .model import AgentModel, ModelError, StackedSystem, assemble_stacked, build_information_sets
from .reach import ReachConfig

TOP_KEYS = {"name", "time", "solver", "seed", "samples", "vertex_cap", "graph", "schedule", "agents"}
AGENT_KEYS = {"A", "B", "B1", "K_self", "K_neighbors", "X0", "W", "rho", "resolution"}


class ScenarioError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None, source: str = "<scenario>"):
        self.message = message
        self.path = path
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {path + ': ' if path else ''}{message}")


@dataclass(frozen=True)
class Scenario:
    name: str
    agents: tuple
    graph: Graph
    schedule: GraphSchedule
    config: ReachConfig
    seed: int = 0
    samples: int = 1000
    vertex_cap: int = pt.VERTEX_CAP
    source: str = "<scenario>"
    warnings: tuple = field(default_factory=tuple)

    @property
    def agent_count(self) -> int:
        return len(self.agents)

    def infos(self):
        return build_information_sets(self.agents, self.graph)

    def stacked(self) -> StackedSystem:
        return assemble_stacked(self.infos(), self.graph, self.vertex_cap)

    def with_overrides(self, **kw) -> "Scenario":
        """Replace config fields (``tau``, ``dt``, ...) and top-level ``seed``/``samples``."""
        top = {k: kw.pop(k) for k in ("seed", "samples") if kw.get(k) is not None}
        cfg = {k: v for k, v in kw.items() if v is not None}
        return replace(self, config=replace(self.config, **cfg), **top)


# ------------------------------------------------------------------ locating lines

def _line_of(root: yaml.Node | None, path: tuple) -> int | None:
    node = root
    line = None if node is None else node.start_mark.line + 1
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if str(k.value) == str(key):
                    nxt = v
                    line = k.start_mark.line + 1
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        if isinstance(node, yaml.SequenceNode):
            line = nxt.start_mark.line + 1
        node = nxt
    return line


def _fmt(path: tuple) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


class _Ctx:
    def __init__(self, root, source):
        self.root = root
        self.source = source

    def fail(self, path: tuple, message: str):
        raise ScenarioError(message, _fmt(path), _line_of(self.root, path), self.source)


# ------------------------------------------------------------------ typed readers

def _number(ctx: _Ctx, value, path) -> float:
    if isinstance(value, bool):
        ctx.fail(path, "expected a number, got a boolean")
    if isinstance(value, (int, float)):
        x = float(value)
    elif isinstance(value, str):
        try:
            x = float(value)
        except ValueError:
            ctx.fail(path, f"expected a number, got {value!r}")
    else:
        ctx.fail(path, f"expected a number, got {type(value).__name__}")
    if not np.isfinite(x):
        ctx.fail(path, "number must be finite")
    return x


def _integer(ctx: _Ctx, value, path, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        ctx.fail(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        ctx.fail(path, f"must be >= {minimum}")
    return int(value)


def _vector(ctx: _Ctx, value, path) -> np.ndarray:
    if not isinstance(value, list):
        value = [value]
    return np.array([_number(ctx, v, path + (k,)) for k, v in enumerate(value)], dtype=float)


def _matrix(ctx: _Ctx, value, path) -> np.ndarray:
    if not isinstance(value, list):
        return np.array([[_number(ctx, value, path)]])
    if not value:
        ctx.fail(path, "matrix is empty")
    if not all(isinstance(r, list) for r in value):
        ctx.fail(path, "matrix must be a list of rows")
    rows = [_vector(ctx, r, path + (k,)) for k, r in enumerate(value)]
    if len({r.size for r in rows}) != 1:
        ctx.fail(path, "matrix rows have different lengths")
    return np.vstack(rows)


def _mapping(ctx: _Ctx, value, path, allowed: set | None = None) -> dict:
    if not isinstance(value, dict):
        ctx.fail(path, "expected a mapping")
    if allowed is not None:
        for k in value:
            if k not in allowed:
                ctx.fail(path + (k,), f"unknown key {k!r}")
    return value


def _require(ctx: _Ctx, d: dict, key, path):
    if key not in d:
        ctx.fail(path, f"missing key {key!r}")
    return d[key]


def _edges(ctx: _Ctx, value, nodes: int, path) -> list:
    if value is None:
        return []
    if not isinstance(value, list):
        ctx.fail(path, "edges must be a list of [i, j] pairs")
    out = []
    for k, e in enumerate(value):
        if not (isinstance(e, list) and len(e) == 2):
            ctx.fail(path + (k,), "edge must be a pair [i, j]")
        i, j = (_integer(ctx, x, path + (k,)) for x in e)
        if not (0 <= i < nodes and 0 <= j < nodes):
            ctx.fail(path + (k,), f"edge ({i}, {j}) has an endpoint outside 0..{nodes - 1}")
        out.append((i, j))
    return out


def _set_block(ctx: _Ctx, value, path, kind: str):
    d = _mapping(ctx, value, path, {"box", "ball", "vpoly", "hpoly"})
    try:
        if "box" in d:
            b = _mapping(ctx, d["box"], path + ("box",), {"lo", "hi"})
            lo = _vector(ctx, _require(ctx, b, "lo", path + ("box",)), path + ("box", "lo"))
            hi = _vector(ctx, _require(ctx, b, "hi", path + ("box",)), path + ("box", "hi"))
            pair = pt.box(lo, hi)
            return pair if kind == "X0" else pair.v
        if "ball" in d:
            if kind == "X0":
                ctx.fail(path + ("ball",), "an initial set needs both representations; use box or hpoly + vpoly")
            b = _mapping(ctx, d["ball"], path + ("ball",), {"rho", "resolution", "dim"})
            rho = _number(ctx, _require(ctx, b, "rho", path + ("ball",)), path + ("ball", "rho"))
            res = _integer(ctx, b.get("resolution", 8), path + ("ball", "resolution"), 1)
            dim = _integer(ctx, b.get("dim", 0), path + ("ball", "dim"), 0)
            return ("ball", rho, res, dim)
        v = h = None
        if "vpoly" in d:
            b = _mapping(ctx, d["vpoly"], path + ("vpoly",), {"vertices"})
            v = pt.VPolytope(_matrix(ctx, _require(ctx, b, "vertices", path + ("vpoly",)),
                                     path + ("vpoly", "vertices")))
        if "hpoly" in d:
            b = _mapping(ctx, d["hpoly"], path + ("hpoly",), {"normals", "offsets"})
            h = pt.HPolytope(_matrix(ctx, _require(ctx, b, "normals", path + ("hpoly",)), path + ("hpoly", "normals")),
                             _vector(ctx, _require(ctx, b, "offsets", path + ("hpoly",)), path + ("hpoly", "offsets")))
    except pt.PolytopeError as exc:
        ctx.fail(path, str(exc))
    if kind == "X0":
        if h is None or v is None:
            ctx.fail(path, "an initial set needs both hpoly and vpoly (or a box)")
        if h.dim != v.dim:
            ctx.fail(path, f"hpoly has dim {h.dim}, vpoly has dim {v.dim}")
        return pt.PolytopePair(h, v)
    if v is None:
        ctx.fail(path, "a disturbance set needs vertices: use box, ball or vpoly")
    return v


def _agent(ctx: _Ctx, raw, idx: int, nodes: int) -> AgentModel:
    path = ("agents", idx)
    d = _mapping(ctx, raw, path, AGENT_KEYS)
    A = _matrix(ctx, _require(ctx, d, "A", path), path + ("A",))
    B = _matrix(ctx, _require(ctx, d, "B", path), path + ("B",))
    B1 = _matrix(ctx, _require(ctx, d, "B1", path), path + ("B1",))
    K = _matrix(ctx, _require(ctx, d, "K_self", path), path + ("K_self",))
    gains = {}
    for j, kij in _mapping(ctx, d.get("K_neighbors") or {}, path + ("K_neighbors",)).items():
        jj = _integer(ctx, j, path + ("K_neighbors", j))
        if not 0 <= jj < nodes or jj == idx:
            ctx.fail(path + ("K_neighbors", j), f"neighbour index {jj} is not another agent")
        gains[jj] = _matrix(ctx, kij, path + ("K_neighbors", j))
    X0 = _set_block(ctx, _require(ctx, d, "X0", path), path + ("X0",), "X0")
    nw = B1.shape[1]
    if "W" in d and "rho" in d:
        ctx.fail(path, "give either W or rho, not both")
    if "W" in d:
        W = _set_block(ctx, d["W"], path + ("W",), "W")
        if isinstance(W, tuple):
            _, rho, res, dim = W
            W = pt.ball_vpolytope(rho, dim or nw, res)
    elif "rho" in d:
        rho = _number(ctx, d["rho"], path + ("rho",))
        res = _integer(ctx, d.get("resolution", 8), path + ("resolution",), 1)
        try:
            W = pt.ball_vpolytope(rho, nw, res)
        except pt.PolytopeError as exc:
            ctx.fail(path + ("rho",), str(exc))
    else:
        ctx.fail(path, "missing key 'W' (or 'rho')")
    try:
        return AgentModel(A, B, B1, K, X0, W, gains, d.get("rho"))
    except (ModelError, pt.PolytopeError, ValueError) as exc:
        ctx.fail(path, str(exc))


def _section(ctx, data, key, allowed):
    return _mapping(ctx, data.get(key) or {}, (key,), allowed)


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    """Parse and fully validate a scenario document."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        ctx_mark = getattr(exc, "context_mark", None)
        if ctx_mark is not None and getattr(exc, "context", None):
            problem += f" ({exc.context} at line {ctx_mark.line + 1})"
        raise ScenarioError(f"malformed YAML: {problem}", "", line, source) from None
    ctx = _Ctx(root, source)
    if not isinstance(data, dict):
        ctx.fail((), "scenario must be a mapping at the top level")
    _mapping(ctx, data, (), TOP_KEYS)

    g = _mapping(ctx, _require(ctx, data, "graph", ()), ("graph",), {"nodes", "edges"})
    nodes = _integer(ctx, _require(ctx, g, "nodes", ("graph",)), ("graph", "nodes"), 1)
    graph = Graph.from_edges(nodes, _edges(ctx, g.get("edges"), nodes, ("graph", "edges")))

    raw_agents = _require(ctx, data, "agents", ())
    if not isinstance(raw_agents, list) or not raw_agents:
        ctx.fail(("agents",), "agents must be a non-empty list")
    if len(raw_agents) != nodes:
        ctx.fail(("agents",), f"{len(raw_agents)} agents but graph has {nodes} nodes")
    agents = tuple(_agent(ctx, a, i, nodes) for i, a in enumerate(raw_agents))

    for i, j in graph.sorted_edges():
        for a, b in ((i, j), (j, i)):
            if b not in agents[a].K_neighbor:
                ctx.fail(("agents", a, "K_neighbors"), f"no gain for neighbour {b} (edge {i}-{j})")
            if agents[a].nx != agents[b].nx:
                ctx.fail(("agents", a), f"state dim {agents[a].nx} differs from neighbour {b} ({agents[b].nx})")
    for a, m in enumerate(agents):
        for b in m.K_neighbor:
            if b not in graph.neighbors(a):
                ctx.fail(("agents", a, "K_neighbors", b), f"agent {b} is not a neighbour in the graph")

    notes = []
    if "schedule" in data and data["schedule"] is not None:
        s = _mapping(ctx, data["schedule"], ("schedule",), {"mode", "graphs"})
        mode = s.get("mode", "periodic")
        if mode not in ("static", "periodic"):
            ctx.fail(("schedule", "mode"), f"mode must be static or periodic, got {mode!r}")
        glist = _require(ctx, s, "graphs", ("schedule",))
        if not isinstance(glist, list) or not glist:
            ctx.fail(("schedule", "graphs"), "graphs must be a non-empty list of edge lists")
        graphs = [Graph.from_edges(nodes, _edges(ctx, e, nodes, ("schedule", "graphs", k)))
                  for k, e in enumerate(glist)]
        try:
            schedule = GraphSchedule(tuple(graphs), mode)
        except GraphError as exc:
            ctx.fail(("schedule",), str(exc))
    else:
        schedule = GraphSchedule.static(graph)
    if not is_repeatedly_jointly_strongly_connected(schedule, schedule.period):
        notes.append("communication schedule is not repeatedly jointly connected")
    if not is_connected(graph) and nodes > 1:
        notes.append("coupling graph is not connected")

    t = _section(ctx, data, "time", {"t0", "tau", "dt"})
    sv = _section(ctx, data, "solver", {"flow", "disturbance", "dle_tol", "dle_max_iter", "consensus_rounds"})
    kw: dict[str, Any] = {}
    for key in ("t0", "tau", "dt"):
        if key in t:
            kw[key] = _number(ctx, t[key], ("time", key))
    for key in ("flow", "disturbance"):
        if key in sv:
            kw[key] = str(sv[key])
    if "dle_tol" in sv:
        kw["dle_tol"] = _number(ctx, sv["dle_tol"], ("solver", "dle_tol"))
    if "dle_max_iter" in sv:
        kw["dle_max_iter"] = _integer(ctx, sv["dle_max_iter"], ("solver", "dle_max_iter"), 1)
    if sv.get("consensus_rounds") is not None:
        kw["consensus_rounds"] = _integer(ctx, sv["consensus_rounds"], ("solver", "consensus_rounds"), 0)
    try:
        config = ReachConfig(**kw)
    except ValueError as exc:
        ctx.fail(("time",), str(exc))

    seed = _integer(ctx, data.get("seed", 0), ("seed",), 0)
    samples = _integer(ctx, data.get("samples", 1000), ("samples",), 0)
    cap = _integer(ctx, data.get("vertex_cap", pt.VERTEX_CAP), ("vertex_cap",), 1)
    for label, counts in (("X0", [len(m.X0.v) for m in agents]), ("W", [len(m.W) for m in agents])):
        total = int(np.prod(counts))
        if total > cap:
            ctx.fail(("agents",), f"stacked {label} has {total} vertices, vertex_cap is {cap}")

    name = str(data.get("name") or Path(source).stem)
    return Scenario(name, agents, graph, schedule, config, seed, samples, cap, source, tuple(notes))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read file: {exc.strerror}", "", None, str(path)) from None
    sc = parse_scenario(text, str(path))
    for note in sc.warnings:
        warnings.warn(f"{path}: {note}", RuntimeWarning, stacklevel=2)
    return sc


def bundled_scenarios() -> dict[str, Path]:
    """Scenario files shipped with the package, by name."""
    root = resources.files("distreach") / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".scenario")}

"""Distributed polytopic reachable sets for coupled linear multi-agent systems."""

from __future__ import annotations

from .graph import Graph, GraphSchedule
from .model import AgentModel, StackedSystem, assemble_stacked, build_information_sets
from .reach import ReachConfig, ReachResult, reach_centralized, reach_distributed, verify_containment
from .scenario import Scenario, ScenarioError, load_scenario

__version__ = "0.1.0"

__all__ = [
    "AgentModel",
    "Graph",
    "GraphSchedule",
    "ReachConfig",
    "ReachResult",
    "Scenario",
    "ScenarioError",
    "StackedSystem",
    "assemble_stacked",
    "build_information_sets",
    "load_scenario",
    "reach_centralized",
    "reach_distributed",
    "verify_containment",
]

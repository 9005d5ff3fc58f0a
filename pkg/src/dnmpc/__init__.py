"""Hierarchical distributed NMPC with exact finite-control solvers and a stability lab."""

from .bridge import Scenario, build_scenario
from .config import ConfigError, ScenarioConfig, load_config
from .core import AgentModel, InfoSet, JointConstraint, NeighborRecord, admissible, rollout
from .scheduler import Rules, scheduler_step
from .simulation import IDEAL, NetworkModel, RunTrace, run_closed_loop
from .solver import EmptyAdmissibleSet, Plan, enumerate_oracle, solve_ocp
from .stability import (
    feasibility_check,
    local_alpha,
    persistent_coupling_detector,
    suboptimality_check,
    weighted_alpha,
)
from .trace_io import dumps_trace, loads_trace, read_trace, write_trace

__all__ = [
    "IDEAL",
    "AgentModel",
    "ConfigError",
    "EmptyAdmissibleSet",
    "InfoSet",
    "JointConstraint",
    "NeighborRecord",
    "NetworkModel",
    "Plan",
    "Rules",
    "RunTrace",
    "Scenario",
    "ScenarioConfig",
    "admissible",
    "build_scenario",
    "dumps_trace",
    "enumerate_oracle",
    "feasibility_check",
    "load_config",
    "loads_trace",
    "local_alpha",
    "persistent_coupling_detector",
    "read_trace",
    "rollout",
    "run_closed_loop",
    "scheduler_step",
    "solve_ocp",
    "suboptimality_check",
    "weighted_alpha",
    "write_trace",
]

"""Seedable simulator for deadline-constrained task offloading to roadside edge servers."""
from .engine import EngineConfig, RunMetrics, run
from .model import ChannelParams, ObjectiveWeights, Task, TaskOutcome
from .pso import PsoParams
from .workload import Scenario, WorkloadConfig, generate_scenario, load_scenario, save_scenario

__all__ = [
    "ChannelParams",
    "EngineConfig",
    "ObjectiveWeights",
    "PsoParams",
    "RunMetrics",
    "Scenario",
    "Task",
    "TaskOutcome",
    "WorkloadConfig",
    "generate_scenario",
    "load_scenario",
    "run",
    "save_scenario",
]

__version__ = "0.1.0"

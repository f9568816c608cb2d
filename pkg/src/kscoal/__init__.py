"""Distributed K-serial stable coalition formation with verifiable stability.

Modules: core (assignment algebra), engine (the distributed search),
netsim (round-based delivery), oracle (brute-force ground truth), tasks
(utility surrogates and pursuit geometry), worldsim (dynamic scenarios),
instances (schemas and generators), cli (command line).
"""

__version__ = "0.1.0"

from .core import (
    Assignment,
    Chain,
    CoalitionStructure,
    Switch,
    TableUtility,
    TaskDescriptor,
    TaskKind,
    UtilityFunction,
    apply_chain,
    apply_switch,
    delta_utility,
    marginal_utility,
    mean_utility,
    validate_chain,
)
from .engine import EngineConfig, RunStats, run_to_convergence
from .oracle import OracleReport, brute_force_optimal, is_kss, is_nash_stable

__all__ = [
    "Assignment",
    "Chain",
    "CoalitionStructure",
    "EngineConfig",
    "OracleReport",
    "RunStats",
    "Switch",
    "TableUtility",
    "TaskDescriptor",
    "TaskKind",
    "UtilityFunction",
    "apply_chain",
    "apply_switch",
    "brute_force_optimal",
    "delta_utility",
    "is_kss",
    "is_nash_stable",
    "marginal_utility",
    "mean_utility",
    "run_to_convergence",
    "validate_chain",
]

"""Loadability-aware placement and sizing of PV distributed generation on radial feeders."""

from .allocation import (AllocationConfig, DGUnit, MonteCarloResult, NoFeasibleTrial, TrialResult,
                         apply_dg, evaluate_trial, objective, run_monte_carlo, sample_trial,
                         voltage_deviation)
from .case import (BranchRecord, BusKind, BusRecord, CaseFormatError, NetworkCase, SlackLimits,
                   builtin_ieee33, load_case, parse_case, serialize_case, validate_radial)
from .estimators import LoadabilityAnalyzer, MonteCarloDGAllocator
from .loadability import (BaseCaseInfeasible, ConstraintSet, LoadabilityRecord, bus_loadability,
                          check_constraints, network_loadability, rank_candidates,
                          simultaneous_loadability)
from .powerflow import (NonConvergence, PowerFlowSolution, branch_currents, line_flows, solve,
                        total_active_loss)

__version__ = "0.1.0"

__all__ = [
    "AllocationConfig", "BaseCaseInfeasible", "BranchRecord", "BusKind", "BusRecord",
    "CaseFormatError", "ConstraintSet", "DGUnit", "LoadabilityAnalyzer", "LoadabilityRecord",
    "MonteCarloDGAllocator", "MonteCarloResult", "NetworkCase", "NoFeasibleTrial",
    "NonConvergence", "PowerFlowSolution", "SlackLimits", "TrialResult", "apply_dg",
    "branch_currents", "builtin_ieee33", "bus_loadability", "check_constraints",
    "evaluate_trial", "line_flows", "load_case", "network_loadability", "objective",
    "parse_case", "rank_candidates", "run_monte_carlo", "sample_trial", "serialize_case",
    "simultaneous_loadability", "solve", "total_active_loss", "validate_radial",
    "voltage_deviation",
]

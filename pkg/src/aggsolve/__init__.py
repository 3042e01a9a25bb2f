"""Distributed solvers for stochastic aggregative games over time-varying networks."""
from .errors import (
    AggsolveError, ConfigurationError, NumericError, UnsupportedOperationError, ValidationError,
)
from .kernels import BACKEND
from .game import (
    Ball, BalancedCapacitySet, Box, CustomProx, GameSpec, Indicator, L1, NoiseModel, PlayerSpec,
    Polyhedron, affine_player, aggregate, check_monotone, fixed_point_residual, phi,
)
from .network import GraphSchedule, mixing_constants, metropolis_weights, mixing_diagnostics
from .schedules import ParamSchedules, validate_basic, validate_corollary1, validate_hierarchical
from .metrics import RunTrace, consensus_error, gap, gap_hierarchical, residual_metric
from .tikhonov import RunConfig, run_algorithm1, run_centralized
from .hierarchical import (
    HierarchicalTerm, LowerVI, abs_term, grad_estimator, max_affine_term, run_algorithm2,
    solve_lower_vi, zero_term,
)
from .experiment import compare_regularization, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AggsolveError", "ConfigurationError", "NumericError", "UnsupportedOperationError",
    "ValidationError", "BACKEND", "Ball", "BalancedCapacitySet", "Box", "CustomProx", "GameSpec",
    "Indicator", "L1", "NoiseModel", "PlayerSpec", "Polyhedron", "affine_player", "aggregate",
    "check_monotone", "fixed_point_residual", "phi", "GraphSchedule", "mixing_constants",
    "metropolis_weights", "mixing_diagnostics", "ParamSchedules", "validate_basic",
    "validate_corollary1", "validate_hierarchical", "RunTrace", "consensus_error", "gap",
    "gap_hierarchical", "residual_metric", "RunConfig", "run_algorithm1", "run_centralized",
    "HierarchicalTerm", "LowerVI", "abs_term", "grad_estimator", "max_affine_term",
    "run_algorithm2", "solve_lower_vi", "zero_term", "compare_regularization", "run_experiment",
]

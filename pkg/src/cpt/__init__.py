"""Exact finite-sample tests for fixed-design linear models with exchangeable errors."""

__version__ = "0.1.0"

from .construction import (  # noqa: E402
    ConstructionError,
    EtaSystem,
    ShiftPlan,
    build_B,
    objective,
    shift_operator,
    solve_eta,
    solve_eta_general,
    solve_eta_r1,
    solve_validity_only,
)
from .hypothesis import ContrastSpec, HypothesisError, ReducedProblem, reduce  # noqa: E402
from .ordering import OrderingConfig, OrderingSolution, ga_optimize, stochastic_search  # noqa: E402
from .rank_test import CPTResult, CyclicStatistics, center, cpt, marginal_rank_test, statistics  # noqa: E402
from .ci import InversionResult, confidence_interval, invert  # noqa: E402

__all__ = [
    "CPTResult", "ConstructionError", "ContrastSpec", "CyclicStatistics", "EtaSystem",
    "HypothesisError", "InversionResult", "OrderingConfig", "OrderingSolution",
    "ReducedProblem", "ShiftPlan", "build_B", "center", "confidence_interval", "cpt",
    "ga_optimize", "invert", "marginal_rank_test", "objective", "reduce", "shift_operator",
    "solve_eta", "solve_eta_general", "solve_eta_r1", "solve_validity_only", "statistics",
    "stochastic_search",
]

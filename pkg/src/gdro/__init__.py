"""Solvers and verification harness for doubly constrained backward
equations under volatility uncertainty.

Two independent solvers are provided for the same double-obstacle problem:
an adversarial Markov-chain lattice (``gdro.lattice``) and a monotone
explicit finite-difference scheme (``gdro.pde``), cross-validated and
stress-tested by the harness in ``gdro.convergence``.
"""

from .expr import eval_expr, format_expr, parse_expr
from .gcore import (Grid, PenaltyParams, ProblemSpec, StabilityError,
                    ValidationReport, VolatilityBand, g_eval, validate_problem)
from .lattice import (SolutionField, conditional_g_expectation, double_ladder,
                      penalized_sweep, reflected_sweep)
from .pde import (PdeSchemeParams, complementarity_residual, f_operator,
                  solve_double_obstacle_direct, solve_penalized_pde)
from .convergence import (ConvergenceReport, asc_residuals, cross_validate,
                          monotone_ladder, stability_probe)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceReport", "Grid", "PdeSchemeParams", "PenaltyParams",
    "ProblemSpec", "SolutionField", "StabilityError", "ValidationReport",
    "VolatilityBand", "asc_residuals", "complementarity_residual",
    "conditional_g_expectation", "cross_validate", "double_ladder",
    "eval_expr", "f_operator", "format_expr", "g_eval", "monotone_ladder",
    "parse_expr", "penalized_sweep", "reflected_sweep",
    "solve_double_obstacle_direct", "solve_penalized_pde",
    "stability_probe", "validate_problem",
]

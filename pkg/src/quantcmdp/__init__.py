"""Finite-state approximation of continuous-state constrained MDPs.

Continuous models are quantized onto product grids, the finite models are
solved through their occupation-measure linear programs (discounted or
average cost), optimal finite policies are extended back to the box with a
constraint tightening that keeps them feasible, and explicit convergence
rates give grid sizes for a target accuracy.
"""

from .average import AverageSolution, solve_average
from .discounted import DiscountedSolution, solve_discounted
from .evaluate import EvaluationReport, exact_eval_finite, mc_eval_original
from .model import ContinuousCMDP, load_model, model_from_spec, save_model, validate_model
from .policy import (
    ExtendedPolicy,
    InfeasibleError,
    StationaryPolicy,
    choose_eps,
    extend_policy,
    perturbed_solve,
    solve_finite,
)
from .quantize import FiniteCMDP, Grid, build_finite_model, build_grid, quantize_point
from .rates import RateConstants, grid_threshold_average, grid_threshold_discounted

__version__ = "0.1.0"

__all__ = [
    "AverageSolution",
    "ContinuousCMDP",
    "DiscountedSolution",
    "EvaluationReport",
    "ExtendedPolicy",
    "FiniteCMDP",
    "Grid",
    "InfeasibleError",
    "RateConstants",
    "StationaryPolicy",
    "build_finite_model",
    "build_grid",
    "choose_eps",
    "exact_eval_finite",
    "extend_policy",
    "grid_threshold_average",
    "grid_threshold_discounted",
    "load_model",
    "mc_eval_original",
    "model_from_spec",
    "perturbed_solve",
    "quantize_point",
    "save_model",
    "solve_average",
    "solve_discounted",
    "solve_finite",
    "validate_model",
]

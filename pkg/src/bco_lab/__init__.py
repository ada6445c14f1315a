"""Projection-free bandit convex optimization: constraint sets, losses,
one-point gradient estimation, learners, an experiment harness and
numerical checks of the regret analysis."""

from .analysis import best_fixed_point, compute_regret, diagnostic_suite, fit_slope, theorem_bound
from .estimator import SmoothingParams, one_point_gradient, smoothed_gradient_mc, smoothed_value_mc
from .geometry import Ball, BoxPolytope, NuclearNormBall, ShiftedSimplex, ShrunkenSet, lmo, project, contains
from .harness import ExperimentConfig, RunTrace, emit_csv, run_experiment
from .learners import FKM, DoublingWrapper, Pfbco, PfbcoParams, StochOCG, Unregularized, doubling_wrap

__version__ = "0.1.0"

__all__ = [
    "Ball", "BoxPolytope", "NuclearNormBall", "ShiftedSimplex", "ShrunkenSet", "lmo", "project", "contains",
    "SmoothingParams", "one_point_gradient", "smoothed_value_mc", "smoothed_gradient_mc",
    "Pfbco", "PfbcoParams", "Unregularized", "StochOCG", "FKM", "DoublingWrapper", "doubling_wrap",
    "ExperimentConfig", "RunTrace", "run_experiment", "emit_csv",
    "best_fixed_point", "compute_regret", "fit_slope", "theorem_bound", "diagnostic_suite",
]

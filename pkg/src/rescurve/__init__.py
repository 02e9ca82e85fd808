"""Tikhonov residual-curve analysis.

Trace ``r(alpha) = ||A x_alpha - y||`` over a geometric grid of
regularization parameters, read off the source smoothness ``mu`` and the
noise level ``delta``, and choose ``alpha`` by several rules.
"""

from .analysis import (
    NoiseEstimate,
    ResidualCurve,
    SmoothnessEstimate,
    StageSegmentation,
    Thresholds,
    estimate,
    estimate_noise,
    estimate_smoothness,
    residual_curve,
    segment_stages,
)
from .operators import DenseOperator, DiagonalOperator, normalize
from .param_choice import ChoiceResult, compare_rules
from .problems import NoiseSpec, ProblemInstance, SmoothnessSpec, add_noise, make_model_problem, make_spectral_problem
from .solver import AlphaGrid, Sweep, TikhonovResult, sweep

__version__ = "0.1.0"

__all__ = [
    "AlphaGrid",
    "ChoiceResult",
    "DenseOperator",
    "DiagonalOperator",
    "NoiseEstimate",
    "NoiseSpec",
    "ProblemInstance",
    "ResidualCurve",
    "SmoothnessEstimate",
    "SmoothnessSpec",
    "StageSegmentation",
    "Sweep",
    "Thresholds",
    "TikhonovResult",
    "add_noise",
    "compare_rules",
    "estimate",
    "estimate_noise",
    "estimate_smoothness",
    "make_model_problem",
    "make_spectral_problem",
    "normalize",
    "residual_curve",
    "segment_stages",
    "sweep",
]

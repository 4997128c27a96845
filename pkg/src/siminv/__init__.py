"""Desk-scale DDIM inversion and symmetric-guidance editing lab."""

from siminv.schedule import NoiseSchedule, make_linear_schedule, subsample
from siminv.predictor import (
    NULL,
    AnalyticMixture,
    Condition,
    CountingPredictor,
    GaussianMixture,
    analytic_eps,
    guided_eps,
    text,
)
from siminv.ddim import (
    ConvergenceError,
    Trajectory,
    exact_inversion_step,
    generate,
    generation_step,
    invert,
    inversion_step,
)
from siminv.editing import EditResult, GuidanceConfig, TransferHook, edit, reconstruction_error
from siminv.errors import DegenerateError, ParameterError, TrainingError

__all__ = [
    "NULL",
    "AnalyticMixture",
    "Condition",
    "ConvergenceError",
    "CountingPredictor",
    "DegenerateError",
    "EditResult",
    "GaussianMixture",
    "GuidanceConfig",
    "NoiseSchedule",
    "ParameterError",
    "TrainingError",
    "Trajectory",
    "TransferHook",
    "analytic_eps",
    "edit",
    "exact_inversion_step",
    "generate",
    "generation_step",
    "guided_eps",
    "invert",
    "inversion_step",
    "make_linear_schedule",
    "reconstruction_error",
    "subsample",
    "text",
]

__version__ = "0.1.0"

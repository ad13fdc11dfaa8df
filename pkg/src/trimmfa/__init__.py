"""Robust mixtures of factor analyzers: trimmed, constrained AECM fitting."""

from .aecm import TRIMMED, FitConfig, FitResult, classify_trimmed, e_step_trim, fit, trimmed_target
from .constraints import TruncationProblem, optimal_threshold
from .datagen import NOISE, POINTWISE, ScenarioSpec, generate, scenario
from .estimator import TrimmedMFA
from .evaluation import ExperimentReport, bias_mse, misclassification_error, run_experiment
from .exceptions import AllStartsFailedError, FitError
from .lowrank import ComponentKernel
from .model import ConstraintBounds, DataMatrix, MfaParams, check_constraints, parameter_count

__version__ = "0.1.0"

__all__ = [
    "TRIMMED", "NOISE", "POINTWISE",
    "FitConfig", "FitResult", "fit", "e_step_trim", "trimmed_target", "classify_trimmed",
    "TruncationProblem", "optimal_threshold",
    "ScenarioSpec", "scenario", "generate",
    "TrimmedMFA",
    "ExperimentReport", "bias_mse", "misclassification_error", "run_experiment",
    "FitError", "AllStartsFailedError",
    "ComponentKernel",
    "MfaParams", "ConstraintBounds", "DataMatrix", "check_constraints", "parameter_count",
]

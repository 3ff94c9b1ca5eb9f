"""Semiparametric mixture regression for binomial counts with unknown sizes."""

__version__ = "0.1.0"

from .bootstrap import BootstrapResult, bootstrap_ci, nonparametric_resample, parametric_resample
from .dataio import InputError, load_dataset, mbovis_path
from .ecm import FitConfig, FitResult, PosteriorWeights, fit, fit_multistart, initialize
from .model import (
    Dataset,
    DegenerateComponentError,
    DegenerateLikelihoodError,
    MixingDistribution,
    ModelError,
    ModelParams,
    fitted_values,
    logistic,
    mixture_log_likelihood,
)
from .selection import SelectionResult, bic, forward_search
from .simulation import SETTINGS, SettingSummary, generate_sample, run_design

__all__ = [
    "BootstrapResult",
    "Dataset",
    "DegenerateComponentError",
    "DegenerateLikelihoodError",
    "FitConfig",
    "FitResult",
    "InputError",
    "MixingDistribution",
    "ModelError",
    "ModelParams",
    "PosteriorWeights",
    "SETTINGS",
    "SelectionResult",
    "SettingSummary",
    "bic",
    "bootstrap_ci",
    "fit",
    "fit_multistart",
    "fitted_values",
    "forward_search",
    "generate_sample",
    "initialize",
    "load_dataset",
    "logistic",
    "mbovis_path",
    "mixture_log_likelihood",
    "nonparametric_resample",
    "parametric_resample",
    "run_design",
]

"""Bayesian fMRI activation detection with a Gaussian-process prior on the predicted BOLD."""
from .ar import ArPrior, autocovariances, companion_matrix, is_stationary, prewhiten_columns, \
    prewhiten_rows, simulate_ar
from .baselines import FirSpec, fit_fixed, fit_fixed_with_derivative, fit_smooth_fir
from .errors import DegenerateInputError, GpBoldError, NumericalError, ShapeError
from .evaluation import activity_map, average_roc, ppm, roc_curve, t_ratio
from .gibbs import ModelSpec, ParcelData, PosteriorDraws, SamplerSettings, default_spec, \
    run_chain, run_gibbs
from .identify import identified, match_permutation, transform
from .kernel import GpPrior, KernelHyper, build_gp_prior, matern52
from .paradigm import Event, HrfParams, MeanFunction, Paradigm, block_paradigm, \
    build_mean_function, double_gamma
from .simulation import SimulationConfig, StudyConfig, generate_dataset, run_study

__version__ = "0.1.0"

__all__ = [
    "ArPrior",
    "DegenerateInputError",
    "Event",
    "FirSpec",
    "GpBoldError",
    "GpPrior",
    "HrfParams",
    "KernelHyper",
    "MeanFunction",
    "ModelSpec",
    "NumericalError",
    "Paradigm",
    "ParcelData",
    "PosteriorDraws",
    "SamplerSettings",
    "ShapeError",
    "SimulationConfig",
    "StudyConfig",
    "activity_map",
    "autocovariances",
    "average_roc",
    "block_paradigm",
    "build_gp_prior",
    "build_mean_function",
    "companion_matrix",
    "default_spec",
    "double_gamma",
    "fit_fixed",
    "fit_fixed_with_derivative",
    "fit_smooth_fir",
    "generate_dataset",
    "identified",
    "is_stationary",
    "match_permutation",
    "matern52",
    "ppm",
    "prewhiten_columns",
    "prewhiten_rows",
    "roc_curve",
    "run_chain",
    "run_gibbs",
    "run_study",
    "simulate_ar",
    "t_ratio",
    "transform",
]

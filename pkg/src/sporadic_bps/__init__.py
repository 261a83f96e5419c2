"""Coherent Bayesian predictive synthesis for sporadic forecaster panels."""

from .baselines import WeightVector, asmi_impute, ew_pool, inverse_mse_weights, locf_impute
from .coherence import CoherenceConfig, apply_turnover, entry_operator, exit_operator
from .density import (
    DensityError, EmptyActiveSetError, ExpertDensity, GaussianDensity, HistogramDensity,
    moment_match_histogram, mixture_logpdf, student_t_logpdf,
)
from .dlm import DiscountConfig, FilterState, PriorMoments, ffbs_sample, filter_update, forward_filter
from .evaluation import BacktestResult, EvalConfig, MethodSpec, lpdr, relative_rmse, rmse, run_backtest
from .linalg import NumericalFailure
from .mcmc import McmcConfig, PosteriorDraws, SamplerFailure, predictive_distribution, run_mcmc
from .panel import (
    PanelDataset, PanelError, SchemaConfig, SyntheticConfig, generate_synthetic_panel,
    interpolate_training_window, parse_panel_csv, write_panel_csv,
)
from .predictive import PredictiveDistribution

__all__ = [
    "WeightVector", "asmi_impute", "ew_pool", "inverse_mse_weights", "locf_impute", "CoherenceConfig",
    "apply_turnover", "entry_operator", "exit_operator", "DensityError", "EmptyActiveSetError",
    "ExpertDensity", "GaussianDensity", "HistogramDensity", "moment_match_histogram", "mixture_logpdf",
    "student_t_logpdf", "DiscountConfig", "FilterState", "PriorMoments", "ffbs_sample", "filter_update",
    "forward_filter", "BacktestResult", "EvalConfig", "MethodSpec", "lpdr", "relative_rmse", "rmse",
    "run_backtest", "NumericalFailure", "McmcConfig", "PosteriorDraws", "SamplerFailure",
    "predictive_distribution", "run_mcmc", "PanelDataset", "PanelError", "SchemaConfig", "SyntheticConfig",
    "generate_synthetic_panel", "interpolate_training_window", "parse_panel_csv", "write_panel_csv",
    "PredictiveDistribution",
]

__version__ = "0.1.0"

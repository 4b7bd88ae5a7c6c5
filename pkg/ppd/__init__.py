"""
Posterior-predictive approximation by refitting on self-predicted data.

The engines (SSLA, ASSLA, Laplace Monte Carlo) live in ``ppd.predictive``;
``ppd.oracles`` holds the closed-form and quadrature ground truths they are
validated against.
"""
from .curvature import (
    CurvatureMatrix,
    build_curvature,
    curvature_blocked,
    curvature_dense,
    curvature_diagonal,
    curvature_ggn,
    log_det,
    logdet_increment,
    rank_one_logdet_increment,
)
from .data import Dataset, Observation, ParameterVector, PseudoObservation
from .errors import (
    ConfigurationError,
    DomainError,
    IngestionError,
    NumericError,
    PPDError,
    PredictiveError,
    UnsupportedError,
)
from .metrics import (
    CalibrationReport,
    calibration_report,
    crps,
    empirical_coverage,
    entropy_grid,
    gaussian_crps,
    kl_grid,
    nll,
    total_variation,
)
from .models import LikelihoodModel, log_likelihood, per_sample_gradient, predict
from .optimizer import FitConfig, FitResult, fit_map, refit_augmented
from .predictive import (
    CredibleInterval,
    GridConfig,
    PredictiveGrid,
    assla_log_ppd,
    credible_interval,
    grid_moments,
    laplace_mc_ppd,
    normalize_grid,
    plugin_log_ppd,
    ssla_log_ppd,
)
from .priors import Prior, log_prior

__all__ = [
    'CurvatureMatrix', 'build_curvature', 'curvature_blocked', 'curvature_dense', 'curvature_diagonal',
    'curvature_ggn', 'log_det', 'logdet_increment', 'rank_one_logdet_increment',
    'Dataset', 'Observation', 'ParameterVector', 'PseudoObservation',
    'PPDError', 'ConfigurationError', 'DomainError', 'IngestionError', 'NumericError', 'PredictiveError',
    'UnsupportedError',
    'CalibrationReport', 'calibration_report', 'crps', 'empirical_coverage', 'entropy_grid', 'gaussian_crps',
    'kl_grid', 'nll', 'total_variation',
    'LikelihoodModel', 'log_likelihood', 'per_sample_gradient', 'predict',
    'FitConfig', 'FitResult', 'fit_map', 'refit_augmented',
    'CredibleInterval', 'GridConfig', 'PredictiveGrid', 'assla_log_ppd', 'credible_interval', 'grid_moments',
    'laplace_mc_ppd', 'normalize_grid', 'plugin_log_ppd', 'ssla_log_ppd',
    'Prior', 'log_prior',
]

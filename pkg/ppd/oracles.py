"""
Ground-truth posterior predictives.

Closed forms for the Normal-Normal, Poisson-Gamma and conjugate Bayesian
linear regression models, plus a tensor-grid quadrature oracle for any
model with at most two parameters.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import linalg, stats
from scipy.special import logsumexp

from .config import EngineDefaults
from .curvature import curvature_dense
from .data import Dataset
from .errors import ConfigurationError, DomainError, NumericError, UnsupportedError
from .models import LikelihoodModel
from .optimizer import FitConfig, FitResult, fit_map
from .predictive import PredictiveGrid, normalize_grid
from .priors import Prior

logger = logging.getLogger(__name__)


def _targets(data) -> np.ndarray:
    if data is None:
        return np.zeros(0)
    if isinstance(data, Dataset):
        return np.asarray(data.y, dtype=float)
    return np.asarray(data, dtype=float).reshape(-1)


# ----------------------------------------------------------------------
# Normal-Normal
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class NormalNormalSpec:
    """Known-variance Gaussian with a N(mu0, tau0_sq) prior on the mean."""
    mu0: float = 4.0
    tau0_sq: float = 1.0
    sigma_sq: float = 2.0

    def __post_init__(self):
        if not (self.tau0_sq > 0 and self.sigma_sq > 0):
            raise ConfigurationError("tau0_sq and sigma_sq must be > 0")


def normal_normal_posterior(spec: NormalNormalSpec, data) -> Tuple[float, float]:
    """(mu_n, sigma_n_sq) of the posterior over the mean."""
    y = _targets(data)
    sigma_n_sq = 1.0 / (y.size / spec.sigma_sq + 1.0 / spec.tau0_sq)
    mu_n = (spec.mu0 / spec.tau0_sq + float(np.sum(y)) / spec.sigma_sq) * sigma_n_sq
    return mu_n, sigma_n_sq


def normal_normal_log_ppd(spec: NormalNormalSpec, data, y):
    mu_n, sigma_n_sq = normal_normal_posterior(spec, data)
    return stats.norm.logpdf(y, loc=mu_n, scale=math.sqrt(sigma_n_sq + spec.sigma_sq))


def normal_normal_ppd(spec: NormalNormalSpec, data, y):
    """N(mu_n, sigma_n_sq + sigma_sq) density at y."""
    return np.exp(normal_normal_log_ppd(spec, data, y))


# ----------------------------------------------------------------------
# Poisson-Gamma
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class PoissonGammaSpec:
    """Poisson counts with a Gamma(alpha, rate beta) prior on the rate."""
    alpha: float = 6.0
    beta: float = 2.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigurationError("alpha and beta must be > 0")


def poisson_gamma_posterior(spec: PoissonGammaSpec, data) -> Tuple[float, float]:
    """Negative-binomial (r, p) with r = sum + alpha, p = (n + beta) / (n + beta + 1)."""
    y = _targets(data)
    r = float(np.sum(y)) + spec.alpha
    p = (y.size + spec.beta) / (y.size + spec.beta + 1.0)
    return r, p


def _check_counts(k):
    k = np.asarray(k, dtype=float)
    if np.any(k < 0) or np.any(k != np.round(k)):
        raise DomainError(f"Counts must be non-negative integers, got {k.tolist()}", operation="poisson_gamma_ppd")
    return k


def poisson_gamma_log_ppd(spec: PoissonGammaSpec, data, k):
    r, p = poisson_gamma_posterior(spec, data)
    return stats.nbinom.logpmf(_check_counts(k), r, p)


def poisson_gamma_ppd(spec: PoissonGammaSpec, data, k):
    """NegBin pmf with the convention pmf(0) = p ** r."""
    r, p = poisson_gamma_posterior(spec, data)
    return stats.nbinom.pmf(_check_counts(k), r, p)


# ----------------------------------------------------------------------
# Bayesian linear regression
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class BlrSpec:
    """y = X beta + N(0, sigma_sq), beta ~ N(beta0, Sigma0)."""
    beta0: np.ndarray
    Sigma0: np.ndarray
    sigma_sq: float = 1.0

    def __post_init__(self):
        beta0 = np.atleast_1d(np.asarray(self.beta0, dtype=float))
        Sigma0 = np.atleast_2d(np.asarray(self.Sigma0, dtype=float))
        if Sigma0.shape != (beta0.size, beta0.size):
            raise ConfigurationError(f"Sigma0 shape {Sigma0.shape} does not match beta0 size {beta0.size}")
        if not np.allclose(Sigma0, Sigma0.T):
            raise ConfigurationError("Sigma0 must be symmetric")
        try:
            linalg.cholesky(Sigma0, lower=True)
        except linalg.LinAlgError:
            raise ConfigurationError("Sigma0 must be positive definite (it is singular or indefinite)")
        if not self.sigma_sq > 0:
            raise ConfigurationError("sigma_sq must be > 0")
        object.__setattr__(self, 'beta0', beta0)
        object.__setattr__(self, 'Sigma0', Sigma0)


def blr_posterior(spec: BlrSpec, X, y) -> Tuple[np.ndarray, np.ndarray]:
    """(beta_n, Sigma_n) with Sigma_n^-1 = X^T X / sigma_sq + Sigma0^-1."""
    p = spec.beta0.size
    X = np.asarray(X, dtype=float).reshape(-1, p)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.size:
        raise ConfigurationError(f"Design has {X.shape[0]} rows but {y.size} targets")
    prior_prec = linalg.cho_solve(linalg.cho_factor(spec.Sigma0), np.eye(p))
    post_prec = X.T @ X / spec.sigma_sq + prior_prec
    factor = linalg.cho_factor(post_prec)
    Sigma_n = linalg.cho_solve(factor, np.eye(p))
    beta_n = linalg.cho_solve(factor, X.T @ y / spec.sigma_sq + prior_prec @ spec.beta0)
    return beta_n, 0.5 * (Sigma_n + Sigma_n.T)


def blr_log_ppd(spec: BlrSpec, X, y, x_new, y_query):
    beta_n, Sigma_n = blr_posterior(spec, X, y)
    x_new = np.asarray(x_new, dtype=float).reshape(-1)
    if x_new.size != spec.beta0.size:
        raise ConfigurationError(f"x_new has dimension {x_new.size}, expected {spec.beta0.size}")
    var = spec.sigma_sq + float(x_new @ Sigma_n @ x_new)
    return stats.norm.logpdf(y_query, loc=float(x_new @ beta_n), scale=math.sqrt(var))


def blr_ppd(spec: BlrSpec, X, y, x_new, y_query):
    """N(x_new^T beta_n, sigma_sq + x_new^T Sigma_n x_new) density at y_query."""
    return np.exp(blr_log_ppd(spec, X, y, x_new, y_query))


# ----------------------------------------------------------------------
# Grids from the closed forms
# ----------------------------------------------------------------------

OracleSpec = Union[NormalNormalSpec, PoissonGammaSpec]


def analytic_grid(spec: OracleSpec, data, y_values) -> PredictiveGrid:
    """Normalized grid of a closed-form predictive (integer support for Poisson-Gamma)."""
    y_values = np.asarray(y_values, dtype=float)
    if isinstance(spec, NormalNormalSpec):
        grid = PredictiveGrid(y_values, normal_normal_log_ppd(spec, data, y_values), engine="analytic")
    elif isinstance(spec, PoissonGammaSpec):
        grid = PredictiveGrid(y_values, poisson_gamma_log_ppd(spec, data, y_values),
                              discrete=True, engine="analytic")
    else:
        raise ConfigurationError(f"No analytic grid for {type(spec).__name__}")
    return normalize_grid(grid)


def blr_grid(spec: BlrSpec, X, y, x_new, y_values) -> PredictiveGrid:
    y_values = np.asarray(y_values, dtype=float)
    return normalize_grid(PredictiveGrid(y_values, blr_log_ppd(spec, X, y, x_new, y_values), engine="analytic"))


# ----------------------------------------------------------------------
# Quadrature
# ----------------------------------------------------------------------

class QuadratureOracle:
    """
    Brute-force posterior on a tensor grid around the MAP.

    Each axis spans +-half_width posterior sd (from the dense curvature at
    the MAP) with ``points`` nodes. The log-likelihood is accumulated one
    data point at a time so memory stays at one value per node.
    """

    def __init__(self, model: LikelihoodModel, prior: Prior, data: Dataset, fit: Optional[FitResult] = None,
                 points: int = EngineDefaults.QUADRATURE_POINTS,
                 half_width: float = EngineDefaults.QUADRATURE_HALF_WIDTH):
        if model.q > 2:
            raise UnsupportedError(f"Quadrature supports q <= 2, got q={model.q}", operation="quadrature_ppd")
        self.model = model
        self.logger = logging.getLogger(__name__)

        if fit is None:
            fit = fit_map(model, prior, data, FitConfig()) if data.n else None
        center = fit.theta if fit is not None else model.initial_theta(data)
        sd = self._posterior_sd(model, prior, data, center)

        axes = [c + np.linspace(-half_width * s, half_width * s, points) for c, s in zip(center, sd)]
        mesh = np.meshgrid(*axes, indexing='ij')
        self.thetas = np.stack([m.ravel() for m in mesh], axis=1)

        # trapezoid weights per axis, combined as an outer product
        log_w = np.zeros(self.thetas.shape[0])
        for axis_index, axis in enumerate(axes):
            w = np.full(points, axis[1] - axis[0])
            w[0] = w[-1] = 0.5 * (axis[1] - axis[0])
            shape = [1] * len(axes)
            shape[axis_index] = points
            log_w = log_w + np.broadcast_to(np.log(w).reshape(shape), [points] * len(axes)).ravel()

        with np.errstate(divide='ignore', invalid='ignore'):
            log_post = np.asarray(prior.log_density(self.thetas), dtype=float).reshape(-1).copy()
            for i in range(data.n):
                f = model.predictor.outputs_for_params(self.thetas, data.X[i])
                log_post += model.family.log_prob(f, np.full(self.thetas.shape[0], data.y[i]))
        log_post = np.where(np.isnan(log_post), -np.inf, log_post)
        log_z = logsumexp(log_post + log_w)
        if not math.isfinite(log_z):
            raise NumericError("Quadrature posterior mass underflowed", operation="quadrature_ppd")
        self.log_weights = log_post + log_w - log_z
        self.logger.debug(f"[quadrature] {self.thetas.shape[0]} nodes, log Z={log_z:.6f}")

    @staticmethod
    def _posterior_sd(model, prior, data, center) -> np.ndarray:
        try:
            curv = curvature_dense(model, prior, data, center)
            sd = np.sqrt(np.diag(curv.solve(np.eye(model.q))))
        except NumericError:
            sd = np.ones(model.q)
        return np.where(np.isfinite(sd) & (sd > 0), sd, 1.0)

    def log_ppd(self, x, y):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        f = self.model.predictor.outputs_for_params(self.thetas, x)
        out = np.empty(y.size)
        with np.errstate(divide='ignore', invalid='ignore'):
            for j, value in enumerate(y):
                terms = self.model.family.log_prob(f, np.full(self.thetas.shape[0], value))
                terms = np.where(np.isnan(terms), -np.inf, terms)
                out[j] = logsumexp(self.log_weights + terms)
        return out

    def ppd(self, x, y):
        return np.exp(self.log_ppd(x, y))


def quadrature_ppd(model: LikelihoodModel, prior: Prior, data: Dataset, x_test, y,
                   fit: Optional[FitResult] = None, points: int = EngineDefaults.QUADRATURE_POINTS,
                   half_width: float = EngineDefaults.QUADRATURE_HALF_WIDTH):
    """
    Integral of p(y | x, theta) p(theta | D) d theta by tensor-grid quadrature.

    Returns a float for scalar ``y``, an array otherwise.
    """
    oracle = QuadratureOracle(model, prior, data, fit, points, half_width)
    values = oracle.ppd(x_test, y)
    return float(values[0]) if np.ndim(y) == 0 else values

"""
Posterior-predictive engines on a grid of candidate targets.

    ssla_log_ppd     refit with each candidate appended as a pseudo-observation
    assla_log_ppd    refit-free local expansion around theta_hat
    laplace_mc_ppd   Monte Carlo over the Gaussian (Laplace) parameter posterior
    plugin_log_ppd   p(y | x, theta_hat)

Engines return unnormalized grids; ``normalize_grid`` turns them into
proper densities (or pmfs on integer support).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import logsumexp

from .config import EngineDefaults, worker_count
from .curvature import CurvatureMatrix, build_curvature, logdet_increment, rank_one_logdet_increment
from .data import Dataset, PseudoObservation, as_theta
from .errors import ConfigurationError, NumericError, PredictiveError
from .models import LikelihoodModel
from .optimizer import FitConfig, FitResult, refit_augmented, refit_budget_config
from .priors import Prior

logger = logging.getLogger(__name__)

ENGINES = ("ssla", "assla", "la-mc", "plugin")


@dataclass
class GridConfig:
    """
    Target grid: ``count`` points over +-``span`` plug-in predictive sd.

    ``center=None`` centres on the self-prediction. ``values`` pins an
    explicit grid (used for integer support on count models).
    """
    count: int = EngineDefaults.GRID_COUNT
    span: float = EngineDefaults.GRID_SPAN
    center: Optional[float] = None
    values: Optional[Tuple[float, ...]] = None
    discrete: bool = False
    max_failed_fraction: float = EngineDefaults.MAX_FAILED_FRACTION

    def __post_init__(self):
        if self.values is None:
            if self.count < 3 or self.count % 2 == 0:
                raise ConfigurationError(f"Grid count must be odd and >= 3, got {self.count}")
            if not self.span > 0:
                raise ConfigurationError(f"Grid span must be > 0, got {self.span}")
        else:
            self.values = tuple(float(v) for v in self.values)
            if len(self.values) < 3 or np.any(np.diff(self.values) <= 0):
                raise ConfigurationError("Explicit grid needs >= 3 strictly increasing values")
        if not 0 <= self.max_failed_fraction < 1:
            raise ConfigurationError("max_failed_fraction must lie in [0, 1)")

    @classmethod
    def integer_support(cls, upper: int, lower: int = 0) -> "GridConfig":
        return cls(values=tuple(range(int(lower), int(upper) + 1)), discrete=True)


@dataclass(frozen=True)
class PredictiveGrid:
    """Log-density sampled on a strictly increasing target grid."""
    y_values: np.ndarray
    log_density: np.ndarray
    normalized: bool = False
    log_normalizer: float = 0.0
    discrete: bool = False
    engine: str = ""
    failed_points: Tuple[float, ...] = ()

    def __post_init__(self):
        y = np.array(self.y_values, dtype=float)
        ld = np.array(self.log_density, dtype=float)
        if y.ndim != 1 or y.shape != ld.shape:
            raise ConfigurationError(f"Grid shapes disagree: {y.shape} vs {ld.shape}")
        if y.size < 2 or np.any(np.diff(y) <= 0):
            raise ConfigurationError("Grid y_values must be strictly increasing")
        y.setflags(write=False)
        ld.setflags(write=False)
        object.__setattr__(self, 'y_values', y)
        object.__setattr__(self, 'log_density', ld)

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.log_density)

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoid integral over the grid (plain sum for integer support)."""
        if self.discrete:
            return float(np.sum(values))
        return float(trapezoid(values, self.y_values))

    def cdf(self) -> np.ndarray:
        p = self.density
        if self.discrete:
            c = np.cumsum(p)
        else:
            c = cumulative_trapezoid(p, self.y_values, initial=0.0)
        return c / c[-1]

    def value_at(self, y: float) -> float:
        """Linearly interpolated log-density (clamped to the grid edges)."""
        return float(np.interp(y, self.y_values, self.log_density))


@dataclass(frozen=True)
class CredibleInterval:
    lower: float
    upper: float
    nominal_level: float

    def __post_init__(self):
        if not 0 < self.nominal_level < 1:
            raise ConfigurationError(f"Credible level must lie in (0, 1), got {self.nominal_level}")
        if not self.lower < self.upper:
            raise ConfigurationError(f"Interval lower {self.lower} must be below upper {self.upper}")

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


# ----------------------------------------------------------------------
# Grids
# ----------------------------------------------------------------------

def build_y_grid(model: LikelihoodModel, theta, x, cfg: GridConfig) -> np.ndarray:
    """Grid centred at the self-prediction (or cfg.center), scaled by the plug-in sd."""
    if cfg.values is not None:
        return np.asarray(cfg.values, dtype=float)
    pred = model.predict(theta, x)
    center = pred.mean if cfg.center is None else float(cfg.center)
    sd = math.sqrt(pred.variance) if pred.variance and pred.variance > 0 else 1.0
    if model.family.DISCRETE:
        lo = max(0, math.floor(center - cfg.span * sd))
        hi = max(lo + 2, math.ceil(center + cfg.span * sd))
        return np.arange(lo, hi + 1, dtype=float)
    return center + np.linspace(-cfg.span * sd, cfg.span * sd, cfg.count)


def _is_discrete(model: LikelihoodModel, cfg: GridConfig) -> bool:
    return cfg.discrete or model.family.DISCRETE


def normalize_grid(grid: PredictiveGrid) -> PredictiveGrid:
    """Subtract the log of the grid integral, computed with a max shift."""
    if grid.y_values.size < 3:
        raise ConfigurationError("Normalization needs at least 3 grid points", operation="normalize_grid")
    ld = grid.log_density
    if np.any(np.isnan(ld)) or np.any(ld == np.inf):
        raise NumericError("Grid contains NaN or +inf log-densities", operation="normalize_grid")
    shift = float(np.max(ld))
    if not math.isfinite(shift):
        raise NumericError("Every grid log-density is -inf", operation="normalize_grid")
    mass = grid.integrate(np.exp(ld - shift))
    if not mass > 0 or not math.isfinite(mass):
        raise NumericError(f"Grid integral underflowed (mass={mass})", operation="normalize_grid")
    log_norm = shift + math.log(mass)
    return replace(grid, log_density=ld - log_norm, normalized=True,
                   log_normalizer=grid.log_normalizer + log_norm)


def credible_interval(grid: PredictiveGrid, level: float) -> CredibleInterval:
    """
    Equal-tailed interval between the (1-level)/2 and (1+level)/2 quantiles.

    On a discrete grid the quantiles are support points; the interval spans
    their cells, half a support spacing either side, so a single-point
    interval still has lower < upper and covers the same integers.
    """
    if not 0 < level < 1:
        raise ConfigurationError(f"Credible level must lie in (0, 1), got {level}", operation="credible_interval")
    if not grid.normalized:
        raise ConfigurationError("credible_interval needs a normalized grid", operation="credible_interval")
    lo_p, hi_p = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    cdf = grid.cdf()
    if grid.discrete:
        lower = grid.y_values[min(int(np.searchsorted(cdf, lo_p, side='left')), cdf.size - 1)]
        upper = grid.y_values[min(int(np.searchsorted(cdf, hi_p, side='left')), cdf.size - 1)]
        half = 0.5 * (float(grid.y_values[1] - grid.y_values[0]) if grid.y_values.size > 1 else 1.0)
        return CredibleInterval(float(lower) - half, float(upper) + half, level)
    return CredibleInterval(_quantile(cdf, grid.y_values, lo_p), _quantile(cdf, grid.y_values, hi_p), level)


def _quantile(cdf: np.ndarray, y: np.ndarray, p: float) -> float:
    """Linear interpolation of the inverse CDF; flat stretches resolve to their left end."""
    index = int(np.searchsorted(cdf, p, side='left'))
    if index <= 0:
        return float(y[0])
    if index >= cdf.size:
        return float(y[-1])
    c0, c1 = cdf[index - 1], cdf[index]
    w = 0.0 if c1 == c0 else (p - c0) / (c1 - c0)
    return float(y[index - 1] + w * (y[index] - y[index - 1]))


def grid_moments(grid: PredictiveGrid) -> Tuple[float, float]:
    """(mean, standard deviation) of a normalized grid."""
    p = grid.density
    mean = grid.integrate(grid.y_values * p)
    var = grid.integrate((grid.y_values - mean) ** 2 * p)
    return mean, math.sqrt(max(var, 0.0))


# ----------------------------------------------------------------------
# Parallel evaluation
# ----------------------------------------------------------------------

def _evaluate_points(fn: Callable[[float], float], y_values: np.ndarray, threads: Optional[int],
                     label: str) -> Tuple[np.ndarray, List[int]]:
    """Evaluate fn at every grid point; failures come back as NaN plus their indices."""
    values = np.full(y_values.size, np.nan)
    failed: List[int] = []
    workers = worker_count(threads)

    def run(index):
        return fn(float(y_values[index]))

    if workers == 1:
        for index in range(y_values.size):
            try:
                values[index] = run(index)
            except (NumericError, PredictiveError) as e:
                logger.warning(f"[{label}] grid point y={y_values[index]:.6g} failed: {e}")
                failed.append(index)
        return values, failed

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(run, index): index for index in range(y_values.size)}
        for future in as_completed(futures):
            index = futures[future]
            try:
                values[index] = future.result()
            except (NumericError, PredictiveError) as e:
                logger.warning(f"[{label}] grid point y={y_values[index]:.6g} failed: {e}")
                failed.append(index)
    return values, sorted(failed)


def _fill_failed(y: np.ndarray, values: np.ndarray, failed: Sequence[int], max_fraction: float,
                 label: str) -> np.ndarray:
    if not failed:
        return values
    if len(failed) > max_fraction * y.size:
        raise PredictiveError(
            f"{len(failed)} of {y.size} grid points failed (limit {max_fraction:.0%})",
            operation=label, failed_points=[float(y[i]) for i in failed],
        )
    ok = np.ones(y.size, dtype=bool)
    ok[list(failed)] = False
    filled = values.copy()
    filled[~ok] = np.interp(y[~ok], y[ok], values[ok])
    logger.warning(f"[{label}] interpolated {len(failed)} failed grid point(s)")
    return filled


def _require_fit(fit: FitResult, label: str, require_converged: bool):
    if fit.stationary:
        return
    if require_converged:
        raise PredictiveError(f"{label} needs a converged fit (|grad|={fit.gradient_norm:.3e})",
                              operation=label, iterations=fit.iterations)
    logger.warning(f"[{label}] proceeding from a non-converged fit (|grad|={fit.gradient_norm:.3e})")


# ----------------------------------------------------------------------
# Engines
# ----------------------------------------------------------------------

def ssla_log_ppd(model: LikelihoodModel, prior: Prior, data: Dataset, fit: FitResult, x_test,
                 grid_cfg: Optional[GridConfig] = None, curvature_kind: str = "dense",
                 fit_config: Optional[FitConfig] = None, threads: Optional[int] = None,
                 include_prior: bool = True, require_converged: bool = True) -> PredictiveGrid:
    """
    Self-supervised Laplace approximation of log p(y | x_test, D), up to a constant.

    For each grid target y the model is refit with (x_test, y) as a
    pseudo-observation, and the value combines the likelihood, prior and
    log-determinant changes between theta_hat and the refit theta_tilde.
    Both determinants use the same curvature kind.
    """
    grid_cfg = grid_cfg or GridConfig()
    _require_fit(fit, "ssla_log_ppd", require_converged)
    theta_hat = fit.theta
    x_test = np.atleast_1d(np.asarray(x_test, dtype=float))
    y_values = build_y_grid(model, theta_hat, x_test, grid_cfg)
    refit_cfg = refit_budget_config(fit_config or FitConfig())

    ll_hat = model.log_likelihood(data, theta_hat)
    lp_hat = float(prior.log_density(theta_hat))
    logdet_hat = build_curvature(curvature_kind, model, prior, data, theta_hat,
                                 include_prior=include_prior).log_det()

    def point(y: float) -> float:
        return ssla_point(model, prior, data, theta_hat, x_test, y, curvature_kind, refit_cfg,
                          ll_hat, lp_hat, logdet_hat, include_prior)

    values, failed = _evaluate_points(point, y_values, threads, "ssla")
    values = _fill_failed(y_values, values, failed, grid_cfg.max_failed_fraction, "ssla_log_ppd")
    logger.info(f"[ssla] evaluated {y_values.size} grid points ({len(failed)} interpolated)")
    return PredictiveGrid(y_values, values, discrete=_is_discrete(model, grid_cfg), engine="ssla",
                          failed_points=tuple(float(y_values[i]) for i in failed))


def ssla_point(model, prior, data, theta_hat, x_test, y, curvature_kind, refit_cfg,
               ll_hat, lp_hat, logdet_hat, include_prior=True) -> float:
    """One SSLA value; raises PredictiveError when the refit is not stationary."""
    pseudo = PseudoObservation(x_test, y)
    refit = refit_augmented(model, prior, data, pseudo, theta_hat, refit_cfg)
    if not refit.stationary:
        raise PredictiveError(f"Refit at y={y:.6g} did not converge: {refit.message}",
                              operation="refit_augmented", y=y, gradient_norm=refit.gradient_norm)
    theta_tilde = refit.theta
    logdet_tilde = build_curvature(curvature_kind, model, prior, data, theta_tilde, pseudo=pseudo,
                                   include_prior=include_prior).log_det()
    return ((model.log_likelihood(data, theta_tilde) - ll_hat)
            + (float(prior.log_density(theta_tilde)) - lp_hat)
            + model.log_density(theta_tilde, x_test, y)
            - 0.5 * (logdet_tilde - logdet_hat))


def assla_log_ppd(model: LikelihoodModel, prior: Prior, data: Dataset, fit: FitResult,
                  curv: CurvatureMatrix, x_test, grid_cfg: Optional[GridConfig] = None,
                  require_converged: bool = True) -> PredictiveGrid:
    """
    Refit-free approximation: Delta l(y) - 1/2 Delta J(y) at theta_hat.

    Delta l(y) = log p(y | x, theta_hat) - log p(y_hat | x, theta_hat); Delta J
    is the log-determinant increment of the new observation's curvature.
    No prior term enters once theta_hat is fixed.
    """
    grid_cfg = grid_cfg or GridConfig()
    _require_fit(fit, "assla_log_ppd", require_converged)
    theta_hat = fit.theta
    x_test = np.atleast_1d(np.asarray(x_test, dtype=float))
    if curv.q != model.q:
        raise ConfigurationError(f"Curvature dimension {curv.q} does not match model dimension {model.q}",
                                 operation="assla_log_ppd")
    y_values = build_y_grid(model, theta_hat, x_test, grid_cfg)
    y_hat = model.predict(theta_hat, x_test).mean
    values = assla_values(model, theta_hat, curv, x_test, y_values, y_hat)
    return PredictiveGrid(y_values, values, discrete=_is_discrete(model, grid_cfg), engine="assla")


def assla_values(model: LikelihoodModel, theta_hat, curv: CurvatureMatrix, x_test, y_values,
                 y_hat: float) -> np.ndarray:
    theta_hat = as_theta(theta_hat)
    y_values = np.asarray(y_values, dtype=float)
    delta_l = model.log_density_grid(theta_hat, x_test, y_values) - model.log_density(theta_hat, x_test, y_hat)

    X = np.atleast_2d(x_test)
    J_out, _ = model.output_terms(theta_hat, X, y_hat)
    G = J_out[0]
    f = np.repeat(model.predictor.outputs(theta_hat, X), y_values.size, axis=0)
    S = model.family.output_curvature(f, y_values)

    delta_j = np.empty(y_values.size)
    if G.shape[0] == 1 and curv.structure != "diagonal":
        for i in range(y_values.size):
            delta_j[i] = rank_one_logdet_increment(curv, G[0], max(float(S[i, 0, 0]), 0.0))
    else:
        for i in range(y_values.size):
            delta_j[i] = logdet_increment(curv, G, S[i])
    return np.asarray(delta_l, dtype=float) - 0.5 * delta_j


def laplace_mc_ppd(model: LikelihoodModel, prior: Prior, fit: FitResult, curv: CurvatureMatrix, x_test,
                   n_samples: int = 1000, seed: int = 0, grid_cfg: Optional[GridConfig] = None,
                   require_converged: bool = True) -> PredictiveGrid:
    """
    Classical Laplace baseline: average p(y | x, theta_s) over theta_s ~ N(theta_hat, J^-1).

    Deterministic given ``seed``.
    """
    grid_cfg = grid_cfg or GridConfig()
    if n_samples < EngineDefaults.MC_MIN_SAMPLES:
        raise ConfigurationError(f"laplace_mc_ppd needs n_samples >= {EngineDefaults.MC_MIN_SAMPLES}",
                                 operation="laplace_mc_ppd")
    if prior.q != model.q or curv.q != model.q:
        raise ConfigurationError("Prior, curvature and model dimensions disagree", operation="laplace_mc_ppd")
    _require_fit(fit, "laplace_mc_ppd", require_converged)
    theta_hat = fit.theta
    x_test = np.atleast_1d(np.asarray(x_test, dtype=float))
    y_values = build_y_grid(model, theta_hat, x_test, grid_cfg)

    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, model.q))
    thetas = theta_hat + curv.sample_offsets(z)
    f = model.predictor.outputs_for_params(thetas, x_test)

    values = np.empty(y_values.size)
    log_s = math.log(n_samples)
    for i, y in enumerate(y_values):
        values[i] = logsumexp(model.family.log_prob(f, np.full(n_samples, y))) - log_s
    return PredictiveGrid(y_values, values, discrete=_is_discrete(model, grid_cfg), engine="la-mc")


def plugin_log_ppd(model: LikelihoodModel, fit: FitResult, x_test,
                   grid_cfg: Optional[GridConfig] = None) -> PredictiveGrid:
    """Deterministic plug-in predictive p(y | x, theta_hat)."""
    grid_cfg = grid_cfg or GridConfig()
    x_test = np.atleast_1d(np.asarray(x_test, dtype=float))
    y_values = build_y_grid(model, fit.theta, x_test, grid_cfg)
    values = model.log_density_grid(fit.theta, x_test, y_values)
    return PredictiveGrid(y_values, values, discrete=_is_discrete(model, grid_cfg), engine="plugin")

"""
MAP fitting by line-searched ascent.

The penalized objective is l_D(theta) + log pi(theta), optionally plus one
pseudo-observation term l_(x_new, y)(theta). The pseudo term is always a
separate summand, never merged into the dataset.

Directions are either the plain gradient (Barzilai-Borwein step length) or
the scoring direction (sum J^T Lambda J + prior precision)^-1 grad, which is
Newton's step for the conjugate families and Gauss-Newton for networks.
Near the optimum the objective and gradient are only known to float
resolution; steps inside that noise are accepted only when they shrink the
gradient, and a fit that cannot move further is judged against the
gradient's own rounding floor.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy import linalg

from .config import EngineDefaults
from .curvature import ggn_matrix
from .data import Dataset, ParameterVector, PseudoObservation, as_theta
from .errors import ConfigurationError, NumericError
from .models import LikelihoodModel
from .priors import Prior

logger = logging.getLogger(__name__)

STEP_RULES = ("backtracking", "fixed")
DIRECTIONS = ("auto", "gradient", "scoring")


@dataclass
class FitConfig:
    """Configuration for MAP fits and warm-started refits."""
    max_iterations: int = EngineDefaults.MAX_ITERATIONS
    gradient_tolerance: float = EngineDefaults.GRADIENT_TOLERANCE
    step_rule: str = "backtracking"
    step_size: float = EngineDefaults.INITIAL_STEP      # eta for the fixed rule
    shrink: float = EngineDefaults.BACKTRACK_SHRINK
    sufficient_increase: float = EngineDefaults.SUFFICIENT_INCREASE
    barzilai_borwein: bool = True
    direction: str = "auto"
    refit_max_iterations: int = EngineDefaults.REFIT_MAX_ITERATIONS
    seed: int = 0
    warm_start: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.max_iterations < 0 or self.refit_max_iterations < 0:
            raise ConfigurationError("Iteration budgets must be >= 0")
        if not self.gradient_tolerance > 0:
            raise ConfigurationError(f"gradient_tolerance must be > 0, got {self.gradient_tolerance}")
        if self.step_rule not in STEP_RULES:
            raise ConfigurationError(f"Unknown step rule '{self.step_rule}', expected one of {STEP_RULES}")
        if self.direction not in DIRECTIONS:
            raise ConfigurationError(f"Unknown direction '{self.direction}', expected one of {DIRECTIONS}")
        if not 0 < self.shrink < 1:
            raise ConfigurationError(f"shrink must lie in (0, 1), got {self.shrink}")
        if not 0 < self.sufficient_increase < 1:
            raise ConfigurationError("sufficient_increase must lie in (0, 1)")
        if not self.step_size > 0:
            raise ConfigurationError("step_size must be > 0")
        if self.warm_start is not None:
            self.warm_start = as_theta(self.warm_start).copy()


@dataclass
class FitResult:
    """Optimum theta_hat (or theta_tilde) with convergence diagnostics."""
    theta_star: ParameterVector
    objective_value: float
    gradient_norm: float
    iterations: int
    converged: bool
    message: str = ""
    history: List[float] = field(default_factory=list)
    stationary: bool = False        # converged, or |grad| at its float rounding floor

    @property
    def theta(self) -> np.ndarray:
        return self.theta_star.values

    def to_dict(self) -> dict:
        return {
            'theta': self.theta.tolist(),
            'objective_value': self.objective_value,
            'gradient_norm': self.gradient_norm,
            'iterations': self.iterations,
            'converged': self.converged,
            'stationary': self.stationary,
            'message': self.message,
        }


def refit_budget_config(config: FitConfig) -> FitConfig:
    """Refits reuse the step rule and tolerance with the tighter refit budget."""
    return replace(config, max_iterations=config.refit_max_iterations, warm_start=None)


class PenalizedObjective:
    """l_D + log pi (+ the pseudo-observation term as its own summand)."""

    def __init__(self, model: LikelihoodModel, prior: Prior, data: Dataset,
                 pseudo: Optional[PseudoObservation] = None):
        if prior.q != model.q:
            raise ConfigurationError(f"Prior dimension {prior.q} does not match model dimension {model.q}")
        model.check_data(data, operation="fit")
        if pseudo is not None and pseudo.x_new.size != model.input_dim:
            raise ConfigurationError(
                f"Pseudo-observation input dimension {pseudo.x_new.size} does not match {model.input_dim}",
                operation="refit_augmented",
            )
        self.model = model
        self.prior = prior
        self.data = data
        self.pseudo = pseudo
        self.eps = float(np.finfo(model.dtype).eps)

    def value(self, theta: np.ndarray) -> float:
        prior_term = float(self.prior.log_density(theta))
        if prior_term == -math.inf:
            return -math.inf
        total = self.model.log_likelihood(self.data, theta) + prior_term
        if self.pseudo is not None:
            total += self.model.log_density(theta, self.pseudo.x_new, self.pseudo.y_hat)
        return total

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        g = self.model.gradient(self.data, theta) + self.prior.gradient(theta)
        if self.pseudo is not None:
            g = g + self.model.point_gradient(theta, self.pseudo.x_new, self.pseudo.y_hat)
        return g

    def scoring(self, theta: np.ndarray) -> np.ndarray:
        """Expected curvature: Gauss-Newton of the likelihood terms plus the prior precision."""
        return ggn_matrix(self.model, self.data, theta, self.pseudo) - self.prior.hessian(theta)

    def noise(self, f: float) -> float:
        """Objective changes below this are rounding."""
        return EngineDefaults.OBJECTIVE_NOISE_ULPS * self.eps * max(1.0, abs(f))

    def gradient_floor(self, theta: np.ndarray) -> np.ndarray:
        """Per-coordinate rounding floor of the summed gradient."""
        scale = np.abs(self.model.per_sample_gradients(self.data, theta)).sum(axis=0)
        scale = scale + np.abs(self.prior.gradient(theta))
        if self.pseudo is not None:
            scale = scale + np.abs(self.model.point_gradient(theta, self.pseudo.x_new, self.pseudo.y_hat))
        return EngineDefaults.GRADIENT_RESOLUTION_ULPS * self.eps * scale


def _sup(g: np.ndarray) -> float:
    return float(np.max(np.abs(g))) if g.size else 0.0


def resolve_direction(direction: str, model: LikelihoodModel) -> str:
    if direction != "auto":
        return direction
    return "scoring" if model.q <= EngineDefaults.SCORING_MAX_DIM else "gradient"


def _scoring_step(M: np.ndarray, g: np.ndarray) -> Optional[np.ndarray]:
    """M^-1 g through a jittered Cholesky; None when M cannot be made positive definite."""
    q = g.size
    scale = abs(float(np.trace(M))) / q or 1.0
    for eps in (0.0,) + EngineDefaults.JITTER_LADDER:
        try:
            factor = linalg.cho_factor(M + eps * scale * np.eye(q), lower=True)
        except (linalg.LinAlgError, ValueError):
            continue
        d = linalg.cho_solve(factor, g)
        if np.all(np.isfinite(d)) and float(g @ d) > 0:
            return d
        return None
    return None


def _stationary(objective: PenalizedObjective, theta: np.ndarray, g: np.ndarray, tolerance: float) -> bool:
    floor = np.maximum(tolerance, objective.gradient_floor(theta))
    return bool(np.all(np.abs(g) <= floor))


def maximize(objective: PenalizedObjective, theta0, config: FitConfig, label: str = "fit") -> FitResult:
    """
    Line-searched ascent from theta0.

    Every accepted iterate has an objective no smaller than its predecessor.
    A step whose gain is within rounding of zero is accepted only if it
    shrinks the gradient. Non-finite trial values are rejected steps; a NaN
    at an accepted iterate raises NumericError with the iteration index.
    """
    theta = as_theta(theta0).astype(float).copy()
    f = objective.value(theta)
    if math.isnan(f) or not math.isfinite(f):
        raise NumericError(f"Objective is {f} at the starting point", operation=label, iteration=0)
    g = objective.gradient(theta)
    if not np.all(np.isfinite(g)):
        raise NumericError("Gradient is not finite at the starting point", operation=label, iteration=0)

    direction = resolve_direction(config.direction, objective.model)
    history = [f]
    prev_theta, prev_g = None, None
    t_prev = None
    iterations = 0
    message = "max_iterations reached"
    stalled = False
    gnorm = _sup(g)

    while iterations < config.max_iterations:
        if gnorm <= config.gradient_tolerance:
            message = "gradient tolerance reached"
            break

        d = _scoring_step(objective.scoring(theta), g) if direction == "scoring" else None
        if d is not None:
            t = config.step_size if config.step_rule == "fixed" else 1.0
        else:
            d = g
            if config.step_rule == "fixed":
                t = config.step_size
            else:
                t = None
                if config.barzilai_borwein and prev_theta is not None:
                    s = theta - prev_theta
                    y = prev_g - g   # gradient difference of the minimization problem
                    sy = float(s @ y)
                    if sy > 0:
                        t = float(s @ s) / sy
                if t is None:
                    t = t_prev * 2.0 if t_prev is not None else min(config.step_size, 1.0 / float(np.sum(np.abs(g))))

        slope = float(g @ d)
        noise = objective.noise(f)
        accepted = False
        g_trial = None
        for _ in range(EngineDefaults.MAX_BACKTRACKS):
            trial = theta + t * d
            f_trial = objective.value(trial)
            g_trial = None
            if config.step_rule == "fixed":
                accepted = True
                break
            if math.isfinite(f_trial):
                gain = f_trial - f
                if gain > noise:
                    if gain >= config.sufficient_increase * t * slope:
                        accepted = True
                        break
                elif gain >= 0.0:
                    # inside rounding: only a smaller gradient counts as progress
                    g_trial = objective.gradient(trial)
                    if np.all(np.isfinite(g_trial)) and _sup(g_trial) < gnorm:
                        accepted = True
                        break
            t *= config.shrink
            if t < EngineDefaults.MIN_STEP:
                break

        if not accepted:
            message = "line search failed to increase the objective"
            stalled = True
            break

        iterations += 1
        if math.isnan(f_trial):
            raise NumericError("Objective became NaN", operation=label, iteration=iterations)
        g_new = g_trial if g_trial is not None else objective.gradient(trial)
        if np.any(np.isnan(g_new)):
            raise NumericError("Gradient became NaN", operation=label, iteration=iterations)

        prev_theta, prev_g = theta, g
        theta, f, g = trial, f_trial, g_new
        t_prev = t
        gnorm = _sup(g)
        history.append(f)
    else:
        if gnorm <= config.gradient_tolerance:
            message = "gradient tolerance reached"

    converged = gnorm <= config.gradient_tolerance and config.max_iterations > 0
    stationary = converged
    if not converged and config.max_iterations > 0:
        stationary = _stationary(objective, theta, g, config.gradient_tolerance)
        if stationary:
            message = "stationary at float resolution"
        elif stalled:
            message = f"{message} (|grad|={gnorm:.3e} above its rounding floor)"
    if config.max_iterations == 0:
        message = "zero iteration budget"
    return FitResult(
        theta_star=ParameterVector(theta),
        objective_value=f,
        gradient_norm=gnorm,
        iterations=iterations,
        converged=converged,
        message=message,
        history=history,
        stationary=stationary,
    )


def fit_map(model: LikelihoodModel, prior: Prior, data: Dataset, config: Optional[FitConfig] = None) -> FitResult:
    """
    MAP estimate theta_hat = argmax l_D + log pi.

    Starts from ``config.warm_start`` when given, otherwise from the
    predictor's seeded initialisation.
    """
    config = config or FitConfig()
    data.require_nonempty()
    objective = PenalizedObjective(model, prior, data)
    if config.warm_start is not None:
        start = config.warm_start
    else:
        start = model.initial_theta(data, np.random.default_rng(config.seed))
    result = maximize(objective, start, config, label="fit_map")
    if result.converged:
        logger.info(f"[fit_map] converged in {result.iterations} iterations, "
                    f"objective={result.objective_value:.6f}")
    elif result.stationary:
        logger.info(f"[fit_map] stationary at float resolution after {result.iterations} iterations "
                    f"(|grad|={result.gradient_norm:.3e})")
    elif config.max_iterations > 0:
        logger.warning(f"[fit_map] not converged after {result.iterations} iterations "
                       f"(|grad|={result.gradient_norm:.3e}): {result.message}")
    return result


def refit_augmented(model: LikelihoodModel, prior: Prior, data: Dataset, pseudo: PseudoObservation,
                    warm_start, config: Optional[FitConfig] = None) -> FitResult:
    """theta_tilde = argmax l_D + l_(x_new, y_hat) + log pi, started at theta_hat."""
    config = config or refit_budget_config(FitConfig())
    objective = PenalizedObjective(model, prior, data, pseudo)
    result = maximize(objective, warm_start, config, label="refit_augmented")
    logger.debug(f"[refit] y={pseudo.y_hat:.6g} iterations={result.iterations} converged={result.converged} "
                 f"stationary={result.stationary}")
    return result

"""
LikelihoodModel: a family paired with a predictor.

Houses the log-likelihood l_D, the single-observation term used for the
pseudo-observation, predictions and all first/second derivative access
the engines need.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..config import EngineDefaults
from ..data import Dataset, Observation, as_theta
from ..errors import ConfigurationError
from .base import LikelihoodFamily
from .predictors import Predictor

PRECISIONS = {'double': np.float64, 'single': np.float32}


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: Optional[float] = None


class LikelihoodModel:
    """
    Regression model p(y | x, theta) = family(y | predictor(theta, x)).

    Args:
        family: Likelihood family (Gaussian, heteroscedastic, Poisson)
        predictor: Parametric predictor whose output count matches the family
        precision: "double" (default) or "single"; only per-sample log terms honour it
    """

    def __init__(self, family: LikelihoodFamily, predictor: Predictor, precision: str = "double"):
        if predictor.n_outputs != family.N_OUTPUTS:
            raise ConfigurationError(
                f"{family.NAME} needs {family.N_OUTPUTS} predictor outputs, "
                f"{predictor.KIND} provides {predictor.n_outputs}"
            )
        if family.NAME == "poisson-rate":
            allowed = {"identity": "constant-mean", "log": "linear"}[family.link]
            if predictor.KIND != allowed:
                raise ConfigurationError(
                    f"Poisson {family.link} link supports only the {allowed} predictor, got {predictor.KIND}"
                )
        if precision not in PRECISIONS:
            raise ConfigurationError(f"Unknown precision '{precision}', expected one of {sorted(PRECISIONS)}")
        self.family = family.with_dtype(PRECISIONS[precision])
        self.predictor = predictor
        self.precision = precision

    @property
    def q(self) -> int:
        return self.predictor.q

    @property
    def input_dim(self) -> int:
        return self.predictor.input_dim

    @property
    def n_outputs(self) -> int:
        return self.predictor.n_outputs

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def with_precision(self, precision: str) -> "LikelihoodModel":
        return LikelihoodModel(self.family, self.predictor, precision=precision)

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------

    def _theta(self, theta, operation: str) -> np.ndarray:
        theta = as_theta(theta)
        if theta.shape != (self.q,):
            raise ConfigurationError(
                f"Parameter dimension {theta.size} does not match model dimension {self.q}",
                operation=operation,
            )
        return theta

    def _inputs(self, X, operation: str) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.input_dim:
            raise ConfigurationError(
                f"Input dimension {X.shape[1]} does not match model input dimension {self.input_dim}",
                operation=operation,
            )
        return X

    def check_data(self, data: Dataset, operation: str = "log_likelihood"):
        self._inputs(data.X if data.n else np.zeros((0, data.input_dim)), operation)
        self.family.validate_targets(data.y, operation=operation)

    # ------------------------------------------------------------------
    # Outputs and predictions
    # ------------------------------------------------------------------

    def outputs(self, theta, X) -> np.ndarray:
        return self.predictor.outputs(self._theta(theta, "outputs"), self._inputs(X, "outputs"))

    def output_jacobian(self, theta, X) -> np.ndarray:
        return self.predictor.output_jacobian(self._theta(theta, "output_jacobian"),
                                              self._inputs(X, "output_jacobian"))

    def predict(self, theta, x) -> Prediction:
        f = self.predictor.outputs(self._theta(theta, "predict"), self._inputs(x, "predict"))
        return Prediction(float(self.family.mean(f)[0]), float(self.family.variance(f)[0]))

    def initial_theta(self, data: Dataset, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(0)
        return self.predictor.init_params(rng, self.family.default_output(data.y))

    # ------------------------------------------------------------------
    # Log-likelihood
    # ------------------------------------------------------------------

    def log_terms(self, data: Dataset, theta) -> np.ndarray:
        """Per-sample log p(y_i | x_i, theta) in the model's precision."""
        theta = self._theta(theta, "log_likelihood")
        if data.n == 0:
            return np.zeros(0, dtype=self.dtype)
        self.check_data(data)
        dt = self.dtype
        f = self.predictor.outputs(theta.astype(dt), data.X.astype(dt))
        return self.family.log_prob(f, data.y.astype(dt))

    def log_likelihood(self, data: Dataset, theta) -> float:
        return float(np.sum(self.log_terms(data, theta)))

    def log_density(self, theta, x, y) -> float:
        """log p(y | x, theta) for a single input and target."""
        theta = self._theta(theta, "log_density")
        X = self._inputs(x, "log_density")
        f = self.predictor.outputs(theta, X)
        return float(self.family.log_prob(f, np.atleast_1d(np.asarray(y, dtype=float)))[0])

    def log_density_grid(self, theta, x, y_values) -> np.ndarray:
        """log p(y | x, theta) for every y in ``y_values`` at one input."""
        theta = self._theta(theta, "log_density")
        X = self._inputs(x, "log_density")
        y_values = np.asarray(y_values, dtype=float)
        f = np.repeat(self.predictor.outputs(theta, X), y_values.size, axis=0)
        return self.family.log_prob(f, y_values)

    # ------------------------------------------------------------------
    # Derivatives
    # ------------------------------------------------------------------

    def per_sample_gradient(self, theta, obs: Observation) -> np.ndarray:
        theta = self._theta(theta, "per_sample_gradient")
        X = self._inputs(obs.x, "per_sample_gradient")
        y = np.array([obs.y])
        f = self.predictor.outputs(theta, X)
        J = self.predictor.output_jacobian(theta, X)
        return np.einsum('nk,nkq->q', self.family.output_gradient(f, y), J)

    def per_sample_gradients(self, data: Dataset, theta) -> np.ndarray:
        theta = self._theta(theta, "per_sample_gradient")
        if data.n == 0:
            return np.zeros((0, self.q))
        f = self.predictor.outputs(theta, data.X)
        J = self.predictor.output_jacobian(theta, data.X)
        return np.einsum('nk,nkq->nq', self.family.output_gradient(f, data.y), J)

    def gradient(self, data: Dataset, theta) -> np.ndarray:
        """Gradient of l_D at theta."""
        return self.per_sample_gradients(data, theta).sum(axis=0)

    def point_gradient(self, theta, x, y) -> np.ndarray:
        return self.per_sample_gradient(theta, Observation(np.atleast_1d(x), y))

    def output_terms(self, theta, X, y):
        """(J, Lambda) for the Gauss-Newton products: Jacobians (n,k,q) and curvatures (n,k,k)."""
        theta = self._theta(theta, "output_terms")
        X = self._inputs(X, "output_terms")
        y = np.atleast_1d(np.asarray(y, dtype=float))
        f = self.predictor.outputs(theta, X)
        return self.predictor.output_jacobian(theta, X), self.family.output_curvature(f, y)

    def hessian(self, data: Dataset, theta, x=None, y=None) -> np.ndarray:
        """
        Exact Hessian of l_D (plus the single term at (x, y) when given).

        Analytic for predictors linear in theta; central differences of the
        analytic gradient otherwise.
        """
        theta = self._theta(theta, "hessian")
        extra = x is not None

        if self.predictor.LINEAR_IN_PARAMS:
            H = np.zeros((self.q, self.q))
            parts = [(data.X, data.y)] if data.n else []
            if extra:
                parts.append((self._inputs(x, "hessian"), np.atleast_1d(float(y))))
            for X, yv in parts:
                f = self.predictor.outputs(theta, X)
                J = self.predictor.output_jacobian(theta, X)
                H += np.einsum('nkq,nkl,nlr->qr', J, self.family.output_hessian(f, yv), J)
            return H

        def grad(t):
            g = self.gradient(data, t)
            if extra:
                g = g + self.point_gradient(t, x, y)
            return g

        h = EngineDefaults.HESSIAN_FD_STEP
        H = np.empty((self.q, self.q))
        for j in range(self.q):
            e = np.zeros(self.q)
            e[j] = h
            H[:, j] = (grad(theta + e) - grad(theta - e)) / (2.0 * h)
        return 0.5 * (H + H.T)

    def describe(self) -> dict:
        info = self.family.describe()
        info.update(self.predictor.describe())
        info['precision'] = self.precision
        return info

    def __repr__(self) -> str:
        return f"LikelihoodModel({self.family!r}, {self.predictor!r}, precision={self.precision})"


def log_likelihood(model: LikelihoodModel, data: Dataset, theta) -> float:
    return model.log_likelihood(data, theta)


def predict(model: LikelihoodModel, theta, x) -> Prediction:
    return model.predict(theta, x)


def per_sample_gradient(model: LikelihoodModel, theta, obs: Observation) -> np.ndarray:
    return model.per_sample_gradient(theta, obs)

"""
Log-prior densities with gradients and (diagonal) Hessians.

Gaussian priors are normalized; the flat prior contributes nothing.
``log_density`` accepts a single parameter vector or a stack of them
(rows), which the quadrature oracle relies on.
"""
import math
from abc import ABC, abstractmethod
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from .config import EngineDefaults
from .data import as_theta
from .errors import ConfigurationError

LOG_2PI = math.log(2.0 * math.pi)


class Prior(ABC):
    """
    Abstract log-prior pi(theta) over a q-dimensional parameter.

    Subclasses MUST implement log_density(), gradient() and hessian_diagonal().
    ``hessian()`` returns the full matrix; every built-in prior is separable.
    """

    kind: str = ""

    def __init__(self, q: int):
        if q < 1:
            raise ConfigurationError(f"Prior dimension must be >= 1, got {q}")
        self.q = int(q)

    # ------------------------------------------------------------------
    # Factories
    # ------------------------------------------------------------------

    @staticmethod
    def isotropic(tau_sq: float, q: int, mean=0.0) -> "GaussianPrior":
        return GaussianPrior(np.full(q, float(tau_sq)), mean, kind="isotropic-gaussian")

    @staticmethod
    def diagonal(variances, mean=0.0) -> "GaussianPrior":
        return GaussianPrior(variances, mean, kind="diagonal-gaussian")

    @staticmethod
    def flat(q: int) -> "FlatPrior":
        return FlatPrior(q)

    @staticmethod
    def gamma(alpha: float, beta: float) -> "GammaPrior":
        return GammaPrior(alpha, beta)

    @staticmethod
    def custom(log_density: Callable[[np.ndarray], float], q: int) -> "CustomPrior":
        return CustomPrior(log_density, q)

    # ------------------------------------------------------------------

    @abstractmethod
    def log_density(self, theta) -> np.ndarray:
        pass

    @abstractmethod
    def gradient(self, theta) -> np.ndarray:
        pass

    @abstractmethod
    def hessian_diagonal(self, theta) -> np.ndarray:
        """Diagonal of the Hessian of log pi (non-positive for log-concave priors)."""
        pass

    def hessian(self, theta) -> np.ndarray:
        return np.diag(self.hessian_diagonal(theta))

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float) if not hasattr(theta, 'values') else as_theta(theta)
        if theta.shape[-1] != self.q:
            raise ConfigurationError(
                f"Parameter dimension {theta.shape[-1]} does not match prior dimension {self.q}"
            )
        return theta

    def __repr__(self) -> str:
        return f"{type(self).__name__}(q={self.q})"


class GaussianPrior(Prior):
    """Independent Gaussian coordinates N(mean_j, variance_j)."""

    def __init__(self, variances, mean=0.0, kind: str = "diagonal-gaussian"):
        variances = np.atleast_1d(np.asarray(variances, dtype=float))
        if np.any(~np.isfinite(variances)) or np.any(variances <= 0):
            raise ConfigurationError("Gaussian prior variances must be finite and > 0",
                                     operation="log_prior")
        super().__init__(variances.size)
        self.kind = kind
        self.variances = variances
        self.mean = np.broadcast_to(np.asarray(mean, dtype=float), variances.shape).copy()
        self._log_norm = -0.5 * float(np.sum(LOG_2PI + np.log(variances)))

    def log_density(self, theta):
        theta = self._check(theta)
        quad = np.sum((theta - self.mean) ** 2 / self.variances, axis=-1)
        return self._log_norm - 0.5 * quad

    def gradient(self, theta):
        theta = self._check(theta)
        return -(theta - self.mean) / self.variances

    def hessian_diagonal(self, theta):
        return -1.0 / self.variances

    def __repr__(self) -> str:
        return f"GaussianPrior(kind={self.kind}, q={self.q})"


class FlatPrior(Prior):
    """Improper flat prior: log density, gradient and Hessian are all zero."""

    kind = "improper-flat"

    def log_density(self, theta):
        theta = self._check(theta)
        return np.zeros(theta.shape[:-1]) if theta.ndim > 1 else 0.0

    def gradient(self, theta):
        return np.zeros_like(self._check(theta))

    def hessian_diagonal(self, theta):
        return np.zeros(self.q)


class GammaPrior(Prior):
    """Gamma(shape alpha, rate beta) on a single positive parameter."""

    kind = "gamma"

    def __init__(self, alpha: float, beta: float):
        if alpha <= 0 or beta <= 0:
            raise ConfigurationError("Gamma prior needs alpha > 0 and beta > 0")
        super().__init__(1)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self._log_norm = self.alpha * math.log(self.beta) - float(gammaln(self.alpha))

    def log_density(self, theta):
        lam = self._check(theta)[..., 0]
        with np.errstate(divide='ignore', invalid='ignore'):
            inside = self._log_norm + (self.alpha - 1.0) * np.log(lam) - self.beta * lam
        out = np.where(lam > 0, inside, -np.inf)
        return out if out.ndim else float(out)

    def gradient(self, theta):
        lam = self._check(theta)
        return (self.alpha - 1.0) / lam - self.beta

    def hessian_diagonal(self, theta):
        lam = self._check(theta)
        return -(self.alpha - 1.0) / lam ** 2


class CustomPrior(Prior):
    """
    Arbitrary log-density; derivatives by central differences.

    The callable receives a single parameter vector.
    """

    kind = "custom"

    def __init__(self, log_density: Callable[[np.ndarray], float], q: int,
                 step: Optional[float] = None):
        super().__init__(q)
        self._fn = log_density
        self.step = step or EngineDefaults.HESSIAN_FD_STEP

    def log_density(self, theta):
        theta = self._check(theta)
        if theta.ndim == 1:
            return float(self._fn(theta))
        return np.array([self._fn(row) for row in theta.reshape(-1, self.q)]).reshape(theta.shape[:-1])

    def gradient(self, theta):
        theta = self._check(theta)
        h = self.step
        grad = np.empty(self.q)
        for j in range(self.q):
            e = np.zeros(self.q)
            e[j] = h
            grad[j] = (self._fn(theta + e) - self._fn(theta - e)) / (2 * h)
        return grad

    def hessian_diagonal(self, theta):
        return np.diag(self.hessian(theta))

    def hessian(self, theta):
        theta = self._check(theta)
        h = 1e-4
        f0 = self._fn(theta)
        H = np.empty((self.q, self.q))
        for i in range(self.q):
            for j in range(i, self.q):
                ei = np.zeros(self.q)
                ej = np.zeros(self.q)
                ei[i] = h
                ej[j] = h
                if i == j:
                    H[i, i] = (self._fn(theta + ei) - 2 * f0 + self._fn(theta - ei)) / h ** 2
                else:
                    H[i, j] = H[j, i] = (
                        self._fn(theta + ei + ej) - self._fn(theta + ei - ej)
                        - self._fn(theta - ei + ej) + self._fn(theta - ei - ej)
                    ) / (4 * h ** 2)
        return H


def log_prior(prior: Prior, theta) -> float:
    """log pi(theta), normalized for the Gaussian kinds, 0 for the flat prior."""
    return float(prior.log_density(as_theta(theta)))

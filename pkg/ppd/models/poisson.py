"""
Poisson count likelihood with identity or log link.

The identity link pairs with the constant-rate predictor (theta is the
rate itself, the conjugate Poisson-Gamma setting); the log link pairs with
a linear predictor.
"""
import numpy as np
from scipy.special import gammaln

from ..errors import ConfigurationError, DomainError
from .base import LikelihoodFamily

LINKS = ("identity", "log")


class PoissonFamily(LikelihoodFamily):
    """y ~ Poisson(rate(f)), rate = f (identity) or exp(f) (log)."""

    NAME = "poisson-rate"
    N_OUTPUTS = 1
    DISCRETE = True

    def __init__(self, link: str = "identity"):
        if link not in LINKS:
            raise ConfigurationError(f"Unknown Poisson link '{link}', expected one of {LINKS}")
        self.link = link

    def _rate(self, f):
        return f[:, 0] if self.link == "identity" else np.exp(f[:, 0])

    def log_prob(self, f, y):
        dt = self.dtype
        f = np.asarray(f, dtype=dt)
        y = np.asarray(y, dtype=dt)
        if self.link == "log":
            eta = f[:, 0]
            return y * eta - np.exp(eta) - gammaln(y + dt(1.0))
        lam = f[:, 0]
        with np.errstate(divide='ignore', invalid='ignore'):
            inside = y * np.log(lam) - lam - gammaln(y + dt(1.0))
        return np.where(lam > 0, inside, dt(-np.inf))

    def output_gradient(self, f, y):
        y = np.asarray(y, dtype=float)
        if self.link == "log":
            return (y - np.exp(f[:, 0]))[:, None]
        lam = f[:, 0]
        return (y / lam - 1.0)[:, None]

    def output_hessian(self, f, y):
        y = np.asarray(y, dtype=float)
        if self.link == "log":
            return (-np.exp(f[:, 0]))[:, None, None]
        return (-y / f[:, 0] ** 2)[:, None, None]

    def output_curvature(self, f, y):
        # identity: observed y / rate^2 (depends on y); log: rate
        return -self.output_hessian(f, y)

    def mean(self, f):
        return self._rate(f)

    def variance(self, f):
        return self._rate(f)

    def validate_targets(self, y, operation=None):
        y = np.asarray(y, dtype=float)
        bad = ~np.isfinite(y) | (y < 0) | (y != np.round(y))
        if np.any(bad):
            index = int(np.argmax(bad))
            raise DomainError(
                f"Poisson targets must be non-negative integers, got {y[index]!r} at index {index}",
                operation=operation, index=index,
            )

    def default_output(self, y):
        rate = max(float(np.mean(y)), 0.5) if len(y) else 1.0
        return np.array([rate if self.link == "identity" else np.log(rate)])

    def describe(self) -> dict:
        return {'family': self.NAME, 'link': self.link}

    def __repr__(self) -> str:
        return f"PoissonFamily(link={self.link})"

"""
Gaussian likelihood with a known, fixed noise variance.
"""
import math

import numpy as np

from ..errors import ConfigurationError
from .base import LikelihoodFamily


class GaussianFamily(LikelihoodFamily):
    """y ~ N(f, sigma_sq) with sigma_sq fixed."""

    NAME = "gaussian-fixed-variance"
    N_OUTPUTS = 1

    def __init__(self, sigma_sq: float = 1.0):
        if not (math.isfinite(sigma_sq) and sigma_sq > 0):
            raise ConfigurationError(f"sigma_sq must be finite and > 0, got {sigma_sq}")
        self.sigma_sq = float(sigma_sq)

    def log_prob(self, f, y):
        dt = self.dtype
        sigma_sq = dt(self.sigma_sq)
        resid = np.asarray(y, dtype=dt) - np.asarray(f, dtype=dt)[:, 0]
        return dt(-0.5) * np.log(dt(2.0 * math.pi) * sigma_sq) - resid * resid / (dt(2.0) * sigma_sq)

    def output_gradient(self, f, y):
        return ((np.asarray(y, dtype=float) - f[:, 0]) / self.sigma_sq)[:, None]

    def output_hessian(self, f, y):
        return np.full((f.shape[0], 1, 1), -1.0 / self.sigma_sq)

    def output_curvature(self, f, y):
        return np.full((f.shape[0], 1, 1), 1.0 / self.sigma_sq)

    def mean(self, f):
        return f[:, 0]

    def variance(self, f):
        return np.full(f.shape[0], self.sigma_sq)

    def default_output(self, y):
        return np.array([float(np.mean(y)) if len(y) else 0.0])

    def describe(self) -> dict:
        return {'family': self.NAME, 'sigma_sq': self.sigma_sq}

    def __repr__(self) -> str:
        return f"GaussianFamily(sigma_sq={self.sigma_sq})"

"""
Heteroscedastic Gaussian likelihood.

The predictor emits two heads per input: the mean m and the log-variance
v = log sigma^2(x). Working with v keeps the density finite for every
parameter value, so the optimizer never needs a constraint.
"""
import math

import numpy as np

from .base import LikelihoodFamily

# exp(-v) overflows float64 past v ~ -709
_LOG_VAR_FLOOR = -700.0


class HeteroscedasticFamily(LikelihoodFamily):
    """y ~ N(m, exp(v)) with (m, v) the two predictor outputs."""

    NAME = "gaussian-heteroscedastic"
    N_OUTPUTS = 2

    @staticmethod
    def _split(f):
        return f[:, 0], np.maximum(f[:, 1], _LOG_VAR_FLOOR)

    def log_prob(self, f, y):
        dt = self.dtype
        f = np.asarray(f, dtype=dt)
        m, v = f[:, 0], np.maximum(f[:, 1], dt(_LOG_VAR_FLOOR))
        resid = np.asarray(y, dtype=dt) - m
        return dt(-0.5 * math.log(2.0 * math.pi)) - dt(0.5) * v - dt(0.5) * resid * resid * np.exp(-v)

    def output_gradient(self, f, y):
        m, v = self._split(f)
        prec = np.exp(-v)
        resid = np.asarray(y, dtype=float) - m
        return np.stack([resid * prec, -0.5 + 0.5 * resid ** 2 * prec], axis=1)

    def output_hessian(self, f, y):
        m, v = self._split(f)
        prec = np.exp(-v)
        resid = np.asarray(y, dtype=float) - m
        out = np.empty((f.shape[0], 2, 2))
        out[:, 0, 0] = -prec
        out[:, 0, 1] = out[:, 1, 0] = -resid * prec
        out[:, 1, 1] = -0.5 * resid ** 2 * prec
        return out

    def output_curvature(self, f, y):
        # Fisher information of (m, v): diag(exp(-v), 1/2), independent of y
        _, v = self._split(f)
        out = np.zeros((f.shape[0], 2, 2))
        out[:, 0, 0] = np.exp(-v)
        out[:, 1, 1] = 0.5
        return out

    def mean(self, f):
        return f[:, 0]

    def variance(self, f):
        return np.exp(self._split(f)[1])

    def default_output(self, y):
        if len(y) == 0:
            return np.zeros(2)
        var = float(np.var(y))
        return np.array([float(np.mean(y)), math.log(var) if var > 0 else 0.0])

"""
Abstract base class for likelihood families.

Each family implements this interface so the fitting, curvature and
predictive engines can work in output space uniformly: a predictor maps
(theta, x) to k outputs ``f``, and the family scores a target ``y`` given
``f``. Every array method is vectorized over the leading sample axis.
"""
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np

from ..errors import DomainError


class LikelihoodFamily(ABC):
    """
    Abstract base for all likelihood families.

    Subclasses MUST set class attributes:
        NAME       - Family identifier used in configs and reports
        N_OUTPUTS  - Number of predictor outputs the family consumes (k)
        DISCRETE   - True for count likelihoods (integer targets)

    Subclasses MUST implement:
        log_prob()
        output_gradient()
        output_hessian()
        output_curvature()
        mean()
        variance()

    Subclasses MAY override:
        validate_targets()
        default_output()
        with_dtype()
    """

    NAME: str = ""
    N_OUTPUTS: int = 1
    DISCRETE: bool = False

    dtype = np.float64

    @abstractmethod
    def log_prob(self, f: np.ndarray, y: np.ndarray) -> np.ndarray:
        """
        Per-sample log-density.

        Args:
            f: Predictor outputs, shape (n, k)
            y: Targets, shape (n,)

        Returns:
            Array of shape (n,) with log p(y_i | f_i).
        """
        pass

    @abstractmethod
    def output_gradient(self, f: np.ndarray, y: np.ndarray) -> np.ndarray:
        """d log p / d f, shape (n, k)."""
        pass

    @abstractmethod
    def output_hessian(self, f: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Observed d^2 log p / d f^2, shape (n, k, k)."""
        pass

    @abstractmethod
    def output_curvature(self, f: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Positive semi-definite output-space curvature Lambda, shape (n, k, k)."""
        pass

    @abstractmethod
    def mean(self, f: np.ndarray) -> np.ndarray:
        """Predictive mean of y given outputs, shape (n,)."""
        pass

    @abstractmethod
    def variance(self, f: np.ndarray) -> np.ndarray:
        """Conditional variance of y given outputs, shape (n,)."""
        pass

    def validate_targets(self, y: np.ndarray, operation: Optional[str] = None):
        """Raise DomainError when any target lies outside the family's support."""
        if not np.all(np.isfinite(y)):
            raise DomainError(f"{self.NAME} targets must be finite", operation=operation)

    def default_output(self, y: np.ndarray) -> np.ndarray:
        """Output value a freshly initialised predictor should start from, shape (k,)."""
        return np.zeros(self.N_OUTPUTS)

    def with_dtype(self, dtype) -> "LikelihoodFamily":
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.dtype = np.dtype(dtype).type
        return clone

    def describe(self) -> dict:
        return {'family': self.NAME}

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"

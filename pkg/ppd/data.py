"""
Datasets, pseudo-observations and parameter vectors.

All containers are frozen and hold read-only numpy arrays, so they can be
shared across worker threads without copying.
"""
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError

ArrayLike = Union[Sequence[float], np.ndarray]


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim == 0 and ndim == 1:
        arr = arr.reshape(1)
    if arr.ndim != ndim:
        raise ConfigurationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    y: float

    def __post_init__(self):
        object.__setattr__(self, 'x', _frozen(self.x, 1, "Observation.x"))
        if not np.isfinite(self.y):
            raise ConfigurationError("Observation.y must be finite")
        object.__setattr__(self, 'y', float(self.y))


@dataclass(frozen=True)
class PseudoObservation:
    """A self-predicted target appended to the objective as a separate term."""
    x_new: np.ndarray
    y_hat: float

    def __post_init__(self):
        object.__setattr__(self, 'x_new', _frozen(self.x_new, 1, "PseudoObservation.x_new"))
        object.__setattr__(self, 'y_hat', float(self.y_hat))


@dataclass(frozen=True)
class ParameterVector:
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values, 1, "ParameterVector")
        if arr.size < 1:
            raise ConfigurationError("ParameterVector needs q >= 1")
        object.__setattr__(self, 'values', arr)

    @property
    def q(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def as_theta(theta) -> np.ndarray:
    """Accept a ParameterVector or anything array-like; return a float vector."""
    if isinstance(theta, ParameterVector):
        return theta.values
    return np.atleast_1d(np.asarray(theta, dtype=float))


class Dataset:
    """
    Ordered regression data stored column-wise.

    ``X`` is n x d (inputs), ``y`` has length n. A dataset with no inputs
    (e.g. the conjugate models) has d = 1 and a column of ones, so that the
    input dimension is fixed within a dataset.
    """

    def __init__(self, X: ArrayLike, y: ArrayLike):
        X = np.array(X, dtype=float)
        y = np.array(y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ConfigurationError(
                f"Inputs of shape {X.shape} do not match {y.shape[0]} targets"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ConfigurationError("Dataset contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        self._X = X
        self._y = y

    @classmethod
    def from_observations(cls, observations: Iterable[Observation]) -> "Dataset":
        observations = list(observations)
        if not observations:
            raise ConfigurationError("Cannot build a dataset from zero observations without a dimension")
        dims = {obs.x.size for obs in observations}
        if len(dims) != 1:
            raise ConfigurationError(f"Observations disagree on input dimension: {sorted(dims)}")
        return cls(np.vstack([obs.x for obs in observations]), [obs.y for obs in observations])

    @classmethod
    def from_targets(cls, y: ArrayLike) -> "Dataset":
        """Input-free data (constant-mean / constant-rate models)."""
        y = np.asarray(y, dtype=float).reshape(-1)
        return cls(np.ones((y.size, 1)), y)

    @classmethod
    def empty(cls, input_dim: int) -> "Dataset":
        return cls(np.zeros((0, input_dim)), np.zeros(0))

    @property
    def X(self) -> np.ndarray:
        return self._X

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def n(self) -> int:
        return self._y.shape[0]

    @property
    def input_dim(self) -> int:
        return self._X.shape[1]

    @property
    def observations(self) -> List[Observation]:
        return [Observation(self._X[i], self._y[i]) for i in range(self.n)]

    def subset(self, indices: ArrayLike) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self._X[idx], self._y[idx])

    def split(self, indices: ArrayLike) -> Tuple["Dataset", "Dataset"]:
        """(rows at ``indices``, remaining rows), both in original order."""
        mask = np.zeros(self.n, dtype=bool)
        mask[np.asarray(indices, dtype=int)] = True
        return Dataset(self._X[mask], self._y[mask]), Dataset(self._X[~mask], self._y[~mask])

    def concat(self, other: "Dataset") -> "Dataset":
        if other.input_dim != self.input_dim:
            raise ConfigurationError("Cannot concatenate datasets of different input dimension")
        return Dataset(np.vstack([self._X, other.X]), np.concatenate([self._y, other.y]))

    def require_nonempty(self):
        if self.n < 1:
            raise ConfigurationError("Operation requires at least one observation")

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, d={self.input_dim})"

"""
Synthetic data generators for the benchmark experiments.
"""
from typing import Union

import numpy as np

from ppd.data import Dataset
from ppd.errors import ConfigurationError

RngLike = Union[int, np.random.Generator]

# heteroscedastic toy: equal-weight mixture for x
HETERO_CENTERS = (-4.0, 0.0, 4.0)
HETERO_SDS = (0.4, 0.9, 0.4)


def _rng(rng: RngLike) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _check_n(n: int):
    if n < 1:
        raise ConfigurationError(f"Sample size must be >= 1, got {n}")


def gen_normal(n: int, rng: RngLike, mu: float = 4.0, sigma_sq: float = 2.0) -> Dataset:
    """Targets from N(mu, sigma_sq), no inputs."""
    _check_n(n)
    return Dataset.from_targets(_rng(rng).normal(mu, np.sqrt(sigma_sq), n))


def gen_poisson(n: int, rng: RngLike, rate: float = 3.0) -> Dataset:
    _check_n(n)
    return Dataset.from_targets(_rng(rng).poisson(rate, n).astype(float))


def gen_linear_toy(n: int, rng: RngLike, sigma: float = 0.5, slope: float = 1.0,
                   intercept: float = 0.0) -> Dataset:
    """1D regression y = slope * x + intercept + N(0, sigma^2), x ~ U(-2, 2)."""
    _check_n(n)
    rng = _rng(rng)
    x = rng.uniform(-2.0, 2.0, n)
    y = slope * x + intercept + rng.normal(0.0, sigma, n)
    return Dataset(x.reshape(-1, 1), y)


def hetero_mean(x):
    return 7.0 * np.sin(x)


def hetero_noise_sd(x):
    return 3.0 * np.abs(np.cos(np.asarray(x) / 2.0))


def gen_hetero_toy(n: int, seed: RngLike) -> Dataset:
    """y = 7 sin(x) + 3 |cos(x / 2)| eps, x from a 3-component Gaussian mixture."""
    _check_n(n)
    rng = _rng(seed)
    component = rng.integers(0, len(HETERO_CENTERS), n)
    x = np.take(HETERO_CENTERS, component) + np.take(HETERO_SDS, component) * rng.standard_normal(n)
    y = hetero_mean(x) + hetero_noise_sd(x) * rng.standard_normal(n)
    return Dataset(x.reshape(-1, 1), y)

import numpy as np
import pytest

from ppd.data import Dataset
from ppd.models import gaussian_constant, gaussian_linear, heteroscedastic_mlp, poisson_constant
from ppd.optimizer import FitConfig, fit_map
from ppd.oracles import NormalNormalSpec
from ppd.predictive import GridConfig, PredictiveGrid, normalize_grid
from ppd.priors import Prior


@pytest.fixture
def normal_spec():
    return NormalNormalSpec(mu0=4.0, tau0_sq=1.0, sigma_sq=2.0)


@pytest.fixture
def normal_model():
    return gaussian_constant(2.0)


@pytest.fixture
def normal_prior():
    return Prior.isotropic(1.0, 1, mean=4.0)


@pytest.fixture
def normal_data():
    rng = np.random.default_rng(20)
    return Dataset.from_targets(rng.normal(4.0, np.sqrt(2.0), 20))


@pytest.fixture
def normal_fit(normal_model, normal_prior, normal_data):
    return fit_map(normal_model, normal_prior, normal_data, FitConfig())


@pytest.fixture
def poisson_model():
    return poisson_constant()


@pytest.fixture
def linear_model():
    return gaussian_linear(0.25, 1)


@pytest.fixture
def linear_data():
    rng = np.random.default_rng(7)
    x = rng.uniform(-2.0, 2.0, 30)
    return Dataset(x.reshape(-1, 1), 1.0 * x + 0.3 + rng.normal(0.0, 0.5, 30))


@pytest.fixture
def small_mlp():
    return heteroscedastic_mlp(1, hidden=(3,), activation="tanh")


@pytest.fixture
def grid_cfg():
    return GridConfig(count=201, span=6.0)


@pytest.fixture
def std_normal_grid():
    y = np.linspace(-6.0, 6.0, 201)
    return normalize_grid(PredictiveGrid(y, -0.5 * y ** 2))


@pytest.fixture
def unit_uniform_grid():
    y = np.linspace(0.0, 1.0, 1001)
    return normalize_grid(PredictiveGrid(y, np.zeros(y.size)))

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from ppd.data import Dataset
from ppd.errors import ConfigurationError, DomainError, UnsupportedError
from ppd.metrics import kl_grid
from ppd.models import gaussian_constant, gaussian_linear, poisson_constant
from ppd.oracles import (
    BlrSpec,
    NormalNormalSpec,
    PoissonGammaSpec,
    QuadratureOracle,
    analytic_grid,
    blr_grid,
    blr_posterior,
    blr_ppd,
    normal_normal_posterior,
    normal_normal_ppd,
    poisson_gamma_posterior,
    poisson_gamma_ppd,
    quadrature_ppd,
)
from ppd.predictive import PredictiveGrid, normalize_grid
from ppd.priors import Prior


def test_normal_normal_prior_predictive():
    spec = NormalNormalSpec(mu0=4.0, tau0_sq=1.0, sigma_sq=2.0)
    assert normal_normal_ppd(spec, [], 4.0) == pytest.approx(1.0 / math.sqrt(6.0 * math.pi), abs=1e-12)
    assert normal_normal_ppd(spec, [], 4.0) == pytest.approx(0.23033, abs=1e-5)


def test_normal_normal_update():
    mu_n, sigma_n_sq = normal_normal_posterior(NormalNormalSpec(), [4.0, 4.0])
    assert mu_n == pytest.approx(4.0)
    assert sigma_n_sq == pytest.approx(0.5)
    density = normal_normal_ppd(NormalNormalSpec(), Dataset.from_targets([4.0, 4.0]), 4.0)
    assert density == pytest.approx(1.0 / math.sqrt(2 * math.pi * 2.5))


def test_normal_normal_spec_validation():
    with pytest.raises(ConfigurationError):
        NormalNormalSpec(tau0_sq=0.0)


def test_poisson_gamma_prior_predictive_at_zero():
    spec = PoissonGammaSpec(alpha=6.0, beta=2.0)
    r, p = poisson_gamma_posterior(spec, [])
    assert r == 6.0
    assert p == pytest.approx(2.0 / 3.0)
    assert poisson_gamma_ppd(spec, [], 0) == pytest.approx((2.0 / 3.0) ** 6, abs=1e-12)
    assert poisson_gamma_ppd(spec, [], 0) == pytest.approx(0.087791, abs=1e-6)


def test_poisson_gamma_posterior_predictive_at_zero():
    spec = PoissonGammaSpec(alpha=6.0, beta=2.0)
    r, p = poisson_gamma_posterior(spec, [3, 2, 4])
    assert r == 15.0
    assert p == pytest.approx(5.0 / 6.0)
    assert poisson_gamma_ppd(spec, [3, 2, 4], 0) == pytest.approx(0.064905, abs=1e-6)


def test_poisson_gamma_pmf_sums_to_one():
    total = float(np.sum(poisson_gamma_ppd(PoissonGammaSpec(), [3, 2, 4], np.arange(200))))
    assert total == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("k", [-1, 2.5])
def test_poisson_gamma_rejects_invalid_counts(k):
    with pytest.raises(DomainError):
        poisson_gamma_ppd(PoissonGammaSpec(), [], k)


def test_blr_prior_predictive():
    spec = BlrSpec(beta0=[1.0, -1.0], Sigma0=np.diag([2.0, 0.5]), sigma_sq=0.3)
    x_new = np.array([0.5, 2.0])
    var = 0.3 + 0.25 * 2.0 + 4.0 * 0.5
    expected = math.exp(-0.5 * (1.0 - (0.5 - 2.0)) ** 2 / var) / math.sqrt(2 * math.pi * var)
    assert blr_ppd(spec, np.zeros((0, 2)), [], x_new, 1.0) == pytest.approx(expected)


def test_blr_rejects_singular_prior_covariance():
    with pytest.raises(ConfigurationError):
        BlrSpec(beta0=[0.0, 0.0], Sigma0=[[1.0, 1.0], [1.0, 1.0]])


def test_blr_posterior_shrinks_towards_data():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.normal(size=500), np.ones(500)])
    y = X @ np.array([2.0, -1.0]) + rng.normal(0.0, 0.1, 500)
    beta_n, Sigma_n = blr_posterior(BlrSpec(np.zeros(2), np.eye(2), 0.01), X, y)
    assert beta_n == pytest.approx([2.0, -1.0], abs=0.02)
    assert np.all(np.linalg.eigvalsh(Sigma_n) > 0)


def test_quadrature_matches_normal_normal():
    spec = NormalNormalSpec()
    data = Dataset.from_targets([3.1, 5.2, 4.4, 2.9])
    model, prior = gaussian_constant(2.0), Prior.isotropic(1.0, 1, mean=4.0)
    y = np.array([2.0, 4.0, 6.0])
    assert quadrature_ppd(model, prior, data, [1.0], y) == pytest.approx(normal_normal_ppd(spec, data, y), rel=1e-8)


def test_quadrature_matches_poisson_gamma():
    spec = PoissonGammaSpec()
    data = Dataset.from_targets([3.0, 2.0, 4.0, 1.0, 5.0])
    k = np.arange(11)
    values = quadrature_ppd(poisson_constant(), Prior.gamma(6.0, 2.0), data, [1.0], k)
    assert values == pytest.approx(poisson_gamma_ppd(spec, data, k), abs=1e-6)


def test_quadrature_matches_blr_in_two_dimensions():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1.0, 1.0, 12)
    y = 0.7 * x + 0.4 + rng.normal(0.0, 0.6, 12)
    model = gaussian_linear(0.36, 1)
    prior = Prior.isotropic(1.5, 2)
    oracle = QuadratureOracle(model, prior, Dataset(x.reshape(-1, 1), y), points=301)
    y_grid = np.linspace(-3.0, 4.0, 201)
    truth = blr_grid(BlrSpec(np.zeros(2), 1.5 * np.eye(2), 0.36), np.column_stack([x, np.ones(12)]), y,
                     [0.8, 1.0], y_grid)
    approx = normalize_grid(PredictiveGrid(y_grid, oracle.log_ppd([0.8], y_grid)))
    assert kl_grid(truth, approx) < 1e-6


def test_quadrature_handles_non_conjugate_priors():
    mixture = Prior.custom(lambda t: float(np.logaddexp(-0.5 * (t[0] - 3.0) ** 2 / 0.2,
                                                        -0.5 * (t[0] - 5.0) ** 2 / 0.2)), 1)
    data = Dataset.from_targets([4.2, 3.8, 4.9])
    y_grid = np.linspace(-4.0, 12.0, 401)
    values = quadrature_ppd(gaussian_constant(2.0), mixture, data, [1.0], y_grid)
    assert np.all(np.isfinite(values))
    assert float(trapezoid(values, y_grid)) == pytest.approx(1.0, abs=1e-4)


def test_quadrature_refuses_more_than_two_parameters():
    with pytest.raises(UnsupportedError):
        QuadratureOracle(gaussian_linear(1.0, 2), Prior.isotropic(1.0, 3), Dataset(np.zeros((2, 2)), [0.0, 1.0]))


def test_analytic_grid_is_normalized():
    grid = analytic_grid(NormalNormalSpec(), [4.0, 4.0], np.linspace(-4.0, 12.0, 301))
    assert grid.normalized
    assert grid.integrate(grid.density) == pytest.approx(1.0, abs=1e-9)
    counts = analytic_grid(PoissonGammaSpec(), [3, 2, 4], np.arange(0, 40))
    assert counts.discrete


def test_blr_with_unit_inputs_is_normal_normal():
    targets = [3.1, 5.2, 4.4]
    spec = NormalNormalSpec(mu0=4.0, tau0_sq=1.0, sigma_sq=2.0)
    blr = BlrSpec(beta0=[4.0], Sigma0=[[1.0]], sigma_sq=2.0)
    y = np.array([1.0, 4.0, 7.5])
    expected = normal_normal_ppd(spec, targets, y)
    assert blr_ppd(blr, np.ones((3, 1)), targets, [1.0], y) == pytest.approx(expected, rel=1e-12)


def test_predictive_variance_contracts_towards_the_noise():
    spec = NormalNormalSpec()
    rng = np.random.default_rng(9)
    variances = []
    for n in (1, 10, 100, 1000):
        _, sigma_n_sq = normal_normal_posterior(spec, rng.normal(4.0, math.sqrt(2.0), n))
        variances.append(sigma_n_sq + spec.sigma_sq)
    assert all(a > b for a, b in zip(variances, variances[1:]))
    assert variances[-1] > spec.sigma_sq


def test_prior_predictive_pmf_sums_to_one():
    total = float(np.sum(poisson_gamma_ppd(PoissonGammaSpec(6.0, 2.0), [], np.arange(501))))
    assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_quadrature_reproduces_normal_normal_on_random_data(seed):
    rng = np.random.default_rng(200 + seed)
    data = Dataset.from_targets(rng.normal(4.0, math.sqrt(2.0), int(rng.integers(1, 30))))
    y = np.array([2.0, 4.0, 6.0])
    values = quadrature_ppd(gaussian_constant(2.0), Prior.isotropic(1.0, 1, mean=4.0), data, [1.0], y)
    assert values == pytest.approx(normal_normal_ppd(NormalNormalSpec(), data, y), rel=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_quadrature_reproduces_poisson_gamma_on_random_data(seed):
    rng = np.random.default_rng(300 + seed)
    data = Dataset.from_targets(rng.poisson(3.0, int(rng.integers(1, 30))).astype(float))
    k = np.arange(11)
    values = quadrature_ppd(poisson_constant(), Prior.gamma(6.0, 2.0), data, [1.0], k)
    assert values == pytest.approx(poisson_gamma_ppd(PoissonGammaSpec(), data, k), abs=1e-6)

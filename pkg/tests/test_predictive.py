import math

import numpy as np
import pytest
from scipy import stats

from ppd.curvature import CurvatureMatrix, build_curvature
from ppd.data import Dataset
from ppd.errors import ConfigurationError, NumericError, PredictiveError
from ppd.metrics import kl_grid, sup_log_gap
from ppd.models import gaussian_constant, gaussian_linear, poisson_constant
from ppd.optimizer import FitConfig, fit_map
from ppd.oracles import BlrSpec, NormalNormalSpec, PoissonGammaSpec, analytic_grid, blr_grid
from ppd.predictive import (
    CredibleInterval,
    GridConfig,
    PredictiveGrid,
    assla_log_ppd,
    credible_interval,
    grid_moments,
    laplace_mc_ppd,
    normalize_grid,
    plugin_log_ppd,
    ssla_log_ppd,
)
from ppd.priors import Prior


def _normal_problem(n, seed=0):
    data = Dataset.from_targets(np.random.default_rng(seed).normal(4.0, math.sqrt(2.0), n))
    model = gaussian_constant(2.0)
    prior = Prior.isotropic(1.0, 1, mean=4.0)
    return model, prior, data, fit_map(model, prior, data)


# ----------------------------------------------------------------------
# Grids
# ----------------------------------------------------------------------

def test_normalizing_a_proper_density_barely_shifts_it():
    y = np.linspace(-6.0, 6.0, 201)
    grid = normalize_grid(PredictiveGrid(y, stats.norm.logpdf(y)))
    assert grid.normalized
    assert abs(grid.log_normalizer) < 1e-4
    assert grid.integrate(grid.density) == pytest.approx(1.0, abs=1e-6)


def test_normalizing_a_constant_gives_the_uniform_density():
    y = np.linspace(0.0, 1.0, 11)
    grid = normalize_grid(PredictiveGrid(y, np.full(11, 3.5)))
    assert grid.log_normalizer == pytest.approx(3.5)
    assert grid.density == pytest.approx(np.ones(11))


def test_normalization_underflow_is_numeric_error():
    y = np.linspace(0.0, 1.0, 5)
    with pytest.raises(NumericError):
        normalize_grid(PredictiveGrid(y, np.full(5, -np.inf)))


def test_grid_rejects_unordered_targets():
    with pytest.raises(ConfigurationError):
        PredictiveGrid([0.0, 2.0, 1.0], [0.0, 0.0, 0.0])
    with pytest.raises(ConfigurationError):
        PredictiveGrid([0.0, 1.0, 2.0], [0.0, 0.0])


@pytest.mark.parametrize("kwargs", [{'count': 200}, {'count': 1}, {'span': 0.0}, {'values': (1.0, 0.0, 2.0)}])
def test_grid_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        GridConfig(**kwargs)


def test_standard_normal_interval(std_normal_grid):
    interval = credible_interval(std_normal_grid, 0.95)
    assert interval.lower == pytest.approx(-1.960, abs=0.01)
    assert interval.upper == pytest.approx(1.960, abs=0.01)
    assert interval.nominal_level == 0.95


def test_uniform_interval(unit_uniform_grid):
    interval = credible_interval(unit_uniform_grid, 0.5)
    assert interval.lower == pytest.approx(0.25, abs=1e-3)
    assert interval.upper == pytest.approx(0.75, abs=1e-3)


@pytest.mark.parametrize("level", [0.0, 1.0, 1.5])
def test_interval_level_must_lie_in_unit_interval(std_normal_grid, level):
    with pytest.raises(ConfigurationError):
        credible_interval(std_normal_grid, level)


def test_intervals_are_nested(std_normal_grid):
    widths = [credible_interval(std_normal_grid, level).width for level in (0.5, 0.75, 0.9, 0.95)]
    assert widths == sorted(widths)


def test_credible_interval_is_closed():
    interval = CredibleInterval(0.0, 1.0, 0.9)
    assert interval.contains(1.0)
    assert not interval.contains(1.0 + 1e-12)


@pytest.mark.parametrize("bounds", [(1.0, 1.0), (2.0, 1.0)])
def test_credible_interval_needs_lower_below_upper(bounds):
    with pytest.raises(ConfigurationError):
        CredibleInterval(*bounds, 0.9)


def test_discrete_interval_on_a_point_mass_spans_its_cell():
    y = np.arange(11.0)
    log_density = np.where(y == 3.0, 0.0, -60.0)
    interval = credible_interval(normalize_grid(PredictiveGrid(y, log_density, discrete=True)), 0.5)
    assert (interval.lower, interval.upper) == (2.5, 3.5)
    assert interval.contains(3.0)
    assert not interval.contains(2.0) and not interval.contains(4.0)


def test_grid_moments(std_normal_grid):
    mean, sd = grid_moments(std_normal_grid)
    assert mean == pytest.approx(0.0, abs=1e-10)
    assert sd == pytest.approx(1.0, abs=1e-3)


# ----------------------------------------------------------------------
# SSLA
# ----------------------------------------------------------------------

def test_ssla_matches_the_conjugate_predictive(normal_spec):
    model, prior, data, fit = _normal_problem(20)
    grid = normalize_grid(ssla_log_ppd(model, prior, data, fit, [1.0], GridConfig(), threads=1))
    truth = analytic_grid(normal_spec, data, grid.y_values)
    assert kl_grid(truth, grid) < 1e-3
    assert grid.failed_points == ()


def test_ssla_is_thread_count_independent():
    model, prior, data, fit = _normal_problem(10)
    cfg = GridConfig(count=21)
    serial = ssla_log_ppd(model, prior, data, fit, [1.0], cfg, threads=1)
    pooled = ssla_log_ppd(model, prior, data, fit, [1.0], cfg, threads=4)
    assert np.array_equal(serial.log_density, pooled.log_density)


def test_ssla_at_self_prediction_coincides_with_assla():
    model, prior, data, fit = _normal_problem(30)
    cfg = GridConfig(count=21)
    curv = build_curvature("dense", model, prior, data, fit.theta)
    ssla = ssla_log_ppd(model, prior, data, fit, [1.0], cfg, threads=1)
    assla = assla_log_ppd(model, prior, data, fit, curv, [1.0], cfg)
    center = 10
    y_hat = ssla.y_values[center]
    ssla_relative = ssla.log_density[center] - model.log_density(fit.theta, [1.0], y_hat)
    assert ssla_relative == pytest.approx(assla.log_density[center], abs=1e-4)


@pytest.mark.slow
def test_ssla_spread_approaches_the_noise_level():
    model, prior, data, fit = _normal_problem(10_000, seed=3)
    grid = normalize_grid(ssla_log_ppd(model, prior, data, fit, [1.0], GridConfig(count=101), threads=1))
    _, sd = grid_moments(grid)
    assert sd == pytest.approx(math.sqrt(2.0), rel=0.02)


def test_ssla_rejects_a_grid_with_too_many_failed_refits():
    model, prior, data, fit = _normal_problem(10)
    with pytest.raises(PredictiveError) as info:
        ssla_log_ppd(model, prior, data, fit, [1.0], GridConfig(count=11),
                     fit_config=FitConfig(refit_max_iterations=0), threads=1)
    assert len(info.value.context['failed_points']) > 0


def test_engines_require_a_converged_fit():
    model, prior, data, _ = _normal_problem(10)
    unconverged = fit_map(model, prior, data, FitConfig(max_iterations=0, warm_start=[0.0]))
    with pytest.raises(PredictiveError):
        ssla_log_ppd(model, prior, data, unconverged, [1.0], GridConfig(count=11))
    grid = ssla_log_ppd(model, prior, data, unconverged, [1.0], GridConfig(count=11), threads=1,
                        require_converged=False)
    assert grid.y_values.size == 11


def test_ssla_poisson_on_integer_support():
    data = Dataset.from_targets(np.random.default_rng(5).poisson(3.0, 20).astype(float))
    model, prior = poisson_constant(), Prior.gamma(6.0, 2.0)
    fit = fit_map(model, prior, data)
    grid = normalize_grid(ssla_log_ppd(model, prior, data, fit, [1.0], GridConfig.integer_support(30), threads=1))
    assert grid.discrete
    assert float(np.sum(grid.density)) == pytest.approx(1.0)
    truth = analytic_grid(PoissonGammaSpec(6.0, 2.0), data, grid.y_values)
    assert kl_grid(truth, grid) < 1e-2


# ----------------------------------------------------------------------
# ASSLA
# ----------------------------------------------------------------------

def test_assla_value_at_self_prediction():
    data = Dataset.from_targets(np.random.default_rng(1).normal(4.0, math.sqrt(2.0), 100))
    model, prior = gaussian_constant(2.0), Prior.flat(1)
    fit = fit_map(model, prior, data)
    curv = build_curvature("dense", model, prior, data, fit.theta)
    grid = assla_log_ppd(model, prior, data, fit, curv, [1.0], GridConfig(count=21))
    assert grid.log_density[10] == pytest.approx(-0.5 * math.log(1.01), abs=1e-9)
    assert grid.log_density[10] == pytest.approx(-0.004975, abs=1e-6)


def test_assla_large_n_matches_the_conjugate_predictive(normal_spec):
    model, prior, data, fit = _normal_problem(100_000, seed=2)
    curv = build_curvature("dense", model, prior, data, fit.theta)
    grid = normalize_grid(assla_log_ppd(model, prior, data, fit, curv, [1.0]))
    assert kl_grid(analytic_grid(normal_spec, data, grid.y_values), grid) < 1e-4


def test_assla_curvature_dimension_must_match():
    model, prior, data, fit = _normal_problem(10)
    with pytest.raises(ConfigurationError):
        assla_log_ppd(model, prior, data, fit, CurvatureMatrix("dense", np.eye(2)), [1.0])


def test_assla_diagonal_structure_runs_on_linear_model(linear_model, linear_data):
    prior = Prior.isotropic(1.0, linear_model.q)
    fit = fit_map(linear_model, prior, linear_data)
    curv = build_curvature("diag", linear_model, prior, linear_data, fit.theta)
    grid = normalize_grid(assla_log_ppd(linear_model, prior, linear_data, fit, curv, [0.5], GridConfig(count=51)))
    assert grid.integrate(grid.density) == pytest.approx(1.0, abs=1e-6)


# ----------------------------------------------------------------------
# Laplace Monte Carlo and plug-in
# ----------------------------------------------------------------------

def test_mc_with_vanishing_covariance_is_the_plugin():
    model, prior, data, fit = _normal_problem(20)
    curv = build_curvature("dense", model, prior, data, fit.theta)
    tight = CurvatureMatrix("dense", curv.to_dense() * 1e8)
    mc = normalize_grid(laplace_mc_ppd(model, prior, fit, tight, [1.0], n_samples=200, seed=3))
    plugin = normalize_grid(plugin_log_ppd(model, fit, [1.0]))
    assert np.max(np.abs(mc.density - plugin.density)) < 1e-3


def test_mc_is_deterministic_given_seed():
    model, prior, data, fit = _normal_problem(20)
    curv = build_curvature("dense", model, prior, data, fit.theta)
    a = laplace_mc_ppd(model, prior, fit, curv, [1.0], n_samples=500, seed=42)
    b = laplace_mc_ppd(model, prior, fit, curv, [1.0], n_samples=500, seed=42)
    c = laplace_mc_ppd(model, prior, fit, curv, [1.0], n_samples=500, seed=43)
    assert np.array_equal(a.log_density, b.log_density)
    assert not np.array_equal(a.log_density, c.log_density)


def test_mc_matches_conjugate_linear_regression():
    rng = np.random.default_rng(6)
    x = rng.uniform(-2.0, 2.0, 15)
    y = 0.8 * x - 0.2 + rng.normal(0.0, 0.5, 15)
    model = gaussian_linear(0.25, 1)
    prior = Prior.isotropic(2.0, model.q)
    data = Dataset(x.reshape(-1, 1), y)
    fit = fit_map(model, prior, data)
    curv = build_curvature("dense", model, prior, data, fit.theta)
    mc = normalize_grid(laplace_mc_ppd(model, prior, fit, curv, [1.3], n_samples=10_000, seed=0))

    spec = BlrSpec(np.zeros(2), 2.0 * np.eye(2), 0.25)
    design = np.column_stack([x, np.ones_like(x)])
    truth = blr_grid(spec, design, y, [1.3, 1.0], mc.y_values)
    assert kl_grid(truth, mc) < 1e-3


def test_mc_needs_enough_samples():
    model, prior, data, fit = _normal_problem(20)
    curv = build_curvature("dense", model, prior, data, fit.theta)
    with pytest.raises(ConfigurationError):
        laplace_mc_ppd(model, prior, fit, curv, [1.0], n_samples=50)


def test_plugin_grid_is_centered_on_the_prediction():
    model, prior, data, fit = _normal_problem(20)
    grid = normalize_grid(plugin_log_ppd(model, fit, [1.0], GridConfig(count=101)))
    mean, sd = grid_moments(grid)
    assert mean == pytest.approx(fit.theta[0], abs=1e-8)
    assert sd == pytest.approx(math.sqrt(2.0), rel=1e-3)


def test_normal_spec_fixture_matches_defaults(normal_spec):
    assert normal_spec == NormalNormalSpec()


def test_assla_is_prior_free_once_the_mode_is_fixed():
    model, prior, data, fit = _normal_problem(40)
    curv = build_curvature("dense", model, prior, data, fit.theta)
    cfg = GridConfig(count=31)
    tight = assla_log_ppd(model, Prior.isotropic(0.01, 1), data, fit, curv, [1.0], cfg)
    loose = assla_log_ppd(model, Prior.isotropic(1e6, 1), data, fit, curv, [1.0], cfg)
    assert np.array_equal(tight.log_density, loose.log_density)


def _ssla_assla_gap(n, seed):
    model, prior, data, fit = _normal_problem(n, seed)
    cfg = GridConfig(count=51)
    curv = build_curvature("dense", model, prior, data, fit.theta)
    ssla = normalize_grid(ssla_log_ppd(model, prior, data, fit, [1.0], cfg, threads=1))
    assla = normalize_grid(assla_log_ppd(model, prior, data, fit, curv, [1.0], cfg))
    return sup_log_gap(ssla, assla)


@pytest.mark.slow
def test_assla_approaches_ssla_as_n_grows():
    decreasing = 0
    for seed in range(10):
        gaps = [_ssla_assla_gap(n, seed) for n in (20, 100, 1000)]
        decreasing += int(gaps[0] > gaps[1] > gaps[2])
    assert decreasing >= 7

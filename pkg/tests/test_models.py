import math

import numpy as np
import pytest

from ppd.data import Dataset, Observation
from ppd.errors import ConfigurationError, DomainError
from ppd.models import (
    GaussianFamily,
    LikelihoodModel,
    LinearPredictor,
    gaussian_constant,
    gaussian_linear,
    heteroscedastic_linear,
    heteroscedastic_mlp,
    log_likelihood,
    per_sample_gradient,
    poisson_constant,
    poisson_loglinear,
    predict,
)


def test_gaussian_log_likelihood_at_the_target():
    value = log_likelihood(gaussian_constant(2.0), Dataset.from_targets([4.0]), [4.0])
    assert value == pytest.approx(-0.5 * math.log(4 * math.pi), abs=1e-12)
    assert value == pytest.approx(-1.2655, abs=1e-4)


def test_poisson_log_likelihood():
    value = log_likelihood(poisson_constant(), Dataset.from_targets([3.0, 2.0, 4.0]), [3.0])
    expected = 9 * math.log(3) - 9 - math.log(6 * 2 * 24)
    assert value == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("targets", [[1.0, -1.0], [1.5]])
def test_poisson_rejects_invalid_targets(targets):
    with pytest.raises(DomainError):
        log_likelihood(poisson_constant(), Dataset.from_targets(targets), [2.0])


def test_parameter_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        log_likelihood(gaussian_linear(1.0, 1), Dataset.from_targets([1.0]), [1.0])


def test_input_dimension_mismatch():
    model = gaussian_linear(1.0, 2)
    with pytest.raises(ConfigurationError):
        log_likelihood(model, Dataset(np.zeros((2, 1)), [0.0, 1.0]), np.zeros(3))


def test_linear_prediction():
    assert predict(gaussian_linear(1.0, 1), [2.0, 1.0], [1.5]).mean == pytest.approx(4.0)


def test_constant_prediction_ignores_inputs():
    model = gaussian_constant(2.0)
    assert predict(model, [3.25], [100.0]).mean == 3.25
    assert predict(model, [3.25], [-7.0]).variance == pytest.approx(2.0)


def test_zero_network_predicts_bias_heads():
    model = heteroscedastic_mlp(1, hidden=(4, 4))
    prediction = predict(model, np.zeros(model.q), [0.7])
    assert prediction.mean == 0.0
    assert prediction.variance == pytest.approx(1.0)


def test_family_and_predictor_must_agree():
    with pytest.raises(ConfigurationError):
        LikelihoodModel(GaussianFamily(1.0), LinearPredictor(1, 2))


def test_per_sample_gradient_examples():
    assert per_sample_gradient(gaussian_constant(1.0), [0.0], Observation([1.0], 1.0)) == pytest.approx([1.0])
    assert per_sample_gradient(gaussian_constant(2.0), [4.0], Observation([1.0], 4.0)) == pytest.approx([0.0])


def _finite_difference(model, theta, obs, h=1e-6):
    grad = np.empty(theta.size)
    data = Dataset(np.atleast_2d(obs.x), [obs.y])
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = h
        grad[j] = (model.log_likelihood(data, theta + e) - model.log_likelihood(data, theta - e)) / (2 * h)
    return grad


@pytest.mark.parametrize("seed", range(10))
def test_linear_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model = gaussian_linear(0.7, 3)
    theta = rng.normal(size=model.q)
    obs = Observation(rng.normal(size=3), rng.normal())
    analytic = per_sample_gradient(model, theta, obs)
    numeric = _finite_difference(model, theta, obs)
    rel = np.max(np.abs(analytic - numeric)) / max(1.0, np.max(np.abs(analytic)))
    assert rel < 1e-6


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_mlp_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng(3)
    model = heteroscedastic_mlp(2, hidden=(5, 4), activation=activation)
    theta = model.initial_theta(Dataset(rng.normal(size=(4, 2)), rng.normal(size=4)), rng)
    obs = Observation(rng.normal(size=2), 0.4)
    analytic = per_sample_gradient(model, theta, obs)
    numeric = _finite_difference(model, theta, obs)
    assert np.max(np.abs(analytic - numeric)) < 1e-5


def test_mlp_outputs_for_params_matches_outputs():
    rng = np.random.default_rng(11)
    model = heteroscedastic_mlp(2, hidden=(3,))
    thetas = rng.normal(size=(4, model.q))
    x = np.array([0.2, -1.0])
    stacked = model.predictor.outputs_for_params(thetas, x)
    for s in range(4):
        assert stacked[s] == pytest.approx(model.outputs(thetas[s], x)[0])


def test_linear_hessian_is_exact():
    model = gaussian_linear(0.5, 1)
    data = Dataset(np.array([[1.0], [2.0]]), [0.0, 0.0])
    expected = -np.array([[1.0 + 4.0, 1.0 + 2.0], [1.0 + 2.0, 2.0]]) / 0.5
    assert model.hessian(data, [0.3, 0.1]) == pytest.approx(expected)


def test_heteroscedastic_curvature_is_fisher():
    model = heteroscedastic_linear(1)
    f = np.array([[0.0, math.log(4.0)]])
    lam = model.family.output_curvature(f, np.array([10.0]))
    assert lam[0] == pytest.approx(np.diag([0.25, 0.5]))


def test_poisson_log_link_requires_linear_predictor():
    model = poisson_loglinear(1)
    assert predict(model, [0.0, math.log(3.0)], [5.0]).mean == pytest.approx(3.0)


def test_single_precision_log_terms():
    model = gaussian_constant(2.0).with_precision("single")
    terms = model.log_terms(Dataset.from_targets([4.0, 5.0]), [4.0])
    assert terms.dtype == np.float32
    with pytest.raises(ConfigurationError):
        gaussian_constant(2.0).with_precision("half")


@pytest.mark.parametrize("factory", [
    lambda: gaussian_linear(0.7, 2),
    lambda: heteroscedastic_linear(2),
    lambda: heteroscedastic_mlp(2, hidden=(4,)),
])
def test_log_likelihood_is_additive_over_disjoint_subsets(factory):
    rng = np.random.default_rng(13)
    model = factory()
    data = Dataset(rng.normal(size=(40, 2)), rng.normal(size=40))
    theta = 0.3 * rng.normal(size=model.q)
    first, rest = data.split(np.arange(0, 40, 3))
    total = model.log_likelihood(data, theta)
    parts = model.log_likelihood(first, theta) + model.log_likelihood(rest, theta)
    assert parts == pytest.approx(total, rel=1e-12)
    assert np.sum(model.log_terms(data, theta)) == pytest.approx(total, rel=1e-12)


def test_poisson_log_likelihood_is_additive():
    model = poisson_loglinear(1)
    data = Dataset(np.linspace(-1.0, 1.0, 12).reshape(-1, 1), [0, 1, 2, 3, 1, 0, 4, 2, 2, 5, 1, 3])
    first, rest = data.split([0, 1, 2, 3, 4])
    theta = [0.4, 0.8]
    assert (model.log_likelihood(first, theta) + model.log_likelihood(rest, theta)
            == pytest.approx(model.log_likelihood(data, theta), rel=1e-12))

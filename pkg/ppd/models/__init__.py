from .base import LikelihoodFamily
from .gaussian import GaussianFamily
from .heteroscedastic import HeteroscedasticFamily
from .poisson import PoissonFamily
from .predictors import ConstantPredictor, LinearPredictor, MLPPredictor, Predictor
from .model import LikelihoodModel, Prediction, log_likelihood, per_sample_gradient, predict


def gaussian_constant(sigma_sq: float) -> LikelihoodModel:
    """Constant-mean Gaussian with known variance (the Normal-Normal setting)."""
    return LikelihoodModel(GaussianFamily(sigma_sq), ConstantPredictor())


def gaussian_linear(sigma_sq: float, input_dim: int = 1) -> LikelihoodModel:
    return LikelihoodModel(GaussianFamily(sigma_sq), LinearPredictor(input_dim, 1))


def poisson_constant() -> LikelihoodModel:
    """Constant-rate Poisson, theta is the rate (the Poisson-Gamma setting)."""
    return LikelihoodModel(PoissonFamily("identity"), ConstantPredictor())


def poisson_loglinear(input_dim: int = 1) -> LikelihoodModel:
    return LikelihoodModel(PoissonFamily("log"), LinearPredictor(input_dim, 1))


def heteroscedastic_mlp(input_dim: int = 1, hidden=(16, 16), activation: str = "tanh") -> LikelihoodModel:
    return LikelihoodModel(HeteroscedasticFamily(), MLPPredictor(input_dim, hidden, 2, activation))


def heteroscedastic_linear(input_dim: int = 1) -> LikelihoodModel:
    return LikelihoodModel(HeteroscedasticFamily(), LinearPredictor(input_dim, 2))


__all__ = [
    'LikelihoodFamily',
    'GaussianFamily',
    'HeteroscedasticFamily',
    'PoissonFamily',
    'Predictor',
    'ConstantPredictor',
    'LinearPredictor',
    'MLPPredictor',
    'LikelihoodModel',
    'Prediction',
    'log_likelihood',
    'predict',
    'per_sample_gradient',
    'gaussian_constant',
    'gaussian_linear',
    'poisson_constant',
    'poisson_loglinear',
    'heteroscedastic_mlp',
    'heteroscedastic_linear',
]

"""
Parametric predictors f_theta(x) with analytic output Jacobians.

Parameter layouts (flat vector theta):
    ConstantPredictor  [c_1, ..., c_k]
    LinearPredictor    head-major, per head [w_1, ..., w_d, b]
    MLPPredictor       layer by layer, per layer [W.ravel() (out x in), b]
"""
from abc import ABC, abstractmethod
from typing import List, Optional, Sequence

import numpy as np

from ..errors import ConfigurationError

ACTIVATIONS = ("tanh", "relu")


class Predictor(ABC):
    """
    Abstract base for predictors.

    Subclasses MUST set ``KIND`` and ``LINEAR_IN_PARAMS`` (True when the
    outputs are affine in theta, making the Gauss-Newton matrix the exact
    Hessian) and implement outputs(), output_jacobian(),
    outputs_for_params() and init_params().
    """

    KIND: str = ""
    LINEAR_IN_PARAMS: bool = True

    def __init__(self, input_dim: int, n_outputs: int):
        if input_dim < 1 or n_outputs < 1:
            raise ConfigurationError("Predictor needs input_dim >= 1 and n_outputs >= 1")
        self.input_dim = int(input_dim)
        self.n_outputs = int(n_outputs)

    @property
    @abstractmethod
    def q(self) -> int:
        pass

    @abstractmethod
    def outputs(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Outputs for n inputs, shape (n, k)."""
        pass

    @abstractmethod
    def output_jacobian(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        """d f / d theta, shape (n, k, q)."""
        pass

    @abstractmethod
    def outputs_for_params(self, thetas: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Outputs at a single input for S parameter draws, shape (S, k)."""
        pass

    @abstractmethod
    def init_params(self, rng: np.random.Generator, output_bias: Optional[np.ndarray] = None) -> np.ndarray:
        pass

    def layer_partition(self) -> List[slice]:
        return [slice(0, self.q)]

    def describe(self) -> dict:
        return {'predictor': self.KIND, 'input_dim': self.input_dim, 'n_outputs': self.n_outputs}

    def __repr__(self) -> str:
        return f"{type(self).__name__}(d={self.input_dim}, k={self.n_outputs}, q={self.q})"


class ConstantPredictor(Predictor):
    """Input-independent outputs; theta is the output itself."""

    KIND = "constant-mean"

    def __init__(self, n_outputs: int = 1, input_dim: int = 1):
        super().__init__(input_dim, n_outputs)

    @property
    def q(self) -> int:
        return self.n_outputs

    def outputs(self, theta, X):
        return np.broadcast_to(theta, (X.shape[0], self.n_outputs)).copy()

    def output_jacobian(self, theta, X):
        return np.broadcast_to(np.eye(self.n_outputs), (X.shape[0], self.n_outputs, self.q)).copy()

    def outputs_for_params(self, thetas, x):
        return np.asarray(thetas, dtype=float).reshape(-1, self.n_outputs)

    def init_params(self, rng, output_bias=None):
        theta = np.zeros(self.q)
        if output_bias is not None:
            theta[:] = output_bias
        return theta


class LinearPredictor(Predictor):
    """Affine predictor, one weight vector and bias per output head."""

    KIND = "linear"

    @property
    def q(self) -> int:
        return self.n_outputs * (self.input_dim + 1)

    def _design(self, X):
        return np.hstack([X, np.ones((X.shape[0], 1), dtype=X.dtype)])

    def outputs(self, theta, X):
        W = theta.reshape(self.n_outputs, self.input_dim + 1)
        return self._design(X) @ W.T

    def output_jacobian(self, theta, X):
        Xa = self._design(X)
        width = self.input_dim + 1
        J = np.zeros((X.shape[0], self.n_outputs, self.q))
        for j in range(self.n_outputs):
            J[:, j, j * width:(j + 1) * width] = Xa
        return J

    def outputs_for_params(self, thetas, x):
        W = np.asarray(thetas, dtype=float).reshape(-1, self.n_outputs, self.input_dim + 1)
        return W @ np.append(np.asarray(x, dtype=float), 1.0)

    def init_params(self, rng, output_bias=None):
        theta = np.zeros((self.n_outputs, self.input_dim + 1))
        if output_bias is not None:
            theta[:, -1] = output_bias
        return theta.ravel()


class MLPPredictor(Predictor):
    """
    Fully connected network with hidden widths ``hidden`` and a linear output layer.

    Args:
        input_dim: Number of input features
        hidden: Hidden layer widths, e.g. (16, 16)
        n_outputs: Output heads (2 for the heteroscedastic family)
        activation: "tanh" (default) or "relu"
    """

    KIND = "mlp"
    LINEAR_IN_PARAMS = False

    def __init__(self, input_dim: int, hidden: Sequence[int] = (16, 16), n_outputs: int = 1,
                 activation: str = "tanh"):
        super().__init__(input_dim, n_outputs)
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"Unknown activation '{activation}', expected one of {ACTIVATIONS}")
        if any(int(h) < 1 for h in hidden):
            raise ConfigurationError(f"Hidden widths must be >= 1, got {list(hidden)}")
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.widths = (self.input_dim,) + self.hidden + (self.n_outputs,)
        self._slices = []
        offset = 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            size = fan_out * fan_in + fan_out
            self._slices.append(slice(offset, offset + size))
            offset += size
        self._q = offset

    @property
    def q(self) -> int:
        return self._q

    def layer_partition(self) -> List[slice]:
        return list(self._slices)

    def _unpack(self, theta):
        """Yield (W, b) per layer; theta may carry a leading batch axis."""
        lead = theta.shape[:-1]
        for sl, fan_in, fan_out in zip(self._slices, self.widths[:-1], self.widths[1:]):
            block = theta[..., sl]
            W = block[..., :fan_out * fan_in].reshape(lead + (fan_out, fan_in))
            b = block[..., fan_out * fan_in:]
            yield W, b

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def _act_grad(self, z, a):
        return 1.0 - a * a if self.activation == "tanh" else (z > 0).astype(z.dtype)

    def _forward(self, theta, X):
        layers = list(self._unpack(theta))
        pre, post = [], [X]
        a = X
        for index, (W, b) in enumerate(layers):
            z = a @ W.T + b
            if index < len(layers) - 1:
                a = self._act(z)
            else:
                a = z
            pre.append(z)
            post.append(a)
        return layers, pre, post

    def outputs(self, theta, X):
        return self._forward(theta, X)[2][-1]

    def output_jacobian(self, theta, X):
        layers, pre, post = self._forward(theta, X)
        n, k = X.shape[0], self.n_outputs
        # delta[i, j, :] = d f_j / d z_l for sample i
        delta = np.broadcast_to(np.eye(k), (n, k, k)).copy()
        pieces = [None] * len(layers)
        for index in range(len(layers) - 1, -1, -1):
            a_prev = post[index]
            dW = np.einsum('nko,ni->nkoi', delta, a_prev).reshape(n, k, -1)
            pieces[index] = np.concatenate([dW, delta], axis=2)
            if index > 0:
                W = layers[index][0]
                delta = (delta @ W) * self._act_grad(pre[index - 1], post[index])[:, None, :]
        return np.concatenate(pieces, axis=2)

    def outputs_for_params(self, thetas, x):
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.q)
        layers = list(self._unpack(thetas))
        a = np.broadcast_to(np.asarray(x, dtype=float), (thetas.shape[0], self.input_dim))
        for index, (W, b) in enumerate(layers):
            z = np.einsum('soi,si->so', W, a) + b
            a = self._act(z) if index < len(layers) - 1 else z
        return a

    def init_params(self, rng, output_bias=None):
        theta = np.zeros(self.q)
        for index, (sl, fan_in, fan_out) in enumerate(zip(self._slices, self.widths[:-1], self.widths[1:])):
            n_weights = fan_out * fan_in
            theta[sl.start:sl.start + n_weights] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), n_weights)
            if index == len(self._slices) - 1 and output_bias is not None:
                theta[sl.start + n_weights:sl.stop] = output_bias
        return theta

    def describe(self) -> dict:
        info = super().describe()
        info.update({'hidden': list(self.hidden), 'activation': self.activation})
        return info

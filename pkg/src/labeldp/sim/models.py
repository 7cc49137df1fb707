"""Small differentiable predictors with a flat parameter vector.

Models compute a raw score ``z`` and its Jacobian; Poisson models pass ``z``
through a softplus link floored at ``POSITIVE_FLOOR`` so predictions stay in
the loss's domain.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..core import LossKind, RandomSource
from ..errors import ParameterError

POSITIVE_FLOOR = 1e-12
MODEL_KINDS = ("linear", "mlp")


class Model:
    n_params: int

    def __init__(self, n_features: int, positive: bool = False):
        if n_features < 1:
            raise ParameterError("need at least one feature")
        self.n_features = int(n_features)
        self.positive = bool(positive)

    def raw(self, theta, X) -> np.ndarray:
        raise NotImplementedError

    def raw_jacobian(self, theta, X) -> np.ndarray:
        raise NotImplementedError

    def init_params(self, rng: RandomSource, scale: float = 0.1) -> np.ndarray:
        return scale * rng.generator.standard_normal(self.n_params)

    def predict(self, theta, X) -> np.ndarray:
        z = self.raw(theta, X)
        if not self.positive:
            return z
        return np.maximum(np.logaddexp(0.0, z), POSITIVE_FLOOR)

    def jacobian(self, theta, X) -> np.ndarray:
        """``d predict / d theta``, one row per example."""
        J = self.raw_jacobian(theta, X)
        if not self.positive:
            return J
        z = self.raw(theta, X)
        slope = np.where(np.logaddexp(0.0, z) > POSITIVE_FLOOR, expit(z), 0.0)
        return J * slope[:, None]


class LinearModel(Model):
    """``w . x + b``; the bias is the last parameter."""

    def __init__(self, n_features: int, positive: bool = False):
        super().__init__(n_features, positive)
        self.n_params = self.n_features + 1

    def raw(self, theta, X):
        return np.asarray(X) @ theta[:-1] + theta[-1]

    def raw_jacobian(self, theta, X):
        X = np.asarray(X, dtype=np.float64)
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def weights(self, theta) -> np.ndarray:
        return np.asarray(theta[:-1])


class MLPModel(Model):
    """One tanh hidden layer.  Layout: ``W (h x d)``, ``c (h)``, ``v (h)``, ``b``."""

    def __init__(self, n_features: int, hidden: int = 16, positive: bool = False):
        super().__init__(n_features, positive)
        if hidden < 1:
            raise ParameterError("hidden must be at least 1")
        self.hidden = int(hidden)
        self.n_params = self.hidden * (self.n_features + 2) + 1

    def _unpack(self, theta):
        h, d = self.hidden, self.n_features
        W = theta[: h * d].reshape(h, d)
        c = theta[h * d: h * d + h]
        v = theta[h * d + h: h * d + 2 * h]
        return W, c, v, theta[-1]

    def _hidden(self, theta, X):
        W, c, v, b = self._unpack(theta)
        return np.tanh(np.asarray(X) @ W.T + c), v, b

    def raw(self, theta, X):
        t, v, b = self._hidden(theta, X)
        return t @ v + b

    def raw_jacobian(self, theta, X):
        X = np.asarray(X, dtype=np.float64)
        t, v, _ = self._hidden(theta, X)
        g = (1.0 - t * t) * v  # d z / d (pre-activation)
        dW = (g[:, :, None] * X[:, None, :]).reshape(X.shape[0], -1)
        return np.hstack([dW, g, t, np.ones((X.shape[0], 1))])


def make_model(kind: str, n_features: int, loss=LossKind.SQUARED, hidden: int = 16) -> Model:
    """Linear or one-hidden-layer model; Poisson loss turns on the positive link."""
    positive = LossKind.parse(loss) is LossKind.POISSON
    if kind == "linear":
        return LinearModel(n_features, positive)
    if kind == "mlp":
        return MLPModel(n_features, hidden, positive)
    raise ParameterError(f"unknown model {kind!r}; choose from {MODEL_KINDS}")


def objective(model: Model, theta, X, y, loss=LossKind.SQUARED, l2: float = 0.0) -> float:
    loss = LossKind.parse(loss)
    value = float(np.mean(loss.value_of(model.predict(theta, X), y)))
    return value + 0.5 * l2 * float(theta @ theta)


def objective_grad(model: Model, theta, X, y, loss=LossKind.SQUARED,
                   l2: float = 0.0) -> tuple[float, np.ndarray]:
    """Mean loss plus ``l2/2 |theta|^2`` and its gradient."""
    loss = LossKind.parse(loss)
    f = model.predict(theta, X)
    value = float(np.mean(loss.value_of(f, y))) + 0.5 * l2 * float(theta @ theta)
    d = loss.derivative(f, y)
    grad = model.jacobian(theta, X).T @ d / len(f) + l2 * theta
    return value, grad


__all__ = ["Model", "LinearModel", "MLPModel", "make_model", "objective", "objective_grad",
           "POSITIVE_FLOOR", "MODEL_KINDS"]

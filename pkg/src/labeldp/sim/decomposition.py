"""Split the noisy mini-batch gradient error into sampling, bias and noise parts.

For a batch ``S`` with true labels, expected noisy labels ``ỹ = E[M(y)]`` and
sampled noisy labels ``ŷ``:

* ``a`` = clean batch gradient minus the population gradient,
* ``b`` = gradient at ``ỹ`` minus gradient at ``y`` (label bias),
* ``c`` = gradient at ``ŷ`` minus gradient at ``ỹ`` (zero-mean label noise).

Both losses are affine in the label, so ``a + b + c`` is exactly the noisy
batch gradient minus the population gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import LossKind, RandomizerMatrix, RandomSource
from ..mechanisms import FiniteMechanism
from .models import Model


@dataclass(frozen=True, eq=False)
class GradientTerms:
    a: np.ndarray | None
    b: np.ndarray
    c: np.ndarray
    expected_labels: np.ndarray
    noisy_labels: np.ndarray


def _label_gradient(model: Model, theta, X, labels, loss: LossKind, J=None, f=None):
    f = model.predict(theta, X) if f is None else f
    J = model.jacobian(theta, X) if J is None else J
    return J.T @ loss.derivative(f, labels) / len(f)


def population_gradient(model: Model, theta, reference, bayes, loss=LossKind.SQUARED) -> np.ndarray:
    """Gradient of the population loss: the label enters only through ``E[y | x]``."""
    loss = LossKind.parse(loss)
    X, weights = reference
    f = model.predict(theta, X)
    return model.jacobian(theta, X).T @ (weights * loss.derivative(f, bayes(X)))


def _as_mechanism(mechanism):
    if isinstance(mechanism, RandomizerMatrix):
        return FiniteMechanism(mechanism)
    return mechanism


def grad_decomposition(model: Model, theta, X, y, mechanism, loss, rng: RandomSource, *,
                       population=None) -> GradientTerms:
    """Terms ``(a, b, c)`` of the noisy-gradient error for one batch.

    ``mechanism`` is a :class:`RandomizerMatrix` or any object with
    ``expected`` and ``privatize``.  ``population`` is an optional
    ``(reference, bayes)`` pair; without it ``a`` is ``None``.
    """
    loss = LossKind.parse(loss)
    mech = _as_mechanism(mechanism)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    f = model.predict(theta, X)
    J = model.jacobian(theta, X)
    y_tilde = mech.expected(y)
    y_hat = mech.privatize(y, rng)
    g_clean = _label_gradient(model, theta, X, y, loss, J, f)
    g_tilde = _label_gradient(model, theta, X, y_tilde, loss, J, f)
    g_hat = _label_gradient(model, theta, X, y_hat, loss, J, f)
    a = None
    if population is not None:
        reference, bayes = population
        a = g_clean - population_gradient(model, theta, reference, bayes, loss)
    return GradientTerms(a, g_tilde - g_clean, g_hat - g_tilde, y_tilde, y_hat)


__all__ = ["GradientTerms", "grad_decomposition", "population_gradient"]

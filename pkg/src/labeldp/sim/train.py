"""Mini-batch SGD with a best-checkpoint rule."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core import LossKind, RandomSource
from ..errors import ParameterError
from .models import Model, objective, objective_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SGDConfig:
    """Step size ``learning_rate / (1 + lr_decay * epoch)``; patience 0 disables early stopping."""

    learning_rate: float
    batch_size: int
    epochs: int
    l2: float = 0.0
    loss: LossKind = LossKind.SQUARED
    early_stop_patience: int = 0
    lr_decay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if int(self.batch_size) < 1 or int(self.epochs) < 1:
            raise ParameterError("batch_size and epochs must be at least 1")
        if self.l2 < 0 or self.lr_decay < 0:
            raise ParameterError("l2 and lr_decay must be non-negative")
        if int(self.early_stop_patience) < 0:
            raise ParameterError("early_stop_patience must be non-negative")

    def to_dict(self) -> dict:
        return {"learning_rate": self.learning_rate, "batch_size": self.batch_size,
                "epochs": self.epochs, "l2": self.l2, "loss": self.loss.value,
                "early_stop_patience": self.early_stop_patience, "lr_decay": self.lr_decay}

    @classmethod
    def from_dict(cls, data: dict) -> "SGDConfig":
        try:
            return cls(**data)
        except TypeError as exc:
            raise ParameterError(f"bad sgd config: {exc}") from None


@dataclass(frozen=True, eq=False)
class TrainResult:
    """``trace[0]`` is the loss at initialisation, ``trace[e]`` after epoch ``e``."""

    theta: np.ndarray
    trace: np.ndarray
    best_epoch: int
    blowup: bool
    stopped_early: bool


def train_sgd(data, model: Model, config: SGDConfig, rng: RandomSource,
              theta0=None) -> TrainResult:
    """Shuffle each epoch, step on mini-batches, record the full training loss.

    With early stopping, or after a non-finite loss, the parameters with the
    lowest recorded training loss are returned; otherwise the final ones.
    """
    X, y = data
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if X.shape[0] != n or n == 0:
        raise ParameterError("features and labels must have the same non-zero length")
    gen = rng.generator
    theta = model.init_params(rng) if theta0 is None else np.array(theta0, dtype=np.float64)
    loss, l2, bs = config.loss, config.l2, int(config.batch_size)

    def full_loss(t):
        with np.errstate(all="ignore"):
            return objective(model, t, X, y, loss, l2)

    trace = [full_loss(theta)]
    best, best_theta, best_epoch = trace[0], theta.copy(), 0
    blowup = stopped = False
    since_best = 0
    for epoch in range(int(config.epochs)):
        lr = config.learning_rate / (1.0 + config.lr_decay * epoch)
        order = gen.permutation(n)
        with np.errstate(all="ignore"):
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                _, g = objective_grad(model, theta, X[idx], y[idx], loss, l2)
                theta = theta - lr * g
                if not np.all(np.isfinite(theta)):
                    break
        value = full_loss(theta) if np.all(np.isfinite(theta)) else math.inf
        trace.append(value)
        if not math.isfinite(value):
            blowup = True
            log.warning("training diverged in epoch %d; keeping epoch %d", epoch + 1, best_epoch)
            break
        if value < best:
            best, best_theta, best_epoch, since_best = value, theta.copy(), epoch + 1, 0
        else:
            since_best += 1
            if config.early_stop_patience and since_best >= config.early_stop_patience:
                stopped = True
                break
    if blowup or config.early_stop_patience:
        theta = best_theta
    else:
        best_epoch = len(trace) - 1
    return TrainResult(theta, np.array(trace), best_epoch, blowup, stopped)


__all__ = ["SGDConfig", "TrainResult", "train_sgd"]

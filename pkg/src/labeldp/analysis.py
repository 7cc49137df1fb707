"""Exact loss and bias diagnostics for finite randomizers.

Nothing here samples: every quantity is a finite sum over matrix entries,
which is what lets these routines serve as oracles for the rest of the
package.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import EXACT_TOL, LabelSet, LossKind, Prior, RandomizerMatrix, label_biases
from .errors import DomainError, ParameterError, StructuralError


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """``mass[f, a]`` is the probability of feature ``features[f]`` with label ``labels[a]``."""

    features: tuple
    labels: LabelSet
    mass: np.ndarray

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=np.float64)
        features = tuple(self.features)
        if mass.shape != (len(features), len(self.labels)):
            raise StructuralError(f"mass of shape {mass.shape} does not match "
                                  f"{len(features)} features x {len(self.labels)} labels")
        if len(set(features)) != len(features):
            raise ParameterError("feature symbols must be distinct")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise ParameterError("masses must be finite and non-negative")
        if abs(mass.sum() - 1.0) > EXACT_TOL:
            raise ParameterError(f"joint mass sums to {mass.sum()!r}, not 1")
        mass = mass.copy()
        mass.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "mass", mass)

    def feature_marginal(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    def label_prior(self) -> Prior:
        return Prior.from_weights(self.labels, self.mass.sum(axis=0))


@dataclass(frozen=True)
class PredictorTable:
    predictions: Mapping

    def __getitem__(self, x) -> float:
        return self.predictions[x]

    def as_array(self, features: Sequence) -> np.ndarray:
        try:
            return np.array([float(self.predictions[x]) for x in features])
        except KeyError as exc:
            raise ParameterError(f"predictor undefined on feature {exc.args[0]!r}") from None


@dataclass(frozen=True, eq=False)
class LabelMoments:
    bias: np.ndarray
    variance: np.ndarray


def _cell_losses(matrix: RandomizerMatrix, loss: LossKind) -> np.ndarray:
    y = matrix.inputs.values[:, None]
    out = matrix.outputs.values[None, :]
    return np.asarray(loss.value_of(out, y))


def noisy_label_loss(matrix: RandomizerMatrix, prior: Prior,
                     loss: LossKind = LossKind.SQUARED) -> float:
    """``sum_y p_y sum_i M[y, i] g(ŷ_i, y)``."""
    loss = LossKind.parse(loss)
    if prior.labels != matrix.inputs:
        raise StructuralError("prior and randomizer have different input labels")
    if loss is LossKind.POISSON and np.any(matrix.outputs.values <= 0):
        raise DomainError("Poisson loss needs strictly positive outputs")
    return float(prior.probs @ (matrix.probs * _cell_losses(matrix, loss)).sum(axis=1))


def label_moments(matrix: RandomizerMatrix) -> LabelMoments:
    mean = matrix.probs @ matrix.outputs.values
    dev = matrix.outputs.values[None, :] - mean[:, None]
    return LabelMoments(label_biases(matrix), (matrix.probs * dev * dev).sum(axis=1))


def bayes_predictor(joint: JointDistribution) -> PredictorTable:
    """Conditional mean of the label per feature."""
    marg = joint.feature_marginal()
    if np.any(marg <= 0):
        bad = joint.features[int(np.argmin(marg))]
        raise DomainError(f"feature {bad!r} has zero marginal mass")
    means = joint.mass @ joint.labels.values / marg
    return PredictorTable(dict(zip(joint.features, means.tolist())))


def pushforward(joint: JointDistribution, matrix: RandomizerMatrix) -> JointDistribution:
    """Joint law of ``(x, M(y))``; outputs become the new label set."""
    if joint.labels != matrix.inputs:
        raise StructuralError("joint labels differ from the randomizer inputs")
    mass = joint.mass @ matrix.probs
    # renormalise away the rounding drift from summing rows
    mass = mass / mass.sum()
    return JointDistribution(joint.features, LabelSet(matrix.outputs.values), mass)


def population_loss(predictor: PredictorTable, joint: JointDistribution,
                    loss: LossKind = LossKind.SQUARED) -> float:
    loss = LossKind.parse(loss)
    f = predictor.as_array(joint.features)
    return float((joint.mass * loss.value_of(f[:, None], joint.labels.values[None, :])).sum())


def triangle_terms(predictor: PredictorTable, joint: JointDistribution,
                   matrix: RandomizerMatrix, loss: LossKind = LossKind.SQUARED):
    """``(lhs, noisy label loss, loss against noisy labels)``.

    With squared loss ``(a - c)^2 <= 2 (a - b)^2 + 2 (b - c)^2`` gives
    ``lhs <= 2 (g + against_noisy)`` in general.
    """
    loss = LossKind.parse(loss)
    lhs = population_loss(predictor, joint, loss)
    g = noisy_label_loss(matrix, joint.label_prior(), loss)
    against_noisy = population_loss(predictor, pushforward(joint, matrix), loss)
    return lhs, g, against_noisy


@dataclass(frozen=True)
class SweepPoint:
    mesh: int
    delta: float
    loss: float
    bound_ok: bool


def discretization_sweep(prior: Prior, labels: LabelSet, epsilon: float,
                         mesh_sizes: Sequence[int], **solve_kwargs) -> list[SweepPoint]:
    """Optimal unbiased loss per grid size, checked against the finest grid.

    The slack allowed at mesh ``m`` is ``(U - L) * Δ(m)``: squared loss is
    ``(U - L)``-Lipschitz in the output on ``[L, U]``.
    """
    from .optlp import compute_opt_unbiased, feasible_output_set, grid_endpoints

    if prior.labels != labels:
        raise StructuralError("prior is over a different label set")
    meshes = [int(m) for m in mesh_sizes]
    if not meshes or any(m < 2 for m in meshes) or any(b <= a for a, b in zip(meshes, meshes[1:])):
        raise ParameterError("mesh sizes must be increasing and at least 2")
    lo, hi = grid_endpoints(labels, epsilon)
    losses = []
    for m in meshes:
        M = compute_opt_unbiased(prior, feasible_output_set(labels, epsilon, m), epsilon,
                                 **solve_kwargs)
        losses.append(noisy_label_loss(M, prior))
    finest = losses[-1]
    out = []
    for m, value in zip(meshes, losses):
        delta = float(hi - lo) / (m - 1)
        out.append(SweepPoint(m, delta, value, value <= finest + (hi - lo) * delta))
    return out


__all__ = [
    "JointDistribution", "PredictorTable", "LabelMoments", "SweepPoint", "noisy_label_loss",
    "label_moments", "bayes_predictor", "pushforward", "population_loss", "triangle_terms",
    "discretization_sweep",
]

"""End-to-end label privatization.

``label_randomizer`` spends ``epsilon1`` on a Laplace-noised label histogram,
solves for the optimal unbiased randomizer at ``epsilon2`` against that
estimate, and privatizes every label with it.  Continuous labels are first
rounded onto a grid with unbiased randomized rounding.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import EXACT_TOL, LabelSet, OutputGrid, Prior, RandomizerMatrix, RandomSource, sample_many
from .errors import ParameterError, RangeError, StructuralError
from .mechanisms import (AdditiveMechanism, ClipRange, FiniteMechanism, NoiseKind, clip,
                         dbrr_matrix, optimal_rr_on_bins, rr_matrix, urr_many)
from .optlp import DEFAULT_GRID_SIZE, compute_opt_unbiased, feasible_output_set

log = logging.getLogger(__name__)

GRID_EPSILONS = ("epsilon2", "epsilon1")


@dataclass(frozen=True)
class BudgetSplit:
    epsilon1: float
    epsilon2: float

    def __post_init__(self):
        if not (self.epsilon1 > 0 and self.epsilon2 > 0):
            raise ParameterError("both parts of the budget must be positive")

    @property
    def total(self) -> float:
        return self.epsilon1 + self.epsilon2


def split_budget(epsilon: float, k: int, n: int) -> BudgetSplit:
    """``ε1 = min(sqrt(k / n), ε / 2)`` for the prior and the rest for the labels."""
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    if k < 1 or n < 1:
        raise ParameterError("k and n must be at least 1")
    eps1 = min(math.sqrt(k / n), epsilon / 2)
    return BudgetSplit(eps1, epsilon - eps1)


def _normalize_noisy_counts(counts, label_set: LabelSet) -> Prior:
    """Clip at zero and normalise; an all-zero histogram falls back to uniform."""
    clipped = np.maximum(np.asarray(counts, dtype=np.float64), 0.0)
    if not clipped.sum() > 0:
        log.warning("every noisy count clipped to zero; using a uniform prior")
        return Prior.uniform(label_set)
    return Prior.from_weights(label_set, clipped)


def estimate_prior_laplace(labels, label_set: LabelSet, epsilon: float, rng: RandomSource,
                           *, add_noise: bool = True) -> Prior:
    """Label histogram plus ``Lap(2/ε)`` per bucket, clipped and normalised.

    ``add_noise=False`` returns the exact empirical distribution (testing only;
    it is not private).
    """
    ys = np.asarray(labels, dtype=np.float64).reshape(-1)
    if ys.size == 0:
        raise ParameterError("cannot estimate a prior from zero labels")
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    counts = np.bincount(label_set.indices(ys), minlength=len(label_set)).astype(np.float64)
    if add_noise:
        counts = counts + rng.generator.laplace(0.0, 2.0 / epsilon, counts.size)
    return _normalize_noisy_counts(counts, label_set)


@dataclass(frozen=True, eq=False)
class PrivatizationRun:
    split: BudgetSplit
    estimated_prior: Prior
    randomizer: RandomizerMatrix
    noisy_labels: np.ndarray
    seed: int

    @property
    def privacy_cost(self) -> float:
        return self.split.total


def label_randomizer(labels, label_set: LabelSet, epsilon1: float, epsilon2: float,
                     grid_size: int = DEFAULT_GRID_SIZE, rng: RandomSource = None, *,
                     grid_epsilon: str = "epsilon2", backend: str = "auto") -> PrivatizationRun:
    """Estimate the prior at ``epsilon1``, build the grid, solve at ``epsilon2``, sample.

    The grid endpoints are those of debiased RR at the randomization budget
    (``grid_epsilon="epsilon2"``); ``"epsilon1"`` builds them at the prior
    budget instead, which gives a far wider grid when ``epsilon1`` is small.
    """
    if rng is None:
        raise ParameterError("a RandomSource is required")
    if grid_epsilon not in GRID_EPSILONS:
        raise ParameterError(f"grid_epsilon must be one of {GRID_EPSILONS}")
    split = BudgetSplit(epsilon1, epsilon2)
    ys = np.asarray(labels, dtype=np.float64).reshape(-1)
    prior_rng, sample_rng = rng.spawn(2)
    prior = estimate_prior_laplace(ys, label_set, epsilon1, prior_rng)
    if len(label_set) == 1:
        matrix = RandomizerMatrix(label_set, OutputGrid(label_set.values), [[1.0]], epsilon2)
    else:
        eps_grid = epsilon2 if grid_epsilon == "epsilon2" else epsilon1
        grid = feasible_output_set(label_set, eps_grid, grid_size)
        matrix = compute_opt_unbiased(prior, grid, epsilon2, backend=backend)
    noisy = sample_many(matrix, ys, sample_rng)
    return PrivatizationRun(split, prior, matrix, noisy, rng.seed)


def clip_labels(labels, lo: float, hi: float) -> np.ndarray:
    """Clip into ``[lo, hi]``; clipping biases labels near the ends, so it is logged."""
    ys = np.asarray(labels, dtype=np.float64)
    n_out = int(np.count_nonzero((ys < lo) | (ys > hi)))
    if n_out:
        log.info("clipped %d of %d labels into [%g, %g]", n_out, ys.size, lo, hi)
    return clip(ys, ClipRange(lo, hi))


def discretization_grid(lo: float, hi: float, step: float, *, snap: float = 1e-9) -> LabelSet:
    """``{lo, lo + step, ..., hi}``; ``hi - lo`` must be a whole number of steps."""
    if not lo < hi:
        raise ParameterError("need lo < hi")
    if not step > 0:
        raise ParameterError("step must be positive")
    m = round((hi - lo) / step)
    if m < 1 or abs(m * step - (hi - lo)) > snap * (hi - lo):
        raise ParameterError("hi - lo must be a whole number of steps")
    grid = lo + step * np.arange(m + 1)
    grid[-1] = hi
    return LabelSet(grid)


def discretize_continuous(labels, lo: float, hi: float, step: float, rng: RandomSource,
                          *, snap: float = EXACT_TOL) -> tuple[LabelSet, np.ndarray]:
    """Round real labels onto a uniform grid without changing their means."""
    grid = discretization_grid(lo, hi, step)
    ys = np.asarray(labels, dtype=np.float64).reshape(-1)
    if ys.size and (ys.min() < lo or ys.max() > hi):
        raise RangeError(f"labels must lie in [{lo}, {hi}]; clip them first")
    return grid, urr_many(ys, OutputGrid(grid.values), rng, snap=snap)


# -- named mechanisms shared by the CLI and the simulator ----------------------

MECHANISM_NAMES = ("laplace", "laplace-clipped", "staircase", "staircase-clipped", "rr",
                   "rr-on-bins", "dbrr", "opt-unbiased")


@dataclass(frozen=True, eq=False)
class MechanismChoice:
    """A ready-to-apply mechanism plus how its budget was spent."""

    name: str
    mechanism: object
    split: BudgetSplit | None
    prior: Prior | None

    @property
    def matrix(self) -> RandomizerMatrix | None:
        return getattr(self.mechanism, "matrix", None)


def _integral(values) -> bool:
    v = np.asarray(values, dtype=np.float64)
    return bool(np.all(np.mod(v, 1.0) == 0))


def make_mechanism(name: str, label_set: LabelSet, epsilon: float, rng: RandomSource, *,
                   labels=None, grid_size: int = DEFAULT_GRID_SIZE, prior_epsilon="auto",
                   support: str | None = None, backend: str = "auto") -> MechanismChoice:
    """Build one of :data:`MECHANISM_NAMES` at total budget ``epsilon``.

    Prior-dependent mechanisms (``rr-on-bins``, ``opt-unbiased``) spend
    ``prior_epsilon`` (``"auto"`` = :func:`split_budget`) of the budget on a
    private histogram of ``labels``.  Additive noise is discrete when every
    label is an integer unless ``support`` says otherwise; its sensitivity is
    the label range.
    """
    if name not in MECHANISM_NAMES:
        raise ParameterError(f"unknown mechanism {name!r}; choose from {MECHANISM_NAMES}")
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    if name in ("rr-on-bins", "opt-unbiased"):
        if labels is None:
            raise ParameterError(f"{name} needs the labels to estimate a prior")
        ys = np.asarray(labels, dtype=np.float64).reshape(-1)
        if prior_epsilon == "auto":
            split = split_budget(epsilon, len(label_set), ys.size)
        else:
            eps1 = float(prior_epsilon)
            if not 0 < eps1 < epsilon:
                raise ParameterError("prior epsilon must lie strictly between 0 and epsilon")
            split = BudgetSplit(eps1, epsilon - eps1)
        prior = estimate_prior_laplace(ys, label_set, split.epsilon1, rng)
        if name == "rr-on-bins":
            matrix, _ = optimal_rr_on_bins(prior, split.epsilon2)
        elif len(label_set) == 1:
            matrix = RandomizerMatrix(label_set, OutputGrid(label_set.values), [[1.0]],
                                      split.epsilon2)
        else:
            grid = feasible_output_set(label_set, split.epsilon2, grid_size)
            matrix = compute_opt_unbiased(prior, grid, split.epsilon2, backend=backend)
        return MechanismChoice(name, FiniteMechanism(matrix, name), split, prior)
    if name == "rr":
        return MechanismChoice(name, FiniteMechanism(rr_matrix(label_set, epsilon), name),
                               None, None)
    if name == "dbrr":
        return MechanismChoice(name, FiniteMechanism(dbrr_matrix(label_set, epsilon), name),
                               None, None)
    family, _, clipped = name.partition("-")
    if support is None:
        support = "discrete" if _integral(label_set.values) else "continuous"
    sensitivity = label_set.max - label_set.min
    if sensitivity == 0:
        sensitivity = 1.0
    rng_range = ClipRange(label_set.min, label_set.max) if clipped else None
    mech = AdditiveMechanism(NoiseKind(family, support), epsilon, sensitivity, rng_range, name)
    return MechanismChoice(name, mech, None, None)


# -- label files ---------------------------------------------------------------

LABEL_HEADER = "label"
NOISY_HEADER = "noisy_label"


def parse_labels_csv(text: str, source: str = "<labels>") -> np.ndarray:
    """One numeric column with an optional ``label`` or ``noisy_label`` header.

    Blank lines are ignored.
    """
    values = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 1:
            raise StructuralError(f"{source}:{lineno}: expected one column, found {len(row)}")
        cell = row[0].strip()
        if lineno == 1 and not values and cell in (LABEL_HEADER, NOISY_HEADER):
            continue
        try:
            value = float(cell)
        except ValueError:
            raise StructuralError(f"{source}:{lineno}: {cell!r} is not a number") from None
        if not math.isfinite(value):
            raise StructuralError(f"{source}:{lineno}: labels must be finite")
        values.append(value)
    if not values:
        raise StructuralError(f"{source}: no labels found")
    return np.array(values, dtype=np.float64)


def read_labels_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_labels_csv(fh.read(), str(path))


def format_noisy_csv(noisy, original=None) -> str:
    """``noisy_label`` column, preceded by ``label`` only when originals are passed."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    noisy = np.asarray(noisy, dtype=np.float64)
    if original is None:
        writer.writerow([NOISY_HEADER])
        writer.writerows([repr(v)] for v in noisy.tolist())
    else:
        original = np.asarray(original, dtype=np.float64)
        if original.shape != noisy.shape:
            raise StructuralError("original and noisy labels differ in length")
        writer.writerow([LABEL_HEADER, NOISY_HEADER])
        writer.writerows([repr(a), repr(b)] for a, b in zip(original.tolist(), noisy.tolist()))
    return buf.getvalue()


def prior_to_dict(prior: Prior) -> dict:
    return {"labels": prior.labels.values.tolist(), "probabilities": prior.probs.tolist()}


def prior_from_dict(data: dict) -> Prior:
    try:
        return Prior(LabelSet(data["labels"]), data["probabilities"])
    except KeyError as exc:
        raise StructuralError(f"prior file lacks key {exc.args[0]!r}") from None


def load_prior(path) -> Prior:
    with open(path, encoding="utf-8") as fh:
        return prior_from_dict(json.load(fh))


__all__ = [
    "LABEL_HEADER", "NOISY_HEADER", "parse_labels_csv", "read_labels_csv", "format_noisy_csv",
    "prior_to_dict", "prior_from_dict", "load_prior",
    "BudgetSplit", "PrivatizationRun", "split_budget", "estimate_prior_laplace",
    "label_randomizer", "clip_labels", "discretization_grid", "discretize_continuous",
    "MECHANISM_NAMES", "MechanismChoice", "make_mechanism",
]

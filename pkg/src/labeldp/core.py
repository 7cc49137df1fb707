"""Domain types and primitives over finite label randomizers.

A finite randomizer is a row-stochastic matrix ``M[y, i] = Pr[M(y) = out_i]``
over an ordered input label set and an ordered output grid.  Everything
else in the package (LP solutions, randomized response, bins, dbRR) is
expressed as a :class:`RandomizerMatrix`.
"""
from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DomainError,
    ParameterError,
    StructuralError,
    UnknownLabelError,
)

#: Tolerance for invariants that hold exactly up to float rounding.
EXACT_TOL = 1e-12
#: Tolerance for matrices extracted from an LP solve.
LP_TOL = 1e-9


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class _OrderedReals:
    """Strictly increasing, finite, non-empty sequence of reals."""

    __slots__ = ("_values", "_index")

    def __init__(self, values: Iterable[float]):
        arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                         dtype=np.float64).reshape(-1)
        name = type(self).__name__
        if arr.size == 0:
            raise ParameterError(f"{name} needs at least one value")
        if not np.all(np.isfinite(arr)):
            raise ParameterError(f"{name} values must be finite")
        if arr.size > 1 and not np.all(np.diff(arr) > 0):
            raise ParameterError(f"{name} values must be strictly increasing")
        self._values = _frozen_array(arr)
        self._index = None

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __len__(self) -> int:
        return int(self._values.size)

    def __iter__(self) -> Iterator[float]:
        return iter(self._values.tolist())

    def __getitem__(self, i):
        return self._values[i]

    def __contains__(self, y) -> bool:
        try:
            self.index(y)
        except UnknownLabelError:
            return False
        return True

    def __eq__(self, other) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        return np.array_equal(self._values, other._values)

    def __hash__(self) -> int:
        return hash((type(self).__name__, self._values.tobytes()))

    def __repr__(self) -> str:
        vals = self._values
        if vals.size > 8:
            body = ", ".join(f"{v:g}" for v in vals[:3]) + ", ..., " + ", ".join(
                f"{v:g}" for v in vals[-2:])
        else:
            body = ", ".join(f"{v:g}" for v in vals)
        return f"{type(self).__name__}([{body}])"

    def index(self, y: float) -> int:
        """Position of ``y`` in the sequence (exact float match)."""
        if self._index is None:
            self._index = {float(v): i for i, v in enumerate(self._values)}
        try:
            return self._index[float(y)]
        except (KeyError, TypeError, ValueError):
            raise UnknownLabelError(f"{y!r} is not in {self!r}") from None

    def indices(self, ys) -> np.ndarray:
        """Vectorised :meth:`index`; raises on the first unknown label."""
        ys = np.asarray(ys, dtype=np.float64).reshape(-1)
        pos = np.searchsorted(self._values, ys)
        pos = np.minimum(pos, self._values.size - 1)
        bad = self._values[pos] != ys
        if np.any(bad):
            raise UnknownLabelError(f"{ys[bad][0]!r} is not in {self!r}")
        return pos

    @property
    def min(self) -> float:
        return float(self._values[0])

    @property
    def max(self) -> float:
        return float(self._values[-1])


class LabelSet(_OrderedReals):
    """The finite set of input labels, sorted ascending."""

    __slots__ = ()


class OutputGrid(_OrderedReals):
    """The finite sequence of candidate output labels, sorted ascending."""

    __slots__ = ()


@dataclass(frozen=True, eq=False)
class Prior:
    labels: LabelSet
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if probs.size != len(self.labels):
            raise StructuralError(
                f"prior has {probs.size} probabilities for {len(self.labels)} labels")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ParameterError("prior probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > EXACT_TOL:
            raise ParameterError(f"prior sums to {probs.sum()!r}, not 1")
        object.__setattr__(self, "probs", _frozen_array(probs))

    @classmethod
    def uniform(cls, labels: LabelSet) -> "Prior":
        k = len(labels)
        return cls(labels, np.full(k, 1.0 / k))

    @classmethod
    def from_weights(cls, labels: LabelSet, weights) -> "Prior":
        """Normalise non-negative weights (counts, clipped noisy counts, ...)."""
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not total > 0:
            raise ParameterError("weights must have positive total")
        probs = w / total
        # absorb the last ulp of rounding so the 1e-12 invariant holds exactly
        probs[np.argmax(probs)] += 1.0 - probs.sum()
        return cls(labels, probs)

    def mean(self) -> float:
        return float(self.probs @ self.labels.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Prior):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.probs, other.probs)


@dataclass(frozen=True, eq=False)
class RandomizerMatrix:
    """``probs[a, i]`` is the probability that input ``inputs[a]`` maps to ``outputs[i]``.

    Construction only checks shapes and finiteness; use
    :func:`validate_randomizer` for the stochastic/DP/unbiasedness checks.
    """

    inputs: LabelSet
    outputs: OutputGrid
    probs: np.ndarray
    epsilon: float

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape != (len(self.inputs), len(self.outputs)):
            raise StructuralError(
                f"probability matrix of shape {probs.shape} does not match "
                f"{len(self.inputs)} inputs x {len(self.outputs)} outputs")
        if not np.all(np.isfinite(probs)):
            raise StructuralError("probability matrix has non-finite entries")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ParameterError(f"epsilon must be positive and finite, got {self.epsilon!r}")
        object.__setattr__(self, "probs", _frozen_array(probs))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @classmethod
    def from_columns(cls, inputs: LabelSet, output_values: Sequence[float], probs,
                     epsilon: float) -> "RandomizerMatrix":
        """Build a matrix from possibly unsorted, possibly repeated output values.

        Columns sharing an output value are merged by summing their mass.
        """
        vals = np.asarray(output_values, dtype=np.float64).reshape(-1)
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[1] != vals.size:
            raise StructuralError("one column of probabilities per output value required")
        uniq, inverse = np.unique(vals, return_inverse=True)
        merged = np.zeros((probs.shape[0], uniq.size))
        np.add.at(merged.T, inverse, probs.T)
        return cls(inputs, OutputGrid(uniq), merged, epsilon)

    @property
    def k(self) -> int:
        return len(self.inputs)

    def row(self, y: float) -> np.ndarray:
        return self.probs[self.inputs.index(y)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RandomizerMatrix):
            return NotImplemented
        return (self.inputs == other.inputs and self.outputs == other.outputs
                and self.epsilon == other.epsilon and np.array_equal(self.probs, other.probs))


@dataclass(frozen=True)
class ValidationReport:
    row_stochastic: bool
    dp_satisfied: bool
    max_bias: float
    unbiased: bool
    worst_dp_ratio: float

    @property
    def ok(self) -> bool:
        return self.row_stochastic and self.dp_satisfied and self.unbiased


class RandomSource:
    """Seeded counter-based generator (numpy's Philox-4x64).

    Philox is a counter-based bit generator, so the stream is a pure function
    of the seed; the same seed reproduces bit-identical draws on the same
    numpy build.  ``spawn`` derives independent child sources for workers.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.generator = np.random.Generator(np.random.Philox(seed))

    def spawn(self, n: int) -> list["RandomSource"]:
        """``n`` independent sources derived deterministically from this seed."""
        out = []
        for i in range(n):
            child = np.random.SeedSequence([self.seed, i]).generate_state(1, np.uint64)[0]
            out.append(RandomSource(int(child)))
        return out

    def random(self, size=None):
        return self.generator.random(size)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed})"


class LossKind(enum.Enum):
    SQUARED = "squared"
    POISSON = "poisson"

    def value_of(self, y_hat, y):
        """Loss ``l(y_hat, y)``; squared is ``(y_hat - y)**2 / 2``."""
        y_hat = np.asarray(y_hat, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self is LossKind.SQUARED:
            return 0.5 * (y_hat - y) ** 2
        if np.any(y_hat <= 0):
            raise DomainError("Poisson loss needs strictly positive predictions")
        return y_hat - y * np.log(y_hat)

    def derivative(self, y_hat, y):
        """Partial derivative of the loss in ``y_hat``; affine in ``y`` for both kinds."""
        y_hat = np.asarray(y_hat, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self is LossKind.SQUARED:
            return y_hat - y
        if np.any(y_hat <= 0):
            raise DomainError("Poisson loss needs strictly positive predictions")
        return 1.0 - y / y_hat

    @classmethod
    def parse(cls, tag) -> "LossKind":
        if isinstance(tag, cls):
            return tag
        try:
            return cls(str(tag).lower())
        except ValueError:
            raise ParameterError(f"unknown loss {tag!r}; expected squared or poisson") from None


def column_dp_ratios(probs: np.ndarray) -> np.ndarray:
    """max/min per column; 1 for all-zero columns, inf if a column mixes zero and mass."""
    probs = np.asarray(probs)
    cmax = probs.max(axis=0)
    cmin = probs.min(axis=0)
    ratios = np.ones(probs.shape[1])
    pos = cmin > 0
    ratios[pos] = cmax[pos] / cmin[pos]
    ratios[(cmax > 0) & ~pos] = np.inf
    return ratios


def label_biases(matrix: RandomizerMatrix) -> np.ndarray:
    return matrix.probs @ matrix.outputs.values - matrix.inputs.values


def validate_randomizer(matrix: RandomizerMatrix, tol: float = LP_TOL, *,
                        row_tol: float = LP_TOL, dp_rtol: float = LP_TOL) -> ValidationReport:
    """Check non-negativity, normalisation, the ε-DP column ratios and unbiasedness.

    ``tol`` bounds the per-label bias; ``row_tol`` the row-sum error and
    ``dp_rtol`` the relative slack allowed on the ``e^ε`` ratio.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    probs = matrix.probs
    if probs.shape != (len(matrix.inputs), len(matrix.outputs)):
        raise StructuralError("probability matrix does not match label sets")
    row_ok = bool(np.all(probs >= 0) and np.all(np.abs(probs.sum(axis=1) - 1.0) <= row_tol))
    ratios = column_dp_ratios(probs)
    worst = float(ratios.max()) if ratios.size else 1.0
    dp_ok = bool(worst <= math.exp(matrix.epsilon) * (1.0 + dp_rtol))
    max_bias = float(np.max(np.abs(label_biases(matrix))))
    return ValidationReport(row_ok, dp_ok, max_bias, bool(max_bias <= tol), worst)


def expected_output(matrix: RandomizerMatrix, y: float) -> float:
    """``E[M(y)] = sum_i M[y, i] * out_i``."""
    return float(matrix.row(y) @ matrix.outputs.values)


def expected_outputs(matrix: RandomizerMatrix, ys) -> np.ndarray:
    rows = matrix.inputs.indices(ys)
    return (matrix.probs @ matrix.outputs.values)[rows]


def _pick(cdf_row: np.ndarray, u) -> np.ndarray:
    # u in [0, 1) scaled by the stored row total, so a positive-mass column is always hit
    return np.searchsorted(cdf_row, u * cdf_row[-1], side="right")


def sample(matrix: RandomizerMatrix, y: float, rng: RandomSource) -> float:
    """Draw one output for input ``y``; consumes exactly one uniform from ``rng``."""
    row = matrix.row(y)
    idx = int(_pick(np.cumsum(row), rng.random()))
    return float(matrix.outputs.values[idx])


def sample_many(matrix: RandomizerMatrix, ys, rng: RandomSource) -> np.ndarray:
    """Vectorised :func:`sample`: identical to calling it once per label in order."""
    rows = matrix.inputs.indices(ys)
    u = rng.random(rows.size)
    cdf = np.cumsum(matrix.probs, axis=1)
    out_idx = np.empty(rows.size, dtype=np.intp)
    for a in np.unique(rows):
        sel = rows == a
        out_idx[sel] = _pick(cdf[a], u[sel])
    return matrix.outputs.values[out_idx].copy()


# -- randomizer file format ---------------------------------------------------

def randomizer_to_dict(matrix: RandomizerMatrix) -> dict:
    return {
        "epsilon": matrix.epsilon,
        "input_labels": matrix.inputs.values.tolist(),
        "output_labels": matrix.outputs.values.tolist(),
        "probabilities": matrix.probs.tolist(),
    }


def randomizer_from_dict(data: dict) -> RandomizerMatrix:
    try:
        return RandomizerMatrix(
            LabelSet(data["input_labels"]),
            OutputGrid(data["output_labels"]),
            np.asarray(data["probabilities"], dtype=np.float64),
            float(data["epsilon"]),
        )
    except KeyError as exc:
        raise StructuralError(f"randomizer file lacks key {exc.args[0]!r}") from None


def dumps_randomizer(matrix: RandomizerMatrix) -> str:
    # json writes floats with repr(), the shortest string that round-trips bit-exactly
    return json.dumps(randomizer_to_dict(matrix), indent=1) + "\n"


def save_randomizer(matrix: RandomizerMatrix, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_randomizer(matrix))


def load_randomizer(path: str | os.PathLike) -> RandomizerMatrix:
    with open(path, encoding="utf-8") as fh:
        return randomizer_from_dict(json.load(fh))

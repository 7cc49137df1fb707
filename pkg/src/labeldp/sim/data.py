"""Synthetic regression data whose Bayes predictor is known exactly.

Two generators:

* ``categorical``: the feature is a one-hot bucket index and each bucket has
  its own distribution over the label set.
* ``linear``: ``x ~ U[-1, 1]^d``, a latent ``w.x + b + sigma Z`` is clipped to
  the label range and rounded onto the label set with unbiased randomized
  rounding, so ``E[y | x]`` is a clipped-normal mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ..core import EXACT_TOL, LabelSet, OutputGrid, RandomSource
from ..errors import ParameterError, StructuralError
from ..mechanisms import urr_many

KINDS = ("categorical", "linear")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic dataset.

    For ``categorical`` specs ``bucket_probs`` and ``conditional`` (one row of
    label probabilities per bucket) are required and ``feature_count`` equals
    the bucket count.  For ``linear`` specs ``true_weights`` has one entry per
    feature.
    """

    kind: str
    label_set: LabelSet
    sample_count: int
    feature_count: int = 0
    true_weights: tuple = ()
    intercept: float = 0.0
    noise_scale: float = 0.0
    bucket_probs: tuple = ()
    conditional: tuple = ()
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}")
        if not isinstance(self.label_set, LabelSet):
            object.__setattr__(self, "label_set", LabelSet(self.label_set))
        if int(self.sample_count) < 2:
            raise ParameterError("sample_count must be at least 2")
        object.__setattr__(self, "sample_count", int(self.sample_count))
        if not 0 < self.test_fraction < 1:
            raise ParameterError("test_fraction must lie in (0, 1)")
        if self.kind == "categorical":
            probs = np.asarray(self.bucket_probs, dtype=np.float64)
            cond = np.asarray(self.conditional, dtype=np.float64)
            if probs.ndim != 1 or probs.size == 0:
                raise ParameterError("bucket_probs must be a non-empty vector")
            if cond.shape != (probs.size, len(self.label_set)):
                raise StructuralError(f"conditional must have shape {(probs.size, len(self.label_set))}")
            for name, arr in (("bucket_probs", probs[None, :]), ("conditional", cond)):
                if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=1) - 1) > EXACT_TOL):
                    raise ParameterError(f"{name} rows must be probability vectors")
            object.__setattr__(self, "bucket_probs", tuple(probs.tolist()))
            object.__setattr__(self, "conditional", tuple(map(tuple, cond.tolist())))
            object.__setattr__(self, "feature_count", probs.size)
            object.__setattr__(self, "true_weights", tuple((cond @ self.label_set.values).tolist()))
        else:
            w = np.asarray(self.true_weights, dtype=np.float64).reshape(-1)
            if w.size == 0:
                raise ParameterError("a linear spec needs true_weights")
            if self.feature_count not in (0, w.size):
                raise StructuralError("feature_count disagrees with true_weights")
            if self.noise_scale < 0:
                raise ParameterError("noise_scale must be non-negative")
            object.__setattr__(self, "true_weights", tuple(w.tolist()))
            object.__setattr__(self, "feature_count", w.size)

    @classmethod
    def categorical(cls, label_set, bucket_probs, conditional, sample_count: int,
                    **kw) -> "SyntheticSpec":
        return cls("categorical", LabelSet(label_set), sample_count,
                   bucket_probs=tuple(bucket_probs), conditional=tuple(map(tuple, conditional)), **kw)

    @classmethod
    def linear(cls, label_set, true_weights, sample_count: int, *, intercept: float = 0.0,
               noise_scale: float = 0.0, **kw) -> "SyntheticSpec":
        return cls("linear", LabelSet(label_set), sample_count, true_weights=tuple(true_weights),
                   intercept=intercept, noise_scale=noise_scale, **kw)

    @classmethod
    def table1(cls, sample_count: int = 100_000) -> "SyntheticSpec":
        """The two-feature toy joint over labels ``{0, 1, 2}``."""
        mass = np.array([[0.35, 0.1, 0.05], [0.25, 0.15, 0.1]])
        marg = mass.sum(axis=1)
        return cls.categorical([0, 1, 2], marg, mass / marg[:, None], sample_count)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "label_set": self.label_set.values.tolist(),
               "sample_count": self.sample_count, "test_fraction": self.test_fraction}
        if self.kind == "categorical":
            out.update(bucket_probs=list(self.bucket_probs),
                       conditional=[list(r) for r in self.conditional])
        else:
            out.update(true_weights=list(self.true_weights), intercept=self.intercept,
                       noise_scale=self.noise_scale)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        data = dict(data)
        try:
            kind = data.pop("kind")
            labels = LabelSet(data.pop("label_set"))
            n = data.pop("sample_count")
        except KeyError as exc:
            raise ParameterError(f"data spec is missing {exc.args[0]!r}") from None
        allowed = {"feature_count", "true_weights", "intercept", "noise_scale", "bucket_probs",
                   "conditional", "test_fraction"}
        unknown = set(data) - allowed
        if unknown:
            raise ParameterError(f"unknown data spec keys {sorted(unknown)}")
        if "conditional" in data:
            data["conditional"] = tuple(map(tuple, data["conditional"]))
        for key in ("true_weights", "bucket_probs"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(kind, labels, n, **data)


def clipped_normal_mean(mu, sigma: float, lo: float, hi: float) -> np.ndarray:
    """``E[clip(mu + sigma Z, lo, hi)]`` for standard normal ``Z``."""
    mu = np.asarray(mu, dtype=np.float64)
    if sigma == 0:
        return np.clip(mu, lo, hi)
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    inside = norm.cdf(b) - norm.cdf(a)
    return lo * norm.cdf(a) + hi * norm.sf(b) + mu * inside + sigma * (norm.pdf(a) - norm.pdf(b))


@dataclass(frozen=True, eq=False)
class BayesPredictor:
    """``x -> E[y | x]`` computed from the spec, not from data."""

    spec: SyntheticSpec

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        w = np.asarray(self.spec.true_weights)
        if self.spec.kind == "categorical":
            return X @ w
        ls = self.spec.label_set
        return clipped_normal_mean(X @ w + self.spec.intercept, self.spec.noise_scale,
                                   ls.min, ls.max)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Train/test split plus a weighted feature sample for population averages.

    ``reference`` is exact for categorical specs (one row per bucket, weighted
    by its probability) and a large i.i.d. feature sample for linear ones.
    """

    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    spec: SyntheticSpec
    bayes: BayesPredictor
    reference: tuple = field(repr=False, default=())

    @property
    def label_set(self) -> LabelSet:
        return self.spec.label_set


def _draw_features(spec: SyntheticSpec, gen: np.random.Generator, n: int):
    if spec.kind == "categorical":
        buckets = gen.choice(spec.feature_count, size=n, p=np.asarray(spec.bucket_probs))
        return np.eye(spec.feature_count)[buckets], buckets
    return gen.uniform(-1.0, 1.0, size=(n, spec.feature_count)), None


def generate_synthetic(spec: SyntheticSpec, rng: RandomSource, *,
                       reference_size: int = 20_000) -> Dataset:
    """Draw ``spec.sample_count`` i.i.d. examples and split off a test set."""
    gen = rng.generator
    n = spec.sample_count
    ls = spec.label_set
    X, buckets = _draw_features(spec, gen, n)
    if spec.kind == "categorical":
        cond = np.asarray(spec.conditional)
        # inverse-CDF draw per example from its bucket's label distribution
        cdf = np.cumsum(cond, axis=1)
        u = gen.random(n)
        idx = np.minimum((u[:, None] >= cdf[buckets]).sum(axis=1), len(ls) - 1)
        y = ls.values[idx]
        reference = (np.eye(spec.feature_count), np.asarray(spec.bucket_probs))
    else:
        latent = X @ np.asarray(spec.true_weights) + spec.intercept
        if spec.noise_scale > 0:
            latent = latent + spec.noise_scale * gen.standard_normal(n)
        latent = np.clip(latent, ls.min, ls.max)
        y = urr_many(latent, OutputGrid(ls.values), rng) if len(ls) > 1 else np.full(n, ls.min)
        Xr, _ = _draw_features(spec, gen, reference_size)
        reference = (Xr, np.full(reference_size, 1.0 / reference_size))
    n_test = max(1, int(round(spec.test_fraction * n)))
    n_test = min(n_test, n - 1)
    return Dataset(X[n_test:], y[n_test:], X[:n_test], y[:n_test], spec, BayesPredictor(spec),
                   reference)


__all__ = ["SyntheticSpec", "BayesPredictor", "Dataset", "generate_synthetic",
           "clipped_normal_mean"]

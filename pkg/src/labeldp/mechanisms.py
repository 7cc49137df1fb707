"""Baseline ε-DP label mechanisms.

Finite mechanisms (randomized response, RR-on-Bins, debiased RR) are
returned as :class:`~labeldp.core.RandomizerMatrix`.  Additive mechanisms
(discrete/continuous Laplace and staircase) have unbounded support and are
exposed through :func:`additive_noise` and :class:`AdditiveMechanism`; they
cannot be written to the randomizer file format.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional

import numpy as np
from scipy import integrate

from .core import (
    LabelSet,
    OutputGrid,
    Prior,
    RandomizerMatrix,
    RandomSource,
    expected_outputs,
    sample_many,
    validate_randomizer,
)
from .errors import ParameterError, RangeError

FAMILIES = ("laplace", "staircase")
SUPPORTS = ("discrete", "continuous")


@dataclass(frozen=True)
class NoiseKind:
    """Additive noise family.

    ``gamma`` parameterises the continuous staircase, ``r`` the discrete one;
    leave them ``None`` to get the defaults from :meth:`resolved`.
    """

    family: str
    support: str
    gamma: Optional[float] = None
    r: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown noise family {self.family!r}")
        if self.support not in SUPPORTS:
            raise ParameterError(f"unknown noise support {self.support!r}")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ParameterError("staircase gamma must lie in (0, 1)")
        if self.r is not None and self.r < 1:
            raise ParameterError("discrete staircase r must be >= 1")

    @property
    def discrete(self) -> bool:
        return self.support == "discrete"

    def resolved(self, epsilon: float, sensitivity: float) -> "NoiseKind":
        """Fill in the staircase parameter defaults for this (ε, Δ)."""
        if self.family != "staircase":
            return self
        if self.discrete:
            if self.r is None:
                return replace(self, r=default_staircase_r(epsilon, int(sensitivity)))
            if self.r > sensitivity:
                raise ParameterError("discrete staircase needs 1 <= r <= sensitivity")
            return self
        if self.gamma is None:
            return replace(self, gamma=default_staircase_gamma(epsilon))
        return self

    @property
    def name(self) -> str:
        return f"{self.support}-{self.family}"


@dataclass(frozen=True)
class ClipRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ParameterError("clip range needs lo <= hi")


def clip(value, range: ClipRange):
    """``min(max(value, lo), hi)``; works on scalars and arrays."""
    out = np.minimum(np.maximum(value, range.lo), range.hi)
    return float(out) if np.ndim(out) == 0 else out


def _check_noise_params(epsilon: float, sensitivity: float, discrete: bool) -> None:
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon!r}")
    if not sensitivity > 0:
        raise ParameterError(f"sensitivity must be positive, got {sensitivity!r}")
    if discrete and not float(sensitivity).is_integer():
        raise ParameterError("discrete noise needs an integer sensitivity")


# -- staircase parameters -----------------------------------------------------

def default_staircase_gamma(epsilon: float) -> float:
    return 1.0 / (1.0 + math.exp(epsilon / 2.0))


def discrete_staircase_a(epsilon: float, sensitivity: int, r: int) -> float:
    """Probability mass at 0 (the top step height) of the discrete staircase."""
    b = math.exp(-epsilon)
    return (1 - b) / (2 * r + 2 * b * (sensitivity - r) - (1 - b))


def _step_moments(lo: int, hi: int):
    """count, sum j, sum j^2 for integers j in [lo, hi)."""
    j = np.arange(lo, hi, dtype=np.float64)
    return j.size, j.sum(), (j * j).sum()


def discrete_staircase_variance(epsilon: float, sensitivity: int, r: int) -> float:
    b = math.exp(-epsilon)
    d = float(sensitivity)
    g0 = 1 / (1 - b)
    g1 = b / (1 - b) ** 2
    g2 = b * (1 + b) / (1 - b) ** 3
    total = 0.0
    for (lo, hi), w in (((0, r), 1.0), ((r, sensitivity), b)):
        n, s1, s2 = _step_moments(lo, hi)
        total += w * (n * d * d * g2 + 2 * d * s1 * g1 + s2 * g0)
    return 2 * discrete_staircase_a(epsilon, sensitivity, r) * total


def default_staircase_r(epsilon: float, sensitivity: int) -> int:
    """The r in [1, Δ] with the smallest variance, by direct search."""
    if sensitivity < 1:
        raise ParameterError("sensitivity must be >= 1")
    variances = [discrete_staircase_variance(epsilon, sensitivity, r)
                 for r in range(1, sensitivity + 1)]
    return int(np.argmin(variances)) + 1


def noise_variance(kind: NoiseKind, epsilon: float, sensitivity: float) -> float:
    """Closed-form variance of the additive noise."""
    _check_noise_params(epsilon, sensitivity, kind.discrete)
    kind = kind.resolved(epsilon, sensitivity)
    if kind.family == "laplace":
        if kind.discrete:
            b = math.exp(-epsilon / sensitivity)
            return 2 * b / (1 - b) ** 2
        return 2 * (sensitivity / epsilon) ** 2
    if kind.discrete:
        return discrete_staircase_variance(epsilon, int(sensitivity), kind.r)
    b = math.exp(-epsilon)
    g = kind.gamma
    p_low = g / (g + (1 - g) * b)
    ev = p_low * g / 2 + (1 - p_low) * (g + (1 - g) / 2)
    ev2 = p_low * g * g / 3 + (1 - p_low) * (1 + g + g * g) / 3
    eg = b / (1 - b)
    eg2 = b * (1 + b) / (1 - b) ** 2
    return sensitivity ** 2 * (eg2 + 2 * eg * ev + ev2)


# -- noise samplers -----------------------------------------------------------

def _geometric0(gen: np.random.Generator, p_stop: float, size) -> np.ndarray:
    """Failures before the first success: P(G = k) = p (1-p)^k."""
    return gen.geometric(p_stop, size) - 1


def _sample_discrete_staircase(gen, epsilon, delta, r, size):
    b = math.exp(-epsilon)
    p_low = r / (r + b * (delta - r))
    out = np.empty(size, dtype=np.int64)
    todo = np.arange(size)
    while todo.size:
        m = todo.size
        periods = _geometric0(gen, 1 - b, m)
        low = gen.random(m) < p_low
        j_low = gen.integers(0, r, m)
        j_high = gen.integers(r, max(delta, r + 1), m) if delta > r else j_low
        mag = periods * delta + np.where(low, j_low, j_high)
        neg = gen.random(m) < 0.5
        # +0 and -0 are the same point: drop one of them to keep p(0) single-counted
        keep = ~((mag == 0) & neg)
        out[todo[keep]] = np.where(neg[keep], -mag[keep], mag[keep])
        todo = todo[~keep]
    return out


def _sample_continuous_staircase(gen, epsilon, delta, gamma, size):
    b = math.exp(-epsilon)
    sign = np.where(gen.random(size) < 0.5, -1.0, 1.0)
    periods = _geometric0(gen, 1 - b, size)
    high = gen.random(size) >= gamma / (gamma + (1 - gamma) * b)
    u = gen.random(size)
    offset = np.where(high, gamma + (1 - gamma) * u, gamma * u)
    return sign * (periods + offset) * delta


def sample_noise(kind: NoiseKind, epsilon: float, sensitivity: float, rng: RandomSource,
                 size=None):
    """Draw zero-mean noise from the additive distribution ``kind``."""
    _check_noise_params(epsilon, sensitivity, kind.discrete)
    kind = kind.resolved(epsilon, sensitivity)
    gen = rng.generator
    shape = () if size is None else tuple(np.atleast_1d(size).tolist())
    n = max(int(np.prod(shape)), 1)
    if kind.family == "laplace":
        if kind.discrete:
            p = -math.expm1(-epsilon / sensitivity)
            noise = _geometric0(gen, p, n) - _geometric0(gen, p, n)
        else:
            noise = gen.laplace(0.0, sensitivity / epsilon, n)
    elif kind.discrete:
        noise = _sample_discrete_staircase(gen, epsilon, int(sensitivity), kind.r, n)
    else:
        noise = _sample_continuous_staircase(gen, epsilon, sensitivity, kind.gamma, n)
    noise = np.asarray(noise, dtype=np.float64)
    return float(noise[0]) if size is None else noise.reshape(shape)


def additive_noise(y, kind: NoiseKind, epsilon: float, sensitivity: float,
                   rng: RandomSource):
    """``y + noise`` for a scalar or an array of labels."""
    y_arr = np.asarray(y, dtype=np.float64)
    if kind.discrete and not np.all(np.mod(y_arr, 1.0) == 0):
        raise ParameterError("discrete noise needs integer labels")
    if y_arr.ndim == 0:
        return float(y_arr) + sample_noise(kind, epsilon, sensitivity, rng)
    return y_arr + sample_noise(kind, epsilon, sensitivity, rng, y_arr.shape)


# -- exact expectations of clipped additive mechanisms --------------------------

def _discrete_pmf(kind: NoiseKind, epsilon: float, delta: int, mags: np.ndarray) -> np.ndarray:
    mags = np.abs(mags)
    if kind.family == "laplace":
        b = math.exp(-epsilon / delta)
        return (1 - b) / (1 + b) * b ** mags
    b = math.exp(-epsilon)
    a = discrete_staircase_a(epsilon, delta, kind.r)
    k, j = np.divmod(mags, delta)
    return a * b ** k * np.where(j < kind.r, 1.0, b)


def _continuous_survival(kind: NoiseKind, epsilon: float, delta: float, s: float) -> float:
    """P(Z > s) for the symmetric continuous noise."""
    if s < 0:
        return 1.0 - _continuous_survival(kind, epsilon, delta, -s)
    if kind.family == "laplace":
        return 0.5 * math.exp(-s * epsilon / delta)
    b = math.exp(-epsilon)
    g = kind.gamma
    k, frac = divmod(s / delta, 1.0)
    p_low = g / (g + (1 - g) * b)
    within = p_low * min(frac / g, 1.0) + (1 - p_low) * max(0.0, (frac - g) / (1 - g))
    cdf_abs = (1 - b ** k) + (1 - b) * b ** k * within
    return 0.5 * (1.0 - cdf_abs)


def clipped_expectation(y: float, kind: NoiseKind, epsilon: float, sensitivity: float,
                        range: ClipRange) -> float:
    """Exact ``E[clip(y + Z)]`` (numerical quadrature for continuous noise)."""
    _check_noise_params(epsilon, sensitivity, kind.discrete)
    kind = kind.resolved(epsilon, sensitivity)
    lo, hi = range.lo - y, range.hi - y
    if lo == hi:
        return float(range.lo)
    if kind.discrete:
        if not (float(range.lo).is_integer() and float(range.hi).is_integer()):
            raise ParameterError("discrete clipping needs integer bounds")
        delta = int(sensitivity)
        s = np.arange(int(lo), int(hi))
        reach = int(np.max(np.abs(s))) + 1
        pmf = _discrete_pmf(kind, epsilon, delta, np.arange(0, reach + 1))
        upper = (1 - pmf[0]) / 2 - np.concatenate([[0.0], np.cumsum(pmf[1:])])
        # upper[t] = P(Z > t) for t >= 0
        surv = np.where(s >= 0, upper[np.abs(s)], 1.0 - upper[np.maximum(-s - 1, 0)])
        return float(range.lo + surv.sum())
    if kind.family == "laplace":
        points = [0.0] if lo < 0 < hi else None
    else:
        points = [p for p in np.arange(-40, 41) * sensitivity if lo < p < hi] or None
    val, _ = integrate.quad(lambda t: _continuous_survival(kind, epsilon, sensitivity, t),
                            lo, hi, points=points, limit=400, epsabs=1e-12, epsrel=1e-12)
    return float(range.lo + val)


# -- finite mechanisms --------------------------------------------------------

def rr_matrix(labels: LabelSet, epsilon: float) -> RandomizerMatrix:
    """Randomized response over ``labels`` themselves."""
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    q = len(labels)
    z = math.exp(epsilon) + q - 1
    probs = np.full((q, q), 1.0 / z)
    np.fill_diagonal(probs, math.exp(epsilon) / z)
    return RandomizerMatrix(labels, OutputGrid(labels.values), probs, epsilon)


def rr_on_bins_matrix(labels: LabelSet, phi: Mapping[float, float],
                      epsilon: float) -> RandomizerMatrix:
    """Randomized response over the distinct bin values ``phi(y)``."""
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    try:
        targets = np.array([float(phi[y]) for y in labels], dtype=np.float64)
    except KeyError as exc:
        raise ParameterError(f"phi is missing label {exc.args[0]!r}") from None
    bins = np.unique(targets)
    z = math.exp(epsilon) + bins.size - 1
    probs = np.full((len(labels), bins.size), 1.0 / z)
    probs[np.arange(len(labels)), np.searchsorted(bins, targets)] = math.exp(epsilon) / z
    return RandomizerMatrix(labels, OutputGrid(bins), probs, epsilon)


def _bin_costs(prior: Prior, epsilon: float):
    """Unnormalised cost and value of every contiguous bin [s, t]."""
    y = prior.labels.values
    p = prior.probs
    alpha = math.expm1(epsilon)
    P0, P1, P2 = p.sum(), p @ y, p @ (y * y)
    c0 = np.concatenate([[0.0], np.cumsum(p)])
    c1 = np.concatenate([[0.0], np.cumsum(p * y)])
    c2 = np.concatenate([[0.0], np.cumsum(p * y * y)])
    s = np.arange(y.size)[:, None]
    t = np.arange(y.size)[None, :]
    q0 = c0[t + 1] - c0[s]
    q1 = c1[t + 1] - c1[s]
    q2 = c2[t + 1] - c2[s]
    w = P0 + alpha * q0
    s1 = P1 + alpha * q1
    s2 = P2 + alpha * q2
    cost = 0.5 * (s2 - s1 * s1 / w)
    value = s1 / w
    cost = np.where(s <= t, np.maximum(cost, 0.0), np.inf)
    return cost, value


def optimal_rr_on_bins(prior: Prior, epsilon: float) -> tuple[RandomizerMatrix, dict]:
    """RR-on-Bins minimising the squared noisy label loss for ``prior``.

    Bins are contiguous runs of sorted labels.  Given the number of bins q,
    the loss is ``sum_B cost(B) / (e^ε + q - 1)`` with ``cost`` depending on
    the bin only, so one dynamic program over "exactly j bins ending at t"
    covers every q at once.
    """
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    k = len(prior.labels)
    cost, value = _bin_costs(prior, epsilon)
    best = np.full((k + 1, k), np.inf)
    arg = np.zeros((k + 1, k), dtype=np.intp)
    best[1] = cost[0]
    for j in range(2, k + 1):
        prev = np.concatenate([[np.inf], best[j - 1][:-1]])  # best[j-1] ending at s-1
        cand = prev[:, None] + cost
        arg[j] = np.argmin(cand, axis=0)
        best[j] = cand[arg[j], np.arange(k)]
    totals = [best[q][k - 1] / (math.exp(epsilon) + q - 1) for q in range(1, k + 1)]
    q = int(np.argmin(totals)) + 1
    bounds = []
    t = k - 1
    for j in range(q, 0, -1):
        s = 0 if j == 1 else int(arg[j][t])
        bounds.append((s, t))
        t = s - 1
    phi = {}
    for s, t in reversed(bounds):
        for a in range(s, t + 1):
            phi[float(prior.labels[a])] = float(value[s, t])
    return rr_on_bins_matrix(prior.labels, phi, epsilon), phi


def dbrr_values(labels: LabelSet, epsilon: float) -> np.ndarray:
    """Remapped outputs ``((e^ε + k - 1) y - sum Y) / (e^ε - 1)``."""
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive (dbRR outputs diverge at 0)")
    y = labels.values
    k = y.size
    return ((math.exp(epsilon) + k - 1) * y - y.sum()) / math.expm1(epsilon)


def dbrr_matrix(labels: LabelSet, epsilon: float) -> RandomizerMatrix:
    """Debiased randomized response: RR over the remapped values, unbiased by construction."""
    if len(labels) < 2:
        raise ParameterError("dbRR needs at least two labels")
    values = dbrr_values(labels, epsilon)
    rr = rr_matrix(labels, epsilon)
    return RandomizerMatrix(labels, OutputGrid(values), rr.probs, epsilon)


def urr_probabilities(y: float, grid: OutputGrid, *, snap: float = 1e-12) -> np.ndarray:
    """The two-point rounding distribution of ``y`` as a vector over ``grid``."""
    g = grid.values
    scale = max(1.0, abs(g[0]), abs(g[-1]))
    if y < g[0] - snap * scale or y > g[-1] + snap * scale:
        raise RangeError(f"{y!r} is outside [{g[0]!r}, {g[-1]!r}]")
    out = np.zeros(g.size)
    hi = int(np.searchsorted(g, y))
    if hi < g.size and abs(g[hi] - y) <= snap * scale:
        out[hi] = 1.0
        return out
    if hi > 0 and abs(g[hi - 1] - y) <= snap * scale:
        out[hi - 1] = 1.0
        return out
    lo = hi - 1
    w_hi = (y - g[lo]) / (g[hi] - g[lo])
    out[lo], out[hi] = 1.0 - w_hi, w_hi
    return out


def urr(y: float, grid: OutputGrid, rng: RandomSource) -> float:
    """Round ``y`` to a neighbouring grid point so that the mean is preserved."""
    return float(urr_many([y], grid, rng)[0])


def urr_many(ys, grid: OutputGrid, rng: RandomSource, *, snap: float = 1e-12) -> np.ndarray:
    g = grid.values
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    scale = max(1.0, abs(g[0]), abs(g[-1]))
    tol = snap * scale
    if ys.size and (ys.min() < g[0] - tol or ys.max() > g[-1] + tol):
        bad = ys[(ys < g[0] - tol) | (ys > g[-1] + tol)][0]
        raise RangeError(f"{bad!r} is outside [{g[0]!r}, {g[-1]!r}]")
    u = rng.random(ys.size)
    if g.size == 1:
        return np.full(ys.size, g[0])
    hi = np.clip(np.searchsorted(g, ys), 1, g.size - 1)
    lo = hi - 1
    w_hi = np.clip((ys - g[lo]) / (g[hi] - g[lo]), 0.0, 1.0)
    out = np.where(u < w_hi, g[hi], g[lo])
    on_lo = np.abs(ys - g[lo]) <= tol
    on_hi = np.abs(ys - g[hi]) <= tol
    out = np.where(on_lo, g[lo], np.where(on_hi, g[hi], out))
    return out


# -- mechanism objects used by the pipeline and the simulator -----------------

class FiniteMechanism:
    """A randomizer matrix applied label-by-label.

    When the matrix validates as unbiased, :meth:`bias` reports exact zeros:
    residual solver round-off below the validation tolerance is not bias.
    """

    exportable = True

    def __init__(self, matrix: RandomizerMatrix, name: str = "finite",
                 unbiased_tol: float = 1e-7):
        self.matrix = matrix
        self.name = name
        self.epsilon = matrix.epsilon
        self.unbiased = validate_randomizer(matrix, unbiased_tol).unbiased

    def privatize(self, ys, rng: RandomSource) -> np.ndarray:
        return sample_many(self.matrix, ys, rng)

    def expected(self, ys) -> np.ndarray:
        ys = np.asarray(ys, dtype=np.float64)
        if self.unbiased:
            self.matrix.inputs.indices(ys)
            return ys.copy()
        return expected_outputs(self.matrix, ys)

    def bias(self, ys) -> np.ndarray:
        return self.expected(ys) - np.asarray(ys, dtype=np.float64)


class AdditiveMechanism:
    """Label plus additive noise, optionally clipped to a range."""

    exportable = False

    def __init__(self, kind: NoiseKind, epsilon: float, sensitivity: float,
                 clip_range: Optional[ClipRange] = None, name: Optional[str] = None):
        _check_noise_params(epsilon, sensitivity, kind.discrete)
        self.kind = kind.resolved(epsilon, sensitivity)
        self.epsilon = epsilon
        self.sensitivity = sensitivity
        self.clip_range = clip_range
        self.unbiased = clip_range is None
        self.name = name or (kind.family + ("-clipped" if clip_range else ""))

    def privatize(self, ys, rng: RandomSource) -> np.ndarray:
        out = additive_noise(np.asarray(ys, dtype=np.float64), self.kind, self.epsilon,
                             self.sensitivity, rng)
        return out if self.clip_range is None else clip(out, self.clip_range)

    def expected(self, ys) -> np.ndarray:
        ys = np.asarray(ys, dtype=np.float64)
        if self.clip_range is None:
            return ys.copy()
        cache = {}
        out = np.empty_like(ys)
        for i, y in enumerate(ys.tolist()):
            if y not in cache:
                cache[y] = clipped_expectation(y, self.kind, self.epsilon,
                                               self.sensitivity, self.clip_range)
            out[i] = cache[y]
        return out

    def bias(self, ys) -> np.ndarray:
        return self.expected(ys) - np.asarray(ys, dtype=np.float64)


__all__ = [
    "NoiseKind", "ClipRange", "clip", "additive_noise", "sample_noise", "noise_variance",
    "clipped_expectation", "default_staircase_gamma", "default_staircase_r",
    "discrete_staircase_a", "rr_matrix", "rr_on_bins_matrix", "optimal_rr_on_bins",
    "dbrr_values", "dbrr_matrix", "urr", "urr_many", "urr_probabilities",
    "FiniteMechanism", "AdditiveMechanism",
]

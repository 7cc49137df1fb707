import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import chisquare

from labeldp.analysis import noisy_label_loss
from labeldp.core import (LabelSet, OutputGrid, Prior, RandomizerMatrix, RandomSource,
                          expected_outputs, validate_randomizer)
from labeldp.errors import ParameterError, RangeError
from labeldp.mechanisms import (AdditiveMechanism, ClipRange, FiniteMechanism, NoiseKind,
                                additive_noise, clip, clipped_expectation, dbrr_matrix,
                                dbrr_values, default_staircase_gamma, default_staircase_r,
                                discrete_staircase_a, noise_variance, optimal_rr_on_bins,
                                rr_matrix, rr_on_bins_matrix, sample_noise, urr, urr_many,
                                urr_probabilities)

from conftest import LN2, TOY_PHI, random_prior

ALL_KINDS = [NoiseKind(f, s) for f in ("laplace", "staircase") for s in ("discrete", "continuous")]


# -- reference distributions written straight from their definitions ------------

def dlap_pmf(i, eps, delta):
    b = math.exp(-eps / delta)
    return (1 - b) / (1 + b) * b ** abs(i)


def dstair_pmf(i, eps, delta, r):
    b = math.exp(-eps)
    a = (1 - b) / (2 * r + 2 * b * (delta - r) - (1 - b))
    k, j = divmod(abs(i), delta)
    return a * b ** k * (1.0 if j < r else b)


def cstair_density(x, eps, delta, gamma):
    b = math.exp(-eps)
    a = (1 - b) / (2 * delta * (gamma + b * (1 - gamma)))
    k, frac = divmod(abs(x), delta)
    return a * b ** k * (1.0 if frac < gamma * delta else b)


def lap_density(x, eps, delta):
    s = delta / eps
    return math.exp(-abs(x) / s) / (2 * s)


# -- clipping -----------------------------------------------------------------------

@pytest.mark.parametrize("value, expected", [(-7, 0), (1000, 400), (42, 42)])
def test_clip(value, expected):
    assert clip(value, ClipRange(0, 400)) == expected


def test_clip_range_order():
    with pytest.raises(ParameterError):
        ClipRange(1, 0)


# -- noise kinds and parameters -----------------------------------------------------

def test_noise_kind_validation():
    with pytest.raises(ParameterError):
        NoiseKind("gauss", "continuous")
    with pytest.raises(ParameterError):
        NoiseKind("staircase", "continuous", gamma=1.0)
    with pytest.raises(ParameterError):
        NoiseKind("staircase", "discrete", r=3).resolved(1.0, 2)


@pytest.mark.parametrize("eps, delta", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
def test_nonpositive_parameters_rejected(eps, delta, rng):
    with pytest.raises(ParameterError):
        additive_noise(0.0, NoiseKind("laplace", "continuous"), eps, delta, rng)


def test_discrete_noise_needs_integers(rng):
    with pytest.raises(ParameterError):
        additive_noise(0.5, NoiseKind("laplace", "discrete"), 1.0, 1, rng)
    with pytest.raises(ParameterError):
        additive_noise(1.0, NoiseKind("laplace", "discrete"), 1.0, 1.5, rng)


@pytest.mark.parametrize("eps, delta", [(0.5, 2), (1.0, 5), (3.0, 10), (0.1, 4)])
def test_discrete_staircase_pmf_normalised_and_default_r(eps, delta):
    # sum the mass function far enough out that the geometric tail is negligible
    periods = int(60 / eps) + 2
    for r in range(1, delta + 1):
        total = sum(dstair_pmf(i, eps, delta, r) for i in range(-periods * delta, periods * delta))
        assert total == pytest.approx(1.0, abs=1e-10)
        assert discrete_staircase_a(eps, delta, r) == pytest.approx(dstair_pmf(0, eps, delta, r))
    variances = []
    for r in range(1, delta + 1):
        ii = np.arange(-periods * delta, periods * delta)
        variances.append(sum(dstair_pmf(i, eps, delta, r) * i * i for i in ii))
    assert default_staircase_r(eps, delta) == int(np.argmin(variances)) + 1


def test_default_gamma():
    assert default_staircase_gamma(0.0001) == pytest.approx(0.5, abs=1e-4)
    assert default_staircase_gamma(2.0) == pytest.approx(1 / (1 + math.e))


@pytest.mark.parametrize("eps, delta", [(0.5, 1), (1.0, 3), (2.0, 7)])
def test_noise_variance_against_definitions(eps, delta):
    periods = int(60 / eps) + 2
    ii = np.arange(-periods * delta, periods * delta)
    dl = sum(dlap_pmf(i, eps, delta) * i * i for i in ii)
    assert noise_variance(NoiseKind("laplace", "discrete"), eps, delta) == pytest.approx(dl, rel=1e-9)
    r = default_staircase_r(eps, delta)
    ds = sum(dstair_pmf(i, eps, delta, r) * i * i for i in ii)
    assert noise_variance(NoiseKind("staircase", "discrete"), eps, delta) == pytest.approx(ds, rel=1e-9)
    gamma = default_staircase_gamma(eps)
    edges = [k * delta for k in range(periods)] + [(k + gamma) * delta for k in range(periods)]
    cs = 2 * sum(integrate.quad(lambda x: x * x * cstair_density(x, eps, delta, gamma), lo, hi)[0]
                 for lo, hi in zip(sorted(edges), sorted(edges)[1:]))
    assert noise_variance(NoiseKind("staircase", "continuous"), eps, delta) == pytest.approx(cs, rel=1e-7)
    assert noise_variance(NoiseKind("laplace", "continuous"), eps, delta) == 2 * (delta / eps) ** 2


def test_continuous_staircase_density_normalised():
    eps, delta, gamma = 0.7, 2.0, 0.3
    b = math.exp(-eps)
    a = (1 - b) / (2 * delta * (gamma + b * (1 - gamma)))
    one_period = a * gamma * delta + a * b * (1 - gamma) * delta
    assert 2 * one_period / (1 - b) == pytest.approx(1.0)


# -- sampling --------------------------------------------------------------------------

def test_laplace_moments():
    draws = additive_noise(np.full(1_000_000, 5.0), NoiseKind("laplace", "continuous"), 1.0, 1.0,
                           RandomSource(1))
    assert abs(draws.mean() - 5) < 0.01
    assert draws.var() == pytest.approx(2.0, rel=0.02)


def test_discrete_laplace_mass_at_label():
    draws = additive_noise(np.full(1_000_000, 3.0), NoiseKind("laplace", "discrete"), LN2, 1,
                           RandomSource(2))
    assert abs(np.mean(draws == 3) - 1 / 3) < 0.01


@pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.name)
def test_noise_mean_zero_and_symmetric(kind):
    n = 1_000_000
    eps, delta = 0.8, 3
    z = sample_noise(kind, eps, delta, RandomSource(7), n)
    sd = math.sqrt(noise_variance(kind, eps, delta))
    assert abs(z.mean()) <= 4 * sd / math.sqrt(n)
    assert abs(np.median(z)) <= 3 * sd / math.sqrt(n) or (kind.discrete and np.median(z) == 0)
    assert z.var() == pytest.approx(sd * sd, rel=0.02)


@pytest.mark.parametrize("family, pmf", [("laplace", "dlap"), ("staircase", "dstair")])
def test_discrete_noise_chi_square(family, pmf):
    eps, delta, n = 1.0, 4, 200_000
    kind = NoiseKind(family, "discrete").resolved(eps, delta)
    z = sample_noise(kind, eps, delta, RandomSource(11), n).astype(int)
    support = np.arange(-20, 21)
    if pmf == "dlap":
        probs = np.array([dlap_pmf(i, eps, delta) for i in support])
    else:
        probs = np.array([dstair_pmf(i, eps, delta, kind.r) for i in support])
    observed = np.array([np.sum(z == i) for i in support] + [np.sum(np.abs(z) > 20)])
    expected = np.append(probs, 1 - probs.sum()) * n
    assert chisquare(observed, expected).pvalue > 1e-4


def test_continuous_staircase_bucket_frequencies():
    eps, delta, n = 1.0, 2.0, 200_000
    kind = NoiseKind("staircase", "continuous").resolved(eps, delta)
    z = sample_noise(kind, eps, delta, RandomSource(12), n)
    g = kind.gamma
    edges = sorted({k * delta for k in range(-6, 7)} | {(k + g) * delta for k in range(0, 6)}
                   | {-(k + g) * delta for k in range(0, 6)})
    edges = np.array(edges)
    probs = np.array([integrate.quad(lambda x: cstair_density(x, eps, delta, g), a, b)[0]
                      for a, b in zip(edges, edges[1:])])
    observed = np.histogram(z, bins=edges)[0]
    tail = n - observed.sum()
    assert chisquare(np.append(observed, tail), np.append(probs, 1 - probs.sum()) * n).pvalue > 1e-4


def test_sample_noise_shapes(rng):
    kind = NoiseKind("staircase", "discrete")
    assert isinstance(sample_noise(kind, 1.0, 3, rng), float)
    assert sample_noise(kind, 1.0, 3, rng, (4, 5)).shape == (4, 5)


def test_noise_is_seed_deterministic():
    kind = NoiseKind("staircase", "continuous")
    a = sample_noise(kind, 1.0, 2.0, RandomSource(3), 100)
    b = sample_noise(kind, 1.0, 2.0, RandomSource(3), 100)
    np.testing.assert_array_equal(a, b)


# -- clipped expectations -----------------------------------------------------------

@pytest.mark.parametrize("family", ["laplace", "staircase"])
@pytest.mark.parametrize("y", [0, 1, 4])
def test_clipped_expectation_discrete_by_summation(family, y):
    eps, delta, rg = 0.7, 4, ClipRange(0, 4)
    kind = NoiseKind(family, "discrete").resolved(eps, delta)
    pmf = (lambda i: dlap_pmf(i, eps, delta)) if family == "laplace" else \
        (lambda i: dstair_pmf(i, eps, delta, kind.r))
    span = 400
    oracle = sum(pmf(z) * min(max(y + z, 0), 4) for z in range(-span, span))
    assert clipped_expectation(y, kind, eps, delta, rg) == pytest.approx(oracle, abs=1e-10)


@pytest.mark.parametrize("y", [0.0, 0.3, 2.5])
def test_clipped_expectation_continuous_by_density(y):
    eps, delta, rg = 0.5, 3.0, ClipRange(0.0, 3.0)
    lap = NoiseKind("laplace", "continuous")
    oracle = integrate.quad(lambda z: lap_density(z, eps, delta) * min(max(y + z, 0.0), 3.0),
                            -200, 200, points=[-y, 0, 3 - y], limit=500)[0]
    assert clipped_expectation(y, lap, eps, delta, rg) == pytest.approx(oracle, abs=1e-8)
    st_kind = NoiseKind("staircase", "continuous").resolved(eps, delta)
    pts = sorted({k * delta for k in range(-40, 41)} | {(k + st_kind.gamma) * delta for k in range(0, 40)}
                 | {-(k + st_kind.gamma) * delta for k in range(0, 40)})
    oracle = sum(integrate.quad(
        lambda z: cstair_density(z, eps, delta, st_kind.gamma) * min(max(y + z, 0.0), 3.0), a, b,
        points=[p for p in (-y, 3 - y) if a < p < b] or None)[0] for a, b in zip(pts, pts[1:]))
    assert clipped_expectation(y, st_kind, eps, delta, rg) == pytest.approx(oracle, abs=1e-6)


def test_clipping_biases_labels_near_the_ends(rng):
    mech = AdditiveMechanism(NoiseKind("laplace", "continuous"), 0.5, 10.0, ClipRange(0, 10))
    bias = mech.bias(np.array([0.0, 1.0, 9.0]))
    assert bias[0] > 0.5 and bias[1] > 0 and bias[2] < 0
    assert not mech.unbiased and not mech.exportable
    draws = mech.privatize(np.full(200_000, 1.0), rng)
    assert draws.min() >= 0 and draws.max() <= 10
    assert abs(draws.mean() - mech.expected(np.array([1.0]))[0]) < 0.05


# -- randomized response and friends -----------------------------------------------

def test_rr_formula():
    m = rr_matrix(LabelSet([0, 1]), LN2)
    np.testing.assert_allclose(m.probs, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], rtol=1e-15)
    np.testing.assert_allclose(rr_matrix(LabelSet(range(5)), 1.0).probs.sum(axis=1), 1.0)
    big = rr_matrix(LabelSet(range(100)), 20.0)
    assert np.all(np.diag(big.probs) >= 1 - 1e-6)


def test_rr_on_bins_toy(toy_bins):
    assert toy_bins.outputs.values.tolist() == [0.396, 0.720]
    assert toy_bins.probs[0, 0] == pytest.approx(math.exp(0.5) / (math.exp(0.5) + 1))
    assert toy_bins.probs[0, 0] == pytest.approx(0.6225, abs=1e-4)


def test_rr_on_bins_identity_is_rr():
    ls = LabelSet([0, 1])
    np.testing.assert_array_equal(rr_on_bins_matrix(ls, {0.0: 0.0, 1.0: 1.0}, LN2).probs,
                                  rr_matrix(ls, LN2).probs)


def test_rr_on_bins_missing_label():
    with pytest.raises(ParameterError):
        rr_on_bins_matrix(LabelSet([0, 1]), {0.0: 0.5}, 1.0)


@settings(max_examples=50, deadline=None)
@given(k=st.integers(1, 7), eps=st.floats(0.05, 5), seed=st.integers(0, 2**32 - 1))
def test_rr_on_bins_is_dp(k, eps, seed):
    gen = np.random.default_rng(seed)
    labels = LabelSet(range(k))
    phi = {float(y): float(gen.integers(0, 3)) for y in labels}
    m = rr_on_bins_matrix(labels, phi, eps)
    rep = validate_randomizer(m)
    assert rep.dp_satisfied and rep.row_stochastic
    if len(m.outputs) > 1:
        assert rep.worst_dp_ratio == pytest.approx(math.exp(eps))


def test_dbrr_hand_values():
    assert dbrr_values(LabelSet([0, 1]), LN2).tolist() == pytest.approx([-1, 2], abs=1e-12)
    assert dbrr_values(LabelSet([0, 1, 2]), LN2).tolist() == pytest.approx([-3, 1, 5], abs=1e-12)
    m = dbrr_matrix(LabelSet([0, 1]), LN2)
    assert m.probs[0, 0] == pytest.approx(2 / 3)
    np.testing.assert_allclose(expected_outputs(m, [0, 1]), [0, 1], atol=1e-15)


def test_dbrr_rejects_bad_input():
    with pytest.raises(ParameterError):
        dbrr_matrix(LabelSet([0, 1]), 0.0)
    with pytest.raises(ParameterError):
        dbrr_matrix(LabelSet([3]), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=2, max_size=12, unique=True), st.floats(0.05, 8))
def test_dbrr_is_unbiased(values, eps):
    m = dbrr_matrix(LabelSet(sorted(values)), eps)
    scale = max(1.0, max(abs(v) for v in values)) / math.expm1(eps) * len(values)
    assert np.max(np.abs(expected_outputs(m, m.inputs.values) - m.inputs.values)) <= 1e-12 * max(scale, 1e2)


def test_dbrr_ten_labels():
    m = dbrr_matrix(LabelSet(range(10)), 1.0)
    assert validate_randomizer(m, 1e-10).unbiased


# -- optimal RR-on-Bins against brute force over every partition ------------------

def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def brute_force_bins(prior, eps):
    y, p = prior.labels.values, prior.probs
    best = math.inf
    for part in set_partitions(list(range(y.size))):
        q = len(part)
        z = math.exp(eps) + q - 1
        # weight of label a on bin B; the best value of a bin is its weighted label mean
        w = np.array([[p[a] * (math.exp(eps) if a in B else 1.0) / z for B in part]
                      for a in range(y.size)])
        values = (w * y[:, None]).sum(axis=0) / w.sum(axis=0)
        loss = float((w * 0.5 * (values[None, :] - y[:, None]) ** 2).sum())
        best = min(best, loss)
    return best


@pytest.mark.parametrize("k", [2, 3, 4, 5, 6])
@pytest.mark.parametrize("eps", [0.1, 0.5, 1.0, 3.0])
def test_optimal_rr_on_bins_matches_brute_force(k, eps):
    prior = random_prior(np.random.default_rng(k * 100 + int(eps * 10)), k)
    matrix, phi = optimal_rr_on_bins(prior, eps)
    assert noisy_label_loss(matrix, prior) == pytest.approx(brute_force_bins(prior, eps), rel=1e-10, abs=1e-14)
    assert set(phi) == set(prior.labels)


def test_optimal_rr_on_bins_toy(toy_prior):
    matrix, phi = optimal_rr_on_bins(toy_prior, 0.5)
    assert phi[0.0] == pytest.approx(TOY_PHI[0.0], abs=1e-3)
    assert phi[1.0] == phi[2.0] == pytest.approx(TOY_PHI[1.0], abs=1e-3)
    assert len(matrix.outputs) == 2


# -- unbiased randomized rounding --------------------------------------------------

def test_urr_two_point():
    grid = OutputGrid([0, 1])
    np.testing.assert_allclose(urr_probabilities(0.25, grid), [0.75, 0.25])
    draws = urr_many(np.full(1_000_000, 0.25), grid, RandomSource(4))
    assert abs(draws.mean() - 0.25) < 0.002
    half = urr_many(np.full(200_000, 0.5), grid, RandomSource(5))
    assert half.var() == pytest.approx(0.25, rel=0.01)


def test_urr_on_grid_point(rng):
    assert set(urr_many(np.ones(500), OutputGrid([0, 1, 2]), rng).tolist()) == {1.0}
    assert urr(1.0, OutputGrid([0, 1, 2]), rng) == 1.0


def test_urr_out_of_range(rng):
    with pytest.raises(RangeError):
        urr(2.5, OutputGrid([0, 1, 2]), rng)
    with pytest.raises(RangeError):
        urr_probabilities(-0.1, OutputGrid([0, 1]))


@given(st.floats(-3, 7), st.lists(st.floats(-3, 7), min_size=1, max_size=6))
def test_urr_probabilities_mean_preserving(y, extra):
    grid = OutputGrid(np.unique(np.round([-3.0, 7.0] + extra, 6)))
    p = urr_probabilities(y, grid)
    assert p.sum() == pytest.approx(1.0)
    assert p @ grid.values == pytest.approx(y, abs=1e-9)
    assert np.count_nonzero(p) <= 2


def test_urr_then_unbiased_matrix_is_unbiased_exactly():
    m = dbrr_matrix(LabelSet([0, 1, 2, 3]), 0.7)
    grid = OutputGrid(m.inputs.values)
    for y in (0.2, 1.5, 2.999):
        composed = urr_probabilities(y, grid) @ (m.probs @ m.outputs.values)
        assert composed == pytest.approx(y, abs=1e-12)


# -- mechanism objects --------------------------------------------------------------

def test_finite_mechanism_exact_zero_bias_for_unbiased():
    m = dbrr_matrix(LabelSet(range(6)), 0.9)
    mech = FiniteMechanism(m)
    assert mech.unbiased and mech.exportable
    ys = np.array([0.0, 5.0, 2.0])
    assert np.all(mech.bias(ys) == 0.0)


def test_finite_mechanism_biased(toy_bins):
    mech = FiniteMechanism(toy_bins)
    assert not mech.unbiased
    assert mech.bias(np.array([0.0]))[0] == pytest.approx(0.5183, abs=1e-4)


@pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.name)
def test_unclipped_additive_is_unbiased(kind, rng):
    mech = AdditiveMechanism(kind, 1.0, 2)
    assert mech.unbiased
    assert np.all(mech.bias(np.array([0.0, 1.0, 2.0])) == 0.0)
    assert mech.privatize(np.zeros(10), rng).shape == (10,)

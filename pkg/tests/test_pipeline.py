import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from labeldp.core import LabelSet, OutputGrid, Prior, RandomSource, validate_randomizer
from labeldp.errors import ParameterError, RangeError, StructuralError
from labeldp.mechanisms import AdditiveMechanism, FiniteMechanism
from labeldp.optlp import compute_opt_unbiased, feasible_output_set
from labeldp.pipeline import (MECHANISM_NAMES, BudgetSplit, _normalize_noisy_counts, clip_labels,
                              discretization_grid, discretize_continuous, estimate_prior_laplace,
                              format_noisy_csv, label_randomizer, load_prior, make_mechanism,
                              parse_labels_csv, prior_from_dict, prior_to_dict, split_budget)

TEN = LabelSet(range(10))


# -- budget ------------------------------------------------------------------------

@pytest.mark.parametrize("eps, k, n, eps1", [
    (1.0, 100, 10**6, 0.01),
    (0.01, 100, 10**4, 0.005),
    (3.0, 53, 105_000_000, math.sqrt(53 / 105_000_000)),
])
def test_split_budget(eps, k, n, eps1):
    split = split_budget(eps, k, n)
    assert split.epsilon1 == pytest.approx(eps1)
    assert split.total == pytest.approx(eps)


def test_split_budget_third_example_magnitude():
    assert split_budget(3.0, 53, 105_000_000).epsilon1 == pytest.approx(7.1e-4, abs=1e-5)


@given(st.floats(1e-3, 20), st.integers(1, 1000), st.integers(1, 10**9))
def test_split_budget_sums_and_halves(eps, k, n):
    split = split_budget(eps, k, n)
    assert 0 < split.epsilon1 <= eps / 2
    assert split.epsilon1 + split.epsilon2 == pytest.approx(eps)


def test_budget_validation():
    with pytest.raises(ParameterError):
        split_budget(0.0, 2, 10)
    with pytest.raises(ParameterError):
        BudgetSplit(0.5, 0.0)


# -- prior estimation ------------------------------------------------------------

def test_prior_without_noise(rng):
    p = estimate_prior_laplace([0, 0, 1], LabelSet([0, 1]), 1.0, rng, add_noise=False)
    np.testing.assert_allclose(p.probs, [2 / 3, 1 / 3])


def test_negative_counts_are_clipped():
    np.testing.assert_array_equal(_normalize_noisy_counts([-1.0, 3.0], LabelSet([0, 1])).probs, [0, 1])
    assert _normalize_noisy_counts([-1.0, -3.0], LabelSet([0, 1])).probs.tolist() == [0.5, 0.5]


def test_prior_errors(rng):
    with pytest.raises(ParameterError):
        estimate_prior_laplace([], TEN, 1.0, rng)
    with pytest.raises(ParameterError):
        estimate_prior_laplace([1.0], TEN, 0.0, rng)


def test_prior_estimate_concentrates():
    gen = np.random.default_rng(0)
    truth = gen.dirichlet(np.ones(10))
    ys = gen.choice(10, size=200_000, p=truth).astype(float)
    p = estimate_prior_laplace(ys, TEN, 0.1, RandomSource(1))
    # sampling error plus k Laplace(2/ε) counts over n
    assert 0.5 * np.abs(p.probs - truth).sum() < 0.01


# -- the full label randomizer ---------------------------------------------------------

def test_label_randomizer_keeps_the_mean():
    gen = np.random.default_rng(7)
    ys = gen.integers(0, 10, size=10_000).astype(float)
    split = split_budget(1.0, 10, ys.size)
    run = label_randomizer(ys, TEN, split.epsilon1, split.epsilon2, 256, RandomSource(7))
    se = run.noisy_labels.std() / math.sqrt(ys.size)
    assert abs(run.noisy_labels.mean() - ys.mean()) <= 4 * se
    assert run.privacy_cost == pytest.approx(1.0)
    assert validate_randomizer(run.randomizer, 1e-7).ok


def test_label_randomizer_single_label(rng):
    run = label_randomizer(np.full(50, 3.0), LabelSet([3.0]), 0.1, 0.9, 256, rng)
    assert np.all(run.noisy_labels == 3.0)


def test_label_randomizer_is_deterministic():
    ys = np.random.default_rng(2).integers(0, 5, size=500).astype(float)
    labels = LabelSet(range(5))
    a = label_randomizer(ys, labels, 0.2, 0.8, 64, RandomSource(5))
    b = label_randomizer(ys, labels, 0.2, 0.8, 64, RandomSource(5))
    np.testing.assert_array_equal(a.noisy_labels, b.noisy_labels)
    assert a.randomizer == b.randomizer
    np.testing.assert_array_equal(a.estimated_prior.probs, b.estimated_prior.probs)


def test_label_randomizer_grid_choice(rng):
    ys = np.zeros(100)
    labels = LabelSet([0, 1])
    wide = label_randomizer(ys, labels, 0.1, 1.0, 16, rng, grid_epsilon="epsilon1")
    narrow = label_randomizer(ys, labels, 0.1, 1.0, 16, rng)
    assert wide.randomizer.outputs.max > narrow.randomizer.outputs.max
    with pytest.raises(ParameterError):
        label_randomizer(ys, labels, 0.1, 1.0, 16, rng, grid_epsilon="both")
    with pytest.raises(ParameterError):
        label_randomizer(ys, labels, 0.1, 1.0, 16)


@pytest.mark.parametrize("seed", range(3))
def test_wrong_prior_costs_loss_not_bias(seed):
    gen = np.random.default_rng(seed)
    labels = LabelSet(range(6))
    corrupted = Prior.from_weights(labels, gen.dirichlet(np.full(6, 0.2)))
    M = compute_opt_unbiased(corrupted, feasible_output_set(labels, 0.8, 64), 0.8)
    rep = validate_randomizer(M, 1e-7)
    assert rep.unbiased and rep.dp_satisfied


# -- continuous labels -----------------------------------------------------------------

def test_discretization_grid():
    assert discretization_grid(0, 1, 0.25).values.tolist() == [0, 0.25, 0.5, 0.75, 1]
    with pytest.raises(ParameterError):
        discretization_grid(0, 1, 0.3)


def test_discretize_on_grid_unchanged(rng):
    ys = np.array([0.0, 0.5, 1.0, 0.5])
    _, out = discretize_continuous(ys, 0, 1, 0.5, rng)
    np.testing.assert_array_equal(out, ys)


def test_discretize_two_point():
    grid, out = discretize_continuous(np.full(200_000, 0.3), 0, 1, 0.5, RandomSource(9))
    assert grid.values.tolist() == [0, 0.5, 1]
    assert set(out.tolist()) == {0.0, 0.5}
    assert abs(np.mean(out == 0.5) - 0.6) < 0.005


def test_discretize_out_of_range(rng):
    with pytest.raises(RangeError):
        discretize_continuous([1.2], 0, 1, 0.5, rng)
    np.testing.assert_array_equal(clip_labels([-1, 0.5, 3], 0, 1), [0, 0.5, 1])


@given(st.floats(0.001, 0.999).filter(lambda y: abs(y * 8 - round(y * 8)) > 1e-6))
def test_halving_step_shrinks_rounding_variance(y):
    def variance(step):
        lo = math.floor(y / step) * step
        return (y - lo) * (lo + step - y)
    assert variance(0.0625) < variance(0.125)
    # same quantity as the two-point law of the rounding itself
    grid = discretization_grid(0, 1, 0.125).values
    lo = grid[grid <= y].max()
    p_hi = (y - lo) / 0.125
    assert p_hi * (1 - p_hi) * 0.125 ** 2 == pytest.approx(variance(0.125))


# -- named mechanisms ------------------------------------------------------------------

@pytest.mark.parametrize("name", MECHANISM_NAMES)
def test_make_mechanism(name):
    ys = np.random.default_rng(1).integers(0, 5, 1000).astype(float)
    labels = LabelSet(range(5))
    choice = make_mechanism(name, labels, 1.0, RandomSource(3), labels=ys, grid_size=32)
    out = choice.mechanism.privatize(ys, RandomSource(4))
    assert out.shape == ys.shape
    if name in ("rr-on-bins", "opt-unbiased"):
        assert choice.split.total == pytest.approx(1.0)
        assert choice.matrix.epsilon == pytest.approx(choice.split.epsilon2)
    if name in ("opt-unbiased", "dbrr", "laplace", "staircase"):
        assert choice.mechanism.unbiased
    if name.endswith("clipped"):
        assert isinstance(choice.mechanism, AdditiveMechanism)
        assert out.min() >= 0 and out.max() <= 4
    if name in ("rr", "dbrr", "rr-on-bins", "opt-unbiased"):
        assert isinstance(choice.mechanism, FiniteMechanism)


def test_make_mechanism_errors(rng):
    with pytest.raises(ParameterError):
        make_mechanism("gaussian", TEN, 1.0, rng)
    with pytest.raises(ParameterError):
        make_mechanism("opt-unbiased", TEN, 1.0, rng)
    with pytest.raises(ParameterError):
        make_mechanism("rr-on-bins", TEN, 1.0, rng, labels=[1.0], prior_epsilon=1.5)


def test_make_mechanism_support_choice(rng):
    discrete = make_mechanism("laplace", TEN, 1.0, rng)
    assert discrete.mechanism.kind.discrete
    real = make_mechanism("laplace", LabelSet([0, 0.5, 1]), 1.0, rng)
    assert not real.mechanism.kind.discrete
    forced = make_mechanism("staircase", TEN, 1.0, rng, support="continuous")
    assert not forced.mechanism.kind.discrete


# -- label and prior files -------------------------------------------------------------

def test_parse_labels_csv():
    np.testing.assert_array_equal(parse_labels_csv("label\n1\n\n2.5\n"), [1, 2.5])
    np.testing.assert_array_equal(parse_labels_csv("3\n4\n"), [3, 4])


@pytest.mark.parametrize("text, where", [("label\n1\nx\n", ":3:"), ("1,2\n", ":1:"),
                                         ("label\n", "no labels"), ("1\nnan\n", ":2:")])
def test_parse_labels_csv_errors(text, where):
    with pytest.raises(StructuralError, match=where):
        parse_labels_csv(text, "y.csv")


def test_format_noisy_csv_round_trip():
    noisy = np.array([0.1 + 0.2, -3.0, 1e-17])
    text = format_noisy_csv(noisy)
    assert text.splitlines()[0] == "noisy_label"
    back = np.array([float(v) for v in text.splitlines()[1:]])
    np.testing.assert_array_equal(back, noisy)
    both = format_noisy_csv(noisy, [1, 2, 3])
    assert both.splitlines()[:2] == ["label,noisy_label", "1.0,0.30000000000000004"]
    with pytest.raises(StructuralError):
        format_noisy_csv(noisy, [1, 2])


def test_prior_file_round_trip(tmp_path):
    p = Prior(LabelSet([0, 1, 5]), [0.2, 0.3, 0.5])
    path = tmp_path / "prior.json"
    path.write_text(json.dumps(prior_to_dict(p)))
    back = load_prior(path)
    assert back.labels == p.labels
    np.testing.assert_array_equal(back.probs, p.probs)
    with pytest.raises(StructuralError):
        prior_from_dict({"labels": [0, 1]})

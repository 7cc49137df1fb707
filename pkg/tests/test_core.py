import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from labeldp.core import (EXACT_TOL, LabelSet, LossKind, OutputGrid, Prior, RandomizerMatrix,
                          RandomSource, dumps_randomizer, expected_output, expected_outputs,
                          load_randomizer, randomizer_from_dict, randomizer_to_dict, sample,
                          sample_many, save_randomizer, validate_randomizer)
from labeldp.errors import (DomainError, ParameterError, StructuralError, UnknownLabelError)
from labeldp.mechanisms import dbrr_matrix, rr_matrix

from conftest import LN2


# -- ordered label containers ---------------------------------------------------

@pytest.mark.parametrize("values", [[], [1, 1], [2, 1], [0, float("nan")], [float("inf")]])
def test_label_set_rejects_bad_values(values):
    with pytest.raises(ParameterError):
        LabelSet(values)


def test_label_set_lookup():
    ls = LabelSet([0, 2.5, 7])
    assert ls.index(2.5) == 1
    assert 7 in ls and 3 not in ls
    assert ls.indices([7, 0, 0]).tolist() == [2, 0, 0]
    with pytest.raises(UnknownLabelError):
        ls.indices([0, 1])
    with pytest.raises(KeyError):  # unknown labels are also KeyErrors
        ls.index(1)


def test_label_set_is_immutable():
    ls = LabelSet([0, 1])
    with pytest.raises(ValueError):
        ls.values[0] = 5


def test_label_set_and_grid_do_not_compare_equal():
    assert LabelSet([0, 1]) != OutputGrid([0, 1])
    assert LabelSet([0, 1]) == LabelSet(np.array([0.0, 1.0]))


# -- priors ----------------------------------------------------------------------

def test_prior_invariants():
    ls = LabelSet([0, 1, 2])
    with pytest.raises(StructuralError):
        Prior(ls, [0.5, 0.5])
    with pytest.raises(ParameterError):
        Prior(ls, [0.5, 0.6, -0.1])
    with pytest.raises(ParameterError):
        Prior(ls, [0.5, 0.5, 1e-9])
    assert Prior.uniform(ls).mean() == pytest.approx(1.0)


@given(st.lists(st.floats(0.0, 1e6), min_size=1, max_size=40).filter(lambda w: sum(w) > 1e-3))
def test_from_weights_sums_to_one(weights):
    p = Prior.from_weights(LabelSet(range(len(weights))), weights)
    assert abs(p.probs.sum() - 1.0) <= EXACT_TOL
    assert np.all(p.probs >= 0)


# -- matrices and validation --------------------------------------------------

def test_matrix_shape_mismatch_is_structural():
    with pytest.raises(StructuralError):
        RandomizerMatrix(LabelSet([0, 1]), OutputGrid([0, 1, 2]), np.eye(2), 1.0)


def test_from_columns_merges_duplicate_outputs():
    m = RandomizerMatrix.from_columns(LabelSet([0, 1]), [1.0, 0.0, 1.0],
                                      [[0.2, 0.5, 0.3], [0.1, 0.6, 0.3]], 1.0)
    assert m.outputs.values.tolist() == [0.0, 1.0]
    np.testing.assert_allclose(m.probs, [[0.5, 0.5], [0.6, 0.4]])


def test_validate_dbrr_pair(dbrr01):
    rep = validate_randomizer(dbrr01)
    assert rep.row_stochastic and rep.dp_satisfied and rep.unbiased
    assert rep.max_bias == 0.0
    assert rep.worst_dp_ratio == pytest.approx(2.0)


def test_row_summing_to_point_nine_is_not_stochastic():
    m = RandomizerMatrix(LabelSet([0, 1]), OutputGrid([0, 1]), [[1.0, 0.0], [0.0, 0.9]], 1.0)
    assert not validate_randomizer(m).row_stochastic


def test_validate_toy_bins(toy_bins):
    rep = validate_randomizer(toy_bins)
    assert rep.dp_satisfied and rep.row_stochastic
    assert not rep.unbiased


def test_validate_does_not_mutate(dbrr01):
    before = dbrr01.probs.copy()
    validate_randomizer(dbrr01)
    np.testing.assert_array_equal(before, dbrr01.probs)


def test_validate_rejects_bad_tolerance(dbrr01):
    with pytest.raises(ParameterError):
        validate_randomizer(dbrr01, 0.0)


def test_dp_violation_detected():
    m = RandomizerMatrix(LabelSet([0, 1]), OutputGrid([0, 1]), [[0.9, 0.1], [0.1, 0.9]], 1.0)
    assert not validate_randomizer(m).dp_satisfied
    half_zero = RandomizerMatrix(LabelSet([0, 1]), OutputGrid([0, 1]), [[1.0, 0.0], [0.5, 0.5]], 1.0)
    assert validate_randomizer(half_zero).worst_dp_ratio == math.inf


@settings(max_examples=60, deadline=None)
@given(k=st.integers(2, 8), eps=st.floats(0.05, 6.0))
def test_dp_columns_pairwise(k, eps):
    m = dbrr_matrix(LabelSet(range(k)), eps)
    P = m.probs
    ratio = P[:, None, :] / P[None, :, :]
    assert ratio.max() <= math.exp(eps) * (1 + 1e-9)
    rep = validate_randomizer(m, 1e-9)
    assert rep.unbiased and rep.max_bias <= 1e-9


# -- expectation and sampling ------------------------------------------------

def test_expected_output_examples(dbrr01, toy_bins):
    assert expected_output(dbrr01, 0.0) == 0.0
    p = math.exp(0.5) / (math.exp(0.5) + 1)
    assert expected_output(toy_bins, 0.0) == pytest.approx(p * 0.396 + (1 - p) * 0.720, abs=1e-15)
    assert expected_output(toy_bins, 0.0) == pytest.approx(0.5183, abs=1e-4)
    single = RandomizerMatrix(LabelSet([3.5]), OutputGrid([3.5]), [[1.0]], 1.0)
    assert expected_output(single, 3.5) == 3.5
    with pytest.raises(UnknownLabelError):
        expected_output(dbrr01, 0.5)
    np.testing.assert_array_equal(expected_outputs(dbrr01, [1, 0, 1]), [1, 0, 1])


def test_degenerate_row_always_returns_its_column(rng):
    m = RandomizerMatrix(LabelSet([0, 1]), OutputGrid([-1, 0, 5]), [[0, 0, 1.0], [0.5, 0.5, 0]], 1.0)
    assert set(sample_many(m, np.zeros(1000), rng).tolist()) == {5.0}
    assert sample(m, 0, rng) == 5.0


def test_sample_frequency_dbrr(dbrr01):
    draws = sample_many(dbrr01, np.zeros(1_000_000), RandomSource(3))
    assert abs(np.mean(draws == -1.0) - 2 / 3) < 0.01


def test_sample_unknown_label(dbrr01, rng):
    with pytest.raises(UnknownLabelError):
        sample(dbrr01, 2, rng)


def test_same_seed_same_stream(dbrr01):
    r1, r2 = RandomSource(42), RandomSource(42)
    s1 = [sample(dbrr01, y, r1) for y in (0, 1, 1, 0, 1) * 20]
    s2 = [sample(dbrr01, y, r2) for y in (0, 1, 1, 0, 1) * 20]
    assert s1 == s2
    assert len(set(s1)) == 2


def test_sample_many_matches_repeated_sample():
    m = rr_matrix(LabelSet([0, 1, 2]), 0.7)
    ys = np.array([2, 0, 1, 1, 0, 2, 2, 1])
    r1, r2 = RandomSource(9), RandomSource(9)
    one_by_one = [sample(m, y, r1) for y in ys]
    assert sample_many(m, ys, r2).tolist() == one_by_one


def test_spawned_sources_are_distinct_and_reproducible():
    a = RandomSource(5).spawn(3)
    b = RandomSource(5).spawn(3)
    assert [s.seed for s in a] == [s.seed for s in b]
    assert len({s.seed for s in a}) == 3
    with pytest.raises(ParameterError):
        RandomSource(-1)


@pytest.mark.parametrize("k, eps", [(2, LN2), (4, 1.0), (6, 0.3)])
def test_sampler_chi_square(k, eps):
    m = dbrr_matrix(LabelSet(range(k)), eps)
    rng = RandomSource(100 + k)
    n = 100_000
    for a, y in enumerate(m.inputs):
        draws = sample_many(m, np.full(n, y), rng)
        observed = np.bincount(m.outputs.indices(draws), minlength=len(m.outputs))
        assert chisquare(observed, n * m.probs[a]).pvalue > 1e-4


# -- losses ---------------------------------------------------------------------

def test_loss_values():
    assert LossKind.SQUARED.value_of(3.0, 1.0) == 2.0
    assert LossKind.POISSON.value_of(1.0, 2.0) == 1.0
    assert LossKind.POISSON.derivative(2.0, 1.0) == 0.5
    with pytest.raises(DomainError):
        LossKind.POISSON.value_of(0.0, 1.0)
    assert LossKind.parse("Poisson") is LossKind.POISSON
    with pytest.raises(ParameterError):
        LossKind.parse("hinge")


@given(st.floats(0.1, 50), st.floats(-20, 20), st.floats(-20, 20))
def test_loss_derivative_affine_in_label(f, y1, y2):
    for loss in LossKind:
        mid = loss.derivative(f, (y1 + y2) / 2)
        assert mid == pytest.approx((loss.derivative(f, y1) + loss.derivative(f, y2)) / 2,
                                    rel=1e-9, abs=1e-9)


# -- file format --------------------------------------------------------------

def test_json_round_trip_is_bit_exact(tmp_path):
    gen = np.random.default_rng(0)
    probs = gen.random((3, 5))
    probs /= probs.sum(axis=1, keepdims=True)
    m = RandomizerMatrix(LabelSet([0, 1 / 3, 2]), OutputGrid(np.sort(gen.normal(size=5))), probs, 0.1 + 0.2)
    path = tmp_path / "m.json"
    save_randomizer(m, path)
    back = load_randomizer(path)
    assert back == m
    data = json.loads(path.read_text())
    assert set(data) == {"epsilon", "input_labels", "output_labels", "probabilities"}
    assert dumps_randomizer(back) == path.read_text()


def test_from_dict_missing_key():
    d = randomizer_to_dict(rr_matrix(LabelSet([0, 1]), 1.0))
    del d["probabilities"]
    with pytest.raises(StructuralError):
        randomizer_from_dict(d)

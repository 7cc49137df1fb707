import math

import numpy as np
import pytest

from labeldp.analysis import JointDistribution
from labeldp.core import LabelSet, Prior, RandomSource
from labeldp.mechanisms import dbrr_matrix, rr_on_bins_matrix

LN2 = math.log(2.0)

# the toy joint: rows are features a and b, columns labels 0, 1, 2
TOY_MASS = np.array([[0.35, 0.10, 0.05],
                     [0.25, 0.15, 0.10]])
TOY_PHI = {0.0: 0.396, 1.0: 0.720, 2.0: 0.720}


@pytest.fixture
def toy_joint():
    return JointDistribution(("a", "b"), LabelSet([0, 1, 2]), TOY_MASS)


@pytest.fixture
def toy_prior():
    return Prior(LabelSet([0, 1, 2]), TOY_MASS.sum(axis=0))


@pytest.fixture
def toy_bins():
    return rr_on_bins_matrix(LabelSet([0, 1, 2]), TOY_PHI, 0.5)


@pytest.fixture
def dbrr01():
    return dbrr_matrix(LabelSet([0, 1]), LN2)


@pytest.fixture
def rng():
    return RandomSource(12345)


def random_prior(gen, k, alpha=1.0):
    labels = LabelSet(np.arange(k, dtype=float))
    return Prior.from_weights(labels, gen.dirichlet(np.full(k, alpha)))


_ACCEPTANCE_LINES = []


def record_acceptance(line):
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

"""Signature matrices and staircase structure of randomizers.

Each entry of a randomizer is classified as ``U`` (column maximum, and the
maximum is ``e^ε`` times the minimum), ``L`` (column minimum, at ``e^-ε``
times the maximum), ``Z`` (zero) or ``S`` (anything else, i.e. a DP constraint
that is not tight).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from ..core import RandomizerMatrix
from ..errors import ParameterError

ZERO, UPPER, LOWER, SLACK = "Z", "U", "L", "S"
_PATTERN = re.compile(r"L*U+L*")


@dataclass(frozen=True, eq=False)
class SignatureMatrix:
    entries: np.ndarray  # dtype '<U1', one row per input, one column per output
    tol: float

    def column(self, i: int) -> str:
        return "".join(self.entries[:, i].tolist())

    def columns(self) -> list[str]:
        return [self.column(i) for i in range(self.entries.shape[1])]


def signature_of(matrix: RandomizerMatrix, tol: float = 1e-6, *,
                 zero_tol: float = 1e-12) -> SignatureMatrix:
    """Classify every entry with relative tolerance ``tol``.

    When a column is simultaneously at its max and min (the two extremes
    coincide within ``tol``) the entry is reported as ``U``.  With a single
    input label every nonzero entry is ``U``.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    P = matrix.probs
    ee = math.exp(matrix.epsilon)
    cmax = P.max(axis=0)
    cmin = P.min(axis=0)

    def close(a, b):
        return np.abs(a - b) <= tol * np.maximum(np.abs(a), np.abs(b))

    at_max = close(P, cmax[None, :])
    at_min = close(P, cmin[None, :])
    tight = close(cmax, ee * cmin)[None, :]
    single = P.shape[0] == 1
    upper = at_max & (tight | single)
    lower = at_min & tight & ~upper
    out = np.full(P.shape, SLACK, dtype="<U1")
    out[lower] = LOWER
    out[upper] = UPPER
    out[P <= zero_tol] = ZERO
    return SignatureMatrix(out, tol)


@dataclass(frozen=True)
class StructureReport:
    support_bound_ok: bool
    columns_two_level_ok: bool
    column_pattern_ok: bool
    phi_monotone_ok: bool
    support_size: int
    signature: tuple[str, ...]

    @property
    def flags(self) -> dict:
        return {
            "support_bound_ok": self.support_bound_ok,
            "columns_two_level_ok": self.columns_two_level_ok,
            "column_pattern_ok": self.column_pattern_ok,
            "phi_monotone_ok": self.phi_monotone_ok,
        }


def check_structure(matrix: RandomizerMatrix, tol: float = 1e-6) -> StructureReport:
    """Support, two-level, ``L*U+L*`` and ordering checks on the nonzero columns."""
    sig = signature_of(matrix, tol)
    cols = [c for c in sig.columns() if set(c) != {ZERO}]
    k = len(matrix.inputs)
    support_ok = len(cols) <= 2 * k
    two_level = all(set(c) <= {UPPER, LOWER} for c in cols)
    pattern = all(_PATTERN.fullmatch(c) is not None for c in cols)
    monotone = pattern
    if pattern:
        ends = [(c.index(UPPER), c.rindex(UPPER)) for c in cols]
        for (a1, a2), (b1, b2) in zip(ends, ends[1:]):
            if not (a1 <= b1 and a2 <= b2 and (a1, a2) != (b1, b2)):
                monotone = False
                break
    return StructureReport(support_ok, two_level, pattern, monotone, len(cols), tuple(cols))


__all__ = ["SignatureMatrix", "StructureReport", "signature_of", "check_structure"]

"""Standard-form LP for the optimal unbiased randomizer.

Variables are laid out as ``M[a, i]`` at index ``a * n + i`` (row-major over
input labels ``a`` and grid points ``i``), followed by one auxiliary column
minimum ``m_i`` at index ``k * n + i``.  All variables are non-negative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, TextIO

import numpy as np
import scipy.sparse as sp

from ..core import LossKind, OutputGrid, Prior
from ..errors import ParameterError, StructuralError


@dataclass(frozen=True, eq=False)
class LPProblem:
    """``min c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= 0``.

    ``shape`` is ``(k, n)`` for problems built by :func:`build_lp` and
    ``None`` for hand-written ones; it drives :meth:`var_name`.
    """

    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    shape: Optional[tuple[int, int]] = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        nv = c.size
        A_eq = sp.csr_matrix(self.A_eq, dtype=np.float64) if self.A_eq is not None \
            else sp.csr_matrix((0, nv))
        A_ub = sp.csr_matrix(self.A_ub, dtype=np.float64) if self.A_ub is not None \
            else sp.csr_matrix((0, nv))
        b_eq = np.asarray(self.b_eq if self.b_eq is not None else [], dtype=np.float64).reshape(-1)
        b_ub = np.asarray(self.b_ub if self.b_ub is not None else [], dtype=np.float64).reshape(-1)
        if A_eq.shape[1] != nv or A_ub.shape[1] != nv:
            raise StructuralError("constraint rows must have one entry per variable")
        if A_eq.shape[0] != b_eq.size or A_ub.shape[0] != b_ub.size:
            raise StructuralError("one right-hand side per constraint row")
        if self.shape is not None and nv != self.shape[0] * self.shape[1] + self.shape[1]:
            raise StructuralError("variable count does not match the (k, n) layout")
        for name, val in (("c", c), ("A_eq", A_eq), ("b_eq", b_eq), ("A_ub", A_ub), ("b_ub", b_ub)):
            object.__setattr__(self, name, val)

    @classmethod
    def generic(cls, c, A_ub=None, b_ub=None, A_eq=None, b_eq=None) -> "LPProblem":
        return cls(c, A_eq, b_eq, A_ub, b_ub)

    @property
    def n_vars(self) -> int:
        return int(self.c.size)

    def var_index(self, a: int, i: int) -> int:
        k, n = self._layout()
        return a * n + i

    def aux_index(self, i: int) -> int:
        k, n = self._layout()
        return k * n + i

    def var_name(self, j: int) -> str:
        if self.shape is None:
            return f"x{j}"
        k, n = self.shape
        if j < k * n:
            return f"M_{j // n}_{j % n}"
        return f"m_{j - k * n}"

    def matrix_part(self, x: np.ndarray) -> np.ndarray:
        """The ``(k, n)`` block of a solution vector."""
        k, n = self._layout()
        return np.asarray(x[: k * n]).reshape(k, n)

    def _layout(self) -> tuple[int, int]:
        if self.shape is None:
            raise StructuralError("problem has no randomizer layout")
        return self.shape

    def residuals(self, x: np.ndarray) -> tuple[float, float, float]:
        """(max |A_eq x - b_eq|, max (A_ub x - b_ub)+, max (-x)+)."""
        eq = float(np.max(np.abs(self.A_eq @ x - self.b_eq), initial=0.0))
        ub = float(np.max(self.A_ub @ x - self.b_ub, initial=0.0))
        neg = float(np.max(-x, initial=0.0))
        return eq, max(ub, 0.0), max(neg, 0.0)


def build_lp(prior: Prior, grid: OutputGrid, epsilon: float,
             loss: LossKind = LossKind.SQUARED) -> LPProblem:
    """Objective, normalisation, unbiasedness and DP rows for ``prior`` over ``grid``.

    DP is encoded through column minima: ``m_i <= M[y, i] <= e^ε m_i`` for
    every ``y``, which is equivalent to all pairwise ratio constraints.
    """
    loss = LossKind.parse(loss)
    if loss is not LossKind.SQUARED:
        raise ParameterError("the randomizer LP is defined for squared loss only")
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    y = prior.labels.values
    g = grid.values
    k, n = y.size, g.size
    nv = k * n + n
    ee = math.exp(epsilon)

    c = np.zeros(nv)
    c[: k * n] = (prior.probs[:, None] * loss.value_of(g[None, :], y[:, None])).ravel()

    rows = np.repeat(np.arange(k), n)
    cols = np.arange(k * n)
    A_norm = sp.csr_matrix((np.ones(k * n), (rows, cols)), shape=(k, nv))
    A_bias = sp.csr_matrix((np.tile(g, k), (rows, cols)), shape=(k, nv))
    A_eq = sp.vstack([A_norm, A_bias], format="csr")
    b_eq = np.concatenate([np.ones(k), y])

    # row 2j:   m_i - M[a, i] <= 0
    # row 2j+1: M[a, i] - e^ε m_i <= 0       with j = a * n + i
    j = np.arange(k * n)
    aux = k * n + (j % n)
    r_lo, r_hi = 2 * j, 2 * j + 1
    ub_rows = np.concatenate([r_lo, r_lo, r_hi, r_hi])
    ub_cols = np.concatenate([aux, j, j, aux])
    ub_vals = np.concatenate([np.ones(k * n), -np.ones(k * n), np.ones(k * n),
                              np.full(k * n, -ee)])
    A_ub = sp.csr_matrix((ub_vals, (ub_rows, ub_cols)), shape=(2 * k * n, nv))
    return LPProblem(c, A_eq, b_eq, A_ub, np.zeros(2 * k * n), shape=(k, n))


def _terms(problem: LPProblem, coefs: np.ndarray, idx: np.ndarray) -> str:
    parts = []
    for j, v in zip(idx.tolist(), coefs.tolist()):
        sign = "-" if v < 0 else "+"
        parts.append(f"{sign} {abs(v)!r} {problem.var_name(j)}")
    return " ".join(parts) if parts else "0 " + problem.var_name(0)


def dump_lp(problem: LPProblem, fh: TextIO) -> None:
    """Write the problem in CPLEX LP text format, one constraint per line.

    Variables default to ``>= 0`` in that format, which matches the model.
    """
    nz = np.nonzero(problem.c)[0]
    fh.write("\\ label randomizer LP\nMinimize\n")
    fh.write(f" obj: {_terms(problem, problem.c[nz], nz)}\nSubject To\n")
    for name, A, b, op in (("e", problem.A_eq, problem.b_eq, "="),
                           ("u", problem.A_ub, problem.b_ub, "<=")):
        for r in range(A.shape[0]):
            lo, hi = A.indptr[r], A.indptr[r + 1]
            fh.write(f" {name}{r}: {_terms(problem, A.data[lo:hi], A.indices[lo:hi])} "
                     f"{op} {float(b[r])!r}\n")
    fh.write("End\n")

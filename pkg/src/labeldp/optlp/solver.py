"""LP backends: a dense two-phase tableau simplex and scipy's HiGHS.

Every solution is re-verified against the original (unscaled) constraints
before it is reported as optimal.  A short vertex polish (re-solving the
active constraint system) removes solver round-off so that tiny surviving
probabilities still satisfy the DP ratio to near machine precision.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ..core import LP_TOL
from ..errors import ParameterError, SolverError
from . import _simplex_py
from .problem import LPProblem

log = logging.getLogger(__name__)

STATUSES = ("optimal", "infeasible", "unbounded", "iteration-limit")
BACKENDS = ("auto", "simplex", "highs")

#: largest dense tableau (entries) the auto backend hands to the own simplex
DENSE_LIMIT = 3_000_000
PHASE1_TOL = 1e-8
REDUCED_COST_TOL = 1e-10
BLAND_AFTER = 50


def _load_kernel():
    if os.environ.get("LABELDP_PURE_PYTHON", "") not in ("", "0"):
        return _simplex_py, "python"
    try:
        from . import _simplex_kernel
    except ImportError:
        return _simplex_py, "python"
    return _simplex_kernel, "cython"


KERNEL, KERNEL_NAME = _load_kernel()


@dataclass(frozen=True, eq=False)
class LPSolution:
    status: str
    values: np.ndarray
    objective_value: float
    iterations: int = 0
    backend: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ParameterError(f"unknown LP status {self.status!r}")

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def tableau_size(problem: LPProblem) -> int:
    m_eq, m_ub = problem.A_eq.shape[0], problem.A_ub.shape[0]
    n_art = m_eq + int(np.count_nonzero(problem.b_ub < 0))
    return (m_eq + m_ub + 1) * (problem.n_vars + m_ub + n_art + 1)


def solve_lp(problem: LPProblem, max_iters: int = 200_000, backend: str = "auto", *,
             tol: float = LP_TOL, kernel=None) -> LPSolution:
    """Minimise ``problem``; ``status == "optimal"`` only after a feasibility re-check.

    ``backend="auto"`` uses the dense simplex when its tableau fits in
    :data:`DENSE_LIMIT` entries and HiGHS otherwise.  ``kernel`` overrides the
    simplex pivot kernel (used by the benchmark).
    """
    if backend not in BACKENDS:
        raise ParameterError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    if max_iters < 1:
        raise ParameterError("max_iters must be positive")
    if backend == "auto":
        backend = "simplex" if tableau_size(problem) <= DENSE_LIMIT else "highs"
    if backend == "simplex":
        sol = _solve_simplex(problem, max_iters, kernel or KERNEL)
    else:
        sol = _solve_highs(problem, max_iters)
    if sol.status == "iteration-limit":
        log.warning("LP stopped at the iteration limit (%d) without proving optimality",
                    max_iters)
    if not sol.optimal:
        return sol
    x = _polish(problem, sol.values, tol)
    return LPSolution("optimal", x, float(problem.c @ x), sol.iterations, sol.backend)


# -- dense two-phase simplex --------------------------------------------------

def _row_scale(A: np.ndarray) -> np.ndarray:
    s = np.max(np.abs(A), axis=1) if A.size else np.ones(A.shape[0])
    s[s == 0] = 1.0
    return 1.0 / s


def _solve_simplex(problem: LPProblem, max_iters: int, kernel) -> LPSolution:
    nv = problem.n_vars
    A_eq = problem.A_eq.toarray()
    A_ub = problem.A_ub.toarray()
    d_eq, d_ub = _row_scale(A_eq), _row_scale(A_ub)
    A_eq, b_eq = A_eq * d_eq[:, None], problem.b_eq * d_eq
    A_ub, b_ub = A_ub * d_ub[:, None], problem.b_ub * d_ub
    m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]
    m = m_eq + m_ub

    # structural columns | slacks | artificials
    A = np.zeros((m, nv + m_ub))
    A[:m_eq, :nv] = A_eq
    A[m_eq:, :nv] = A_ub
    A[m_eq:, nv:] = np.eye(m_ub)
    b = np.concatenate([b_eq, b_ub])
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0
    needs_art = np.zeros(m, dtype=bool)
    needs_art[:m_eq] = True
    needs_art[m_eq:] = flip[m_eq:]
    art_rows = np.nonzero(needs_art)[0]
    n_std = nv + m_ub
    n_art = art_rows.size

    T = np.zeros((m + 1, n_std + n_art + 1))
    T[:m, :n_std] = A
    T[art_rows, n_std + np.arange(n_art)] = 1.0
    T[:m, -1] = b
    basis = np.empty(m, dtype=np.intp)
    basis[m_eq:] = nv + np.arange(m_ub)
    basis[art_rows] = n_std + np.arange(n_art)

    iters = 0
    if n_art:
        T[m, :n_std] = -T[art_rows, :n_std].sum(axis=0)
        T[m, -1] = -b[art_rows].sum()
        allowed = np.ones(T.shape[1] - 1, dtype=bool)
        status, it = kernel.run_simplex(T, basis, allowed, max_iters, REDUCED_COST_TOL,
                                        BLAND_AFTER)
        iters += it
        if status == 2:
            return LPSolution("iteration-limit", np.zeros(nv), np.nan, iters, "simplex")
        if -T[m, -1] > PHASE1_TOL:
            return LPSolution("infeasible", np.zeros(nv), np.nan, iters, "simplex")
        keep = np.ones(m + 1, dtype=bool)
        for r in range(m):
            if basis[r] < n_std:
                continue
            cand = np.nonzero(np.abs(T[r, :n_std]) > 1e-9)[0]
            if cand.size:
                j = int(cand[np.argmax(np.abs(T[r, cand]))])
                kernel.pivot(T, r, j)
                basis[r] = j
            else:
                keep[r] = False  # redundant constraint
        T = np.ascontiguousarray(np.delete(T[keep], np.s_[n_std:n_std + n_art], axis=1))
        basis = np.ascontiguousarray(basis[keep[:m]])
        A = A[keep[:m]]
        b = b[keep[:m]]
        m = basis.size

    cost = np.zeros(n_std)
    cost[:nv] = problem.c
    T[m, :] = 0.0
    T[m, :n_std] = cost
    for r in range(m):
        cb = cost[basis[r]]
        if cb != 0.0:
            T[m] -= cb * T[r]
    allowed = np.ones(n_std, dtype=bool)
    status, it = kernel.run_simplex(T, basis, allowed, max_iters - iters, REDUCED_COST_TOL,
                                    BLAND_AFTER)
    iters += it
    if status == 1:
        return LPSolution("unbounded", np.zeros(nv), -np.inf, iters, "simplex")
    if status == 2:
        return LPSolution("iteration-limit", np.zeros(nv), np.nan, iters, "simplex")

    xs = np.zeros(n_std)
    xs[basis] = T[:m, -1]
    # refine the vertex: re-solve the basis system from the untouched rows
    try:
        xb = np.linalg.solve(A[:, basis], b)
        if np.all(xb >= -1e-10):
            xs = np.zeros(n_std)
            xs[basis] = np.maximum(xb, 0.0)
    except np.linalg.LinAlgError:
        pass
    x = np.maximum(xs[:nv], 0.0)
    return LPSolution("optimal", x, float(problem.c @ x), iters, "simplex")


# -- HiGHS --------------------------------------------------------------------

def _solve_highs(problem: LPProblem, max_iters: int) -> LPSolution:
    res = linprog(
        problem.c,
        A_ub=problem.A_ub if problem.A_ub.shape[0] else None,
        b_ub=problem.b_ub if problem.A_ub.shape[0] else None,
        A_eq=problem.A_eq if problem.A_eq.shape[0] else None,
        b_eq=problem.b_eq if problem.A_eq.shape[0] else None,
        bounds=(0, None),
        method="highs-ds",
        options={"maxiter": max_iters, "primal_feasibility_tolerance": 1e-10,
                 "dual_feasibility_tolerance": 1e-10},
    )
    nit = int(getattr(res, "nit", 0) or 0)
    if res.status == 0:
        return LPSolution("optimal", np.maximum(res.x, 0.0), float(res.fun), nit, "highs")
    if res.status == 1:
        return LPSolution("iteration-limit", np.zeros(problem.n_vars), np.nan, nit, "highs")
    if res.status == 2:
        return LPSolution("infeasible", np.zeros(problem.n_vars), np.nan, nit, "highs")
    if res.status == 3:
        return LPSolution("unbounded", np.zeros(problem.n_vars), -np.inf, nit, "highs")
    raise SolverError(f"HiGHS failed: {res.message}")


# -- verification and polish --------------------------------------------------

def _feasible(problem: LPProblem, x: np.ndarray, tol: float) -> bool:
    eq, ub, neg = problem.residuals(x)
    return eq <= tol and ub <= tol and neg <= tol


def _polish(problem: LPProblem, x: np.ndarray, tol: float) -> np.ndarray:
    """Snap ``x`` onto the face cut out by its active constraints, then re-check."""
    free = x > 1e-11
    candidate = None
    if np.any(free):
        slack = problem.b_ub - problem.A_ub @ x
        touches = (problem.A_ub[:, free] != 0).sum(axis=1).A1 > 0
        tight = (np.abs(slack) <= 1e-9) & touches
        A = np.vstack([problem.A_eq[:, free].toarray(), problem.A_ub[tight][:, free].toarray()])
        rhs = np.concatenate([problem.b_eq, problem.b_ub[tight]])
        xf, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        y = np.zeros_like(x)
        y[free] = xf
        if np.all(y >= -1e-12):
            y = np.maximum(y, 0.0)
            obj_x, obj_y = problem.c @ x, problem.c @ y
            if _feasible(problem, y, tol) and obj_y <= obj_x + 1e-9 * max(1.0, abs(obj_x)):
                candidate = y
    if candidate is not None:
        return candidate
    if _feasible(problem, x, tol):
        return x
    eq, ub, neg = problem.residuals(x)
    raise SolverError(f"solver point fails re-verification (eq {eq:.2e}, ub {ub:.2e}, "
                      f"neg {neg:.2e})")

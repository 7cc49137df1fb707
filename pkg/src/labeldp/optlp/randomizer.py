"""Feasible output grids, the optimal unbiased randomizer, and support pruning."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import LabelSet, OutputGrid, Prior, RandomizerMatrix
from ..errors import InfeasibleError, ParameterError, SolverError
from .problem import LPProblem, build_lp, dump_lp
from .solver import LPSolution, solve_lp

log = logging.getLogger(__name__)

MIN_EPSILON = 1e-3
DEFAULT_GRID_SIZE = 256
DEFAULT_PRUNE = 1e-7
# largest entry change the ratio repair may make without complaint
REPAIR_LIMIT = 1e-9


def grid_endpoints(labels: LabelSet, epsilon: float) -> tuple[float, float]:
    """Smallest and largest debiased-RR outputs, the hull every unbiased grid needs."""
    if not epsilon >= MIN_EPSILON:
        raise ParameterError(f"epsilon must be at least {MIN_EPSILON}, got {epsilon!r}")
    y = labels.values
    scale = math.exp(epsilon) + y.size - 1
    denom = math.expm1(epsilon)
    return (scale * y[0] - y.sum()) / denom, (scale * y[-1] - y.sum()) / denom


def feasible_output_set(labels: LabelSet, epsilon: float,
                        n: int = DEFAULT_GRID_SIZE) -> OutputGrid:
    """``n`` evenly spaced outputs from ``L`` to ``U`` inclusive."""
    lo, hi = grid_endpoints(labels, epsilon)
    if len(labels) == 1:
        return OutputGrid(labels.values)
    if n < 2:
        raise ParameterError("grid needs at least two points")
    return OutputGrid(np.linspace(lo, hi, int(n)))


@dataclass(frozen=True, eq=False)
class OptimalRandomizer:
    matrix: RandomizerMatrix
    problem: Optional[LPProblem]
    solution: Optional[LPSolution]

    @property
    def objective(self) -> float:
        return 0.0 if self.solution is None else self.solution.objective_value


def _repair_ratios(M: np.ndarray, epsilon: float) -> np.ndarray:
    """Lift entries below ``column max / e^ε`` to that floor and renormalise rows.

    Solvers meet the DP rows to an absolute tolerance, which on columns with
    tiny mass can be a large relative miss of the ratio bound.  The lift is of
    the order of that tolerance.
    """
    floor = M.max(axis=0) / math.exp(epsilon)
    lift = np.maximum(floor[None, :] - M, 0.0)
    biggest = float(lift.max(initial=0.0))
    if biggest == 0.0:
        return M
    if biggest > REPAIR_LIMIT:
        log.warning("DP ratio repair moved an entry by %.2e", biggest)
    else:
        log.debug("DP ratio repair moved entries by at most %.2e", biggest)
    M = M + lift
    return M / M.sum(axis=1, keepdims=True)


def solve_opt_unbiased(prior: Prior, grid: OutputGrid, epsilon: float, *,
                       backend: str = "auto", max_iters: int = 200_000,
                       dump_path: Optional[str] = None) -> OptimalRandomizer:
    """Solve the randomizer LP and keep the problem and raw solution alongside.

    ``dump_path`` (or the ``LABELDP_LP_DUMP`` environment variable) writes the
    LP in text form before solving.
    """
    labels = prior.labels
    if len(labels) == 1:
        y = labels.values
        return OptimalRandomizer(RandomizerMatrix(labels, OutputGrid(y), [[1.0]], epsilon),
                                 None, None)
    problem = build_lp(prior, grid, epsilon)
    dump_path = dump_path or os.environ.get("LABELDP_LP_DUMP")
    if dump_path:
        with open(dump_path, "w", encoding="utf-8") as fh:
            dump_lp(problem, fh)
        log.info("wrote LP to %s", dump_path)
    sol = solve_lp(problem, max_iters=max_iters, backend=backend)
    if sol.status == "infeasible":
        raise InfeasibleError("no unbiased randomizer exists on this grid; "
                              "it must span the debiased-RR endpoints")
    if not sol.optimal:
        raise SolverError(f"LP solve ended with status {sol.status}")
    M = problem.matrix_part(sol.values).copy()
    M /= M.sum(axis=1, keepdims=True)
    M = _repair_ratios(M, epsilon)
    log.debug("LP solved by %s in %d iterations, objective %.12g", sol.backend,
              sol.iterations, sol.objective_value)
    return OptimalRandomizer(RandomizerMatrix(labels, grid, M, epsilon), problem, sol)


def compute_opt_unbiased(prior: Prior, grid: OutputGrid, epsilon: float,
                         **kwargs) -> RandomizerMatrix:
    """Lowest-loss unbiased ε-DP randomizer from ``prior.labels`` to ``grid``."""
    return solve_opt_unbiased(prior, grid, epsilon, **kwargs).matrix


@dataclass(frozen=True, eq=False)
class PruneResult:
    """Pruned matrix plus what pruning cost.

    ``bias_increase`` is the measured max change of any label's expected
    output; ``bias_bound`` is the a-priori bound ``2 r max|ŷ| / (1 - r)``
    with ``r`` the largest row mass removed.
    """

    matrix: RandomizerMatrix
    removed: np.ndarray
    bias_increase: float
    bias_bound: float


def prune_support(matrix: RandomizerMatrix, threshold: float = DEFAULT_PRUNE,
                  prior: Optional[Prior] = None) -> PruneResult:
    """Drop output columns whose prior-weighted mass is below ``threshold``.

    The prior defaults to uniform over the inputs.  Rows are renormalised.
    """
    if not threshold >= 0:
        raise ParameterError("threshold must be non-negative")
    p = Prior.uniform(matrix.inputs).probs if prior is None else prior.probs
    if prior is not None and prior.labels != matrix.inputs:
        raise ParameterError("prior and matrix have different input labels")
    mass = p @ matrix.probs
    keep = mass >= threshold
    if threshold == 0:
        keep = mass > 0
    if not np.any(keep):
        raise ParameterError("threshold removes every output column")
    removed_mass = matrix.probs[:, ~keep].sum(axis=1)
    if np.any(removed_mass >= 1):
        raise ParameterError("threshold removes all mass of some input label")
    probs = matrix.probs[:, keep]
    probs = probs / probs.sum(axis=1, keepdims=True)
    pruned = RandomizerMatrix(matrix.inputs, OutputGrid(matrix.outputs.values[keep]),
                              probs, matrix.epsilon)
    before = matrix.probs @ matrix.outputs.values
    after = probs @ pruned.outputs.values
    r = float(removed_mass.max())
    ymax = float(np.max(np.abs(matrix.outputs.values)))
    return PruneResult(pruned, np.nonzero(~keep)[0], float(np.max(np.abs(after - before))),
                       2 * r * ymax / (1 - r))

"""Optimal unbiased randomizers via linear programming."""
from .problem import LPProblem, build_lp, dump_lp
from .randomizer import (
    DEFAULT_GRID_SIZE,
    DEFAULT_PRUNE,
    MIN_EPSILON,
    OptimalRandomizer,
    PruneResult,
    compute_opt_unbiased,
    feasible_output_set,
    grid_endpoints,
    prune_support,
    solve_opt_unbiased,
)
from .solver import KERNEL_NAME, LPSolution, solve_lp
from .structure import (
    SignatureMatrix,
    StructureReport,
    check_structure,
    signature_of,
)

__all__ = [
    "LPProblem", "build_lp", "dump_lp", "LPSolution", "solve_lp", "KERNEL_NAME",
    "feasible_output_set", "grid_endpoints", "compute_opt_unbiased", "solve_opt_unbiased",
    "OptimalRandomizer", "prune_support", "PruneResult", "DEFAULT_GRID_SIZE",
    "DEFAULT_PRUNE", "MIN_EPSILON", "SignatureMatrix", "StructureReport", "signature_of",
    "check_structure",
]

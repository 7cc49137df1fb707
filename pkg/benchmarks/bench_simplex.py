"""Time the compiled and pure-Python simplex kernels on randomizer LPs.

    python benchmarks/bench_simplex.py [--repeat 3]

Both kernels solve the same problems; objectives are compared so a speedup
never hides a wrong answer.
"""
import argparse
import time

import numpy as np

from labeldp.core import Prior, LabelSet
from labeldp.optlp import build_lp, feasible_output_set, solve_lp
from labeldp.optlp import _simplex_py
from labeldp.optlp.solver import KERNEL, KERNEL_NAME

CASES = [(3, 32, 1.0), (5, 64, 0.5), (6, 64, 2.0)]


def _problem(k, n, eps, seed=0):
    labels = LabelSet(np.arange(k, dtype=float))
    prior = Prior.from_weights(labels, np.random.default_rng(seed).dirichlet(np.ones(k)))
    return build_lp(prior, feasible_output_set(labels, eps, n), eps)


def _best_time(problem, kernel, repeat):
    best, sol = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        sol = solve_lp(problem, backend="simplex", kernel=kernel)
        best = min(best, time.perf_counter() - t0)
    return best, sol


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if KERNEL_NAME != "cython":
        print("compiled kernel not available; timing the Python kernel only")
    print(f"{'k':>3} {'grid':>5} {'eps':>5} {'python s':>10} {KERNEL_NAME + ' s':>10} {'speedup':>8}")
    for k, n, eps in CASES:
        problem = _problem(k, n, eps)
        t_py, s_py = _best_time(problem, _simplex_py, args.repeat)
        t_c, s_c = _best_time(problem, KERNEL, args.repeat)
        if not np.isclose(s_py.objective_value, s_c.objective_value, rtol=1e-9, atol=1e-9):
            raise SystemExit(f"kernels disagree on k={k}: {s_py.objective_value} vs {s_c.objective_value}")
        print(f"{k:>3} {n:>5} {eps:>5} {t_py:>10.3f} {t_c:>10.3f} {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()

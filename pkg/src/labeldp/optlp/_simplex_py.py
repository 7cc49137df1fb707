"""Pure-numpy simplex kernel (fallback for the compiled one).

The tableau ``T`` has one row per constraint and a final objective row of
reduced costs; the last column holds the right-hand side.  ``basis[r]`` is
the variable basic in row ``r``.  ``run_simplex`` minimises, returning
``(status, iterations)`` with status 0 optimal, 1 unbounded, 2 iteration limit.
"""
import numpy as np

OPTIMAL, UNBOUNDED, ITERATION_LIMIT = 0, 1, 2
PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9
BLAND_PIVOT_FRACTION = 0.01


def pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    rows = np.nonzero(col)[0]
    if rows.size:
        T[rows] -= np.outer(col[rows], T[r])
    T[:, c] = 0.0
    T[r, c] = 1.0


def _entering(obj: np.ndarray, allowed: np.ndarray, tol: float, bland: bool) -> int:
    rc = obj[:-1]
    if bland:
        cand = np.nonzero(allowed & (rc < -tol))[0]
        return int(cand[0]) if cand.size else -1
    masked = np.where(allowed, rc, 0.0)
    c = int(np.argmin(masked))
    return c if masked[c] < -tol else -1


def _leaving(T: np.ndarray, c: int, basis: np.ndarray, bland: bool) -> tuple[int, float]:
    """Harris two-pass ratio test: relax the bound by FEAS_TOL, then take a big pivot."""
    m = T.shape[0] - 1
    col = T[:m, c]
    pos = np.nonzero(col > PIVOT_TOL)[0]
    if pos.size == 0:
        return -1, 0.0
    a = col[pos]
    rhs = np.maximum(T[pos, -1], 0.0)
    theta = ((rhs + FEAS_TOL) / a).min()
    cand = np.nonzero(rhs / a <= theta)[0]
    if bland:
        cand = cand[a[cand] >= BLAND_PIVOT_FRACTION * a[cand].max()]
        r = cand[np.argmin(basis[pos[cand]])]
    else:
        r = cand[np.argmax(a[cand])]
    return int(pos[r]), float(rhs[r] / a[r])


def run_simplex(T: np.ndarray, basis: np.ndarray, allowed: np.ndarray, max_iters: int,
                tol: float, bland_after: int) -> tuple[int, int]:
    """Primal simplex; Dantzig pricing, switching to Bland after a degenerate streak."""
    m = T.shape[0] - 1
    it = 0
    streak = 0
    bland = False
    while it < max_iters:
        c = _entering(T[m], allowed, tol, bland)
        if c < 0:
            return OPTIMAL, it
        r, step = _leaving(T, c, basis, bland)
        if r < 0:
            return UNBOUNDED, it
        pivot(T, r, c)
        basis[r] = c
        it += 1
        streak = streak + 1 if step <= tol else 0
        if streak > bland_after:
            bland = True
    return ITERATION_LIMIT, it

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simplex kernel.

Same contract as ``_simplex_py``; the pivot skips zero rows of the pivot
column and touches only the nonzero entries of the pivot row, which is where
the randomizer LP (very sparse rows) spends nearly all of its time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

DEF PIVOT_TOL = 1e-9
DEF FEAS_TOL = 1e-9
DEF BLAND_PIVOT_FRACTION = 0.01

OPTIMAL, UNBOUNDED, ITERATION_LIMIT = 0, 1, 2


cdef void _pivot(double[:, ::1] T, Py_ssize_t r, Py_ssize_t c, Py_ssize_t[::1] nzbuf):
    cdef Py_ssize_t nrows = T.shape[0], ncols = T.shape[1]
    cdef Py_ssize_t i, j, q, nnz = 0
    cdef double inv = 1.0 / T[r, c]
    cdef double f
    for j in range(ncols):
        if T[r, j] != 0.0:
            T[r, j] *= inv
            nzbuf[nnz] = j
            nnz += 1
    T[r, c] = 1.0
    for i in range(nrows):
        if i == r:
            continue
        f = T[i, c]
        if f == 0.0:
            continue
        for q in range(nnz):
            j = nzbuf[q]
            T[i, j] -= f * T[r, j]
        T[i, c] = 0.0


def pivot(cnp.ndarray T, Py_ssize_t r, Py_ssize_t c):
    cdef double[:, ::1] view = T
    cdef Py_ssize_t[::1] buf = np.empty(T.shape[1], dtype=np.intp)
    _pivot(view, r, c, buf)


def run_simplex(cnp.ndarray T_arr, cnp.ndarray basis_arr, cnp.ndarray allowed_arr,
                long max_iters, double tol, long bland_after):
    cdef double[:, ::1] T = T_arr
    cdef Py_ssize_t[::1] basis = basis_arr
    cdef cnp.uint8_t[::1] allowed = allowed_arr.view(np.uint8)
    cdef Py_ssize_t m = T.shape[0] - 1
    cdef Py_ssize_t nvar = T.shape[1] - 1
    cdef Py_ssize_t rhs = T.shape[1] - 1
    cdef Py_ssize_t[::1] buf = np.empty(T.shape[1], dtype=np.intp)
    cdef long it = 0, streak = 0
    cdef bint bland = False
    cdef Py_ssize_t c, r, j, i
    cdef double best_rc, ratio, best = 0.0, a, bestpiv, b, theta, floor
    while it < max_iters:
        c = -1
        best_rc = -tol
        for j in range(nvar):
            if allowed[j] and T[m, j] < best_rc:
                c = j
                if bland:
                    break
                best_rc = T[m, j]
        if c < 0:
            return OPTIMAL, it
        # Harris two-pass ratio test: bound relaxed by FEAS_TOL, then prefer big pivots
        theta = INFINITY
        for i in range(m):
            a = T[i, c]
            if a > PIVOT_TOL:
                b = T[i, rhs]
                if b < 0.0:
                    b = 0.0
                ratio = (b + FEAS_TOL) / a
                if ratio < theta:
                    theta = ratio
        r = -1
        bestpiv = 0.0
        for i in range(m):
            a = T[i, c]
            if a > PIVOT_TOL:
                b = T[i, rhs]
                if b < 0.0:
                    b = 0.0
                if b / a <= theta and a > bestpiv:
                    bestpiv = a
                    r = i
        if bland and r >= 0:
            floor = BLAND_PIVOT_FRACTION * bestpiv
            for i in range(m):
                a = T[i, c]
                if a > PIVOT_TOL and a >= floor:
                    b = T[i, rhs]
                    if b < 0.0:
                        b = 0.0
                    if b / a <= theta and basis[i] < basis[r]:
                        r = i
        if r >= 0:
            b = T[r, rhs]
            best = (b if b > 0.0 else 0.0) / T[r, c]
        if r < 0:
            return UNBOUNDED, it
        _pivot(T, r, c, buf)
        basis[r] = c
        it += 1
        if best <= tol:
            streak += 1
        else:
            streak = 0
        if streak > bland_after:
            bland = True
    return ITERATION_LIMIT, it

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled integrand kernel; see _kernel_py for the reference semantics.

Sweeps dimension-major over contiguous point buffers and skips the
normal-cdf calls on infinite bounds; per-point arithmetic matches the
NumPy twin operation for operation, so both backends agree bitwise.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY
from scipy.special.cython_special cimport ndtr, ndtri

cnp.import_array()

DEF MAX_DIM = 64  # engine enforces far less; room for stacked y values

cdef double _ARG_LO = 1e-300
cdef double _ARG_HI = 1.0 - 1e-16

BACKEND_NAME = "cython"


def genz_integrand(const double[:, ::1] w, const double[::1] scale,
                   const double[::1] lower, const double[::1] upper,
                   const double[:, ::1] chol):
    """Separation-of-variables integrand; same contract as the NumPy twin."""
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t d = chol.shape[0]
    if d > MAX_DIM:
        raise ValueError(f"kernel supports at most {MAX_DIM} dimensions")
    out = np.ones(n, dtype=np.float64)
    cdef double[::1] prod = out
    buf = np.zeros((3, n), dtype=np.float64)
    cdef double[::1] tsum = buf[0]
    cdef double[::1] dv = buf[1]
    cdef double[::1] fv = buf[2]
    ys_arr = np.empty((d - 1 if d > 1 else 1, n), dtype=np.float64)
    cdef double[:, ::1] ys = ys_arr
    cdef Py_ssize_t i, j, k
    cdef double lo_b, hi_b, diag, cj, t, f, arg
    cdef bint lo_inf, hi_inf, last
    # homogeneous passes per dimension keep the special-function branch
    # patterns coherent; each element's operation chain matches the twin
    for i in range(d):
        diag = chol[i, i]
        lo_b = lower[i]
        hi_b = upper[i]
        lo_inf = lo_b == -INFINITY
        hi_inf = hi_b == INFINITY
        last = i == d - 1
        if i > 0:
            cj = chol[i, 0]
            for k in range(n):
                tsum[k] = cj * ys[0, k]
            for j in range(1, i):
                cj = chol[i, j]
                for k in range(n):
                    tsum[k] = tsum[k] + cj * ys[j, k]
        if lo_inf:
            for k in range(n):
                dv[k] = 0.0
        else:
            for k in range(n):
                dv[k] = ndtr((lo_b * scale[k] - tsum[k]) / diag)
        if hi_inf:
            for k in range(n):
                fv[k] = 1.0 - dv[k]
        else:
            for k in range(n):
                fv[k] = ndtr((hi_b * scale[k] - tsum[k]) / diag) - dv[k]
        for k in range(n):
            f = fv[k]
            if f < 0.0:
                f = 0.0
                fv[k] = 0.0
            prod[k] = prod[k] * f
        if not last:
            for k in range(n):
                arg = dv[k] + w[k, i] * fv[k]
                if arg < _ARG_LO:
                    arg = _ARG_LO
                elif arg > _ARG_HI:
                    arg = _ARG_HI
                ys[i, k] = ndtri(arg)
    return out

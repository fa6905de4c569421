# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tridiagonal kernels.

All routines act on the last axis of 2-D arrays and loop over the leading
(batch) axis. The numpy mirror lives in ``_fallback.py``.
"""
import numpy as np


def thomas_solve(const double[:, :] lower, const double[:, :] diag,
                 const double[:, :] upper, const double[:, :] rhs):
    """Solve ``m`` tridiagonal systems of size ``n`` by forward elimination.

    ``lower[k, i]`` couples row ``i`` to ``i - 1`` (``lower[k, 0]`` unused),
    ``upper[k, i]`` couples row ``i`` to ``i + 1`` (``upper[k, n-1]`` unused).
    """
    cdef Py_ssize_t m = rhs.shape[0]
    cdef Py_ssize_t n = rhs.shape[1]
    cdef Py_ssize_t k, i
    cdef double beta
    out = np.empty((m, n), dtype=np.float64)
    gam_arr = np.empty(n, dtype=np.float64)
    cdef double[:, :] x = out
    cdef double[:] gam = gam_arr
    for k in range(m):
        beta = diag[k, 0]
        x[k, 0] = rhs[k, 0] / beta
        for i in range(1, n):
            gam[i] = upper[k, i - 1] / beta
            beta = diag[k, i] - lower[k, i] * gam[i]
            x[k, i] = (rhs[k, i] - lower[k, i] * x[k, i - 1]) / beta
        for i in range(n - 2, -1, -1):
            x[k, i] -= gam[i + 1] * x[k, i + 1]
    return out


def tridiag_matvec(const double[:, :] lower, const double[:, :] diag,
                   const double[:, :] upper, const double[:, :] v):
    """Apply ``m`` tridiagonal matrices (same layout as ``thomas_solve``)."""
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t n = v.shape[1]
    cdef Py_ssize_t k, i
    cdef double acc
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, :] y = out
    for k in range(m):
        for i in range(n):
            acc = diag[k, i] * v[k, i]
            if i > 0:
                acc += lower[k, i] * v[k, i - 1]
            if i < n - 1:
                acc += upper[k, i] * v[k, i + 1]
            y[k, i] = acc
    return out


def dirichlet_laplacian(const double[:, :] v, double h):
    """Second-difference operator ``(-v[i-1] + 2 v[i] - v[i+1]) / h**2``."""
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t n = v.shape[1]
    cdef Py_ssize_t k, i
    cdef double s = 1.0 / (h * h)
    cdef double left, right
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, :] y = out
    for k in range(m):
        for i in range(n):
            left = v[k, i - 1] if i > 0 else 0.0
            right = v[k, i + 1] if i < n - 1 else 0.0
            y[k, i] = (2.0 * v[k, i] - left - right) * s
    return out

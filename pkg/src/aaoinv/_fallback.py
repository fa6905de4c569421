"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def thomas_solve(lower, diag, upper, rhs):
    m, n = rhs.shape
    x = np.empty((m, n))
    gam = np.empty((m, n))
    beta = np.array(diag[:, 0], dtype=float)
    x[:, 0] = rhs[:, 0] / beta
    for i in range(1, n):
        gam[:, i] = upper[:, i - 1] / beta
        beta = diag[:, i] - lower[:, i] * gam[:, i]
        x[:, i] = (rhs[:, i] - lower[:, i] * x[:, i - 1]) / beta
    for i in range(n - 2, -1, -1):
        x[:, i] -= gam[:, i + 1] * x[:, i + 1]
    return x


def tridiag_matvec(lower, diag, upper, v):
    y = diag * v
    y[:, 1:] += lower[:, 1:] * v[:, :-1]
    y[:, :-1] += upper[:, :-1] * v[:, 1:]
    return y


def dirichlet_laplacian(v, h):
    y = 2.0 * v
    y[:, 1:] -= v[:, :-1]
    y[:, :-1] -= v[:, 1:]
    return y / (h * h)

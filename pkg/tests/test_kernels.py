import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_banded

from aaoinv import kernels


def _system(rng, rows, n):
    lo = rng.uniform(-1, 0, (rows, n))
    up = rng.uniform(-1, 0, (rows, n))
    di = 2.5 + rng.uniform(0, 1, (rows, n))
    return lo, di, up


def test_both_backends_listed():
    assert "python" in kernels.available_backends()
    assert kernels.get_backend() in kernels.available_backends()


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


def test_thomas_matches_banded_solver(backend, rng):
    lo, di, up = _system(rng, 4, 9)
    rhs = rng.standard_normal((4, 9))
    got = kernels.thomas_solve(lo, di, up, rhs)
    for k in range(4):
        ab = np.zeros((3, 9))
        ab[0, 1:] = up[k, :-1]
        ab[1] = di[k]
        ab[2, :-1] = lo[k, 1:]
        np.testing.assert_allclose(got[k], solve_banded((1, 1), ab, rhs[k]), rtol=1e-12)


def test_matvec_inverts_solve(backend, rng):
    lo, di, up = _system(rng, 3, 7)
    v = rng.standard_normal((3, 7))
    z = kernels.thomas_solve(lo, di, up, kernels.tridiag_matvec(lo, di, up, v))
    np.testing.assert_allclose(z, v, rtol=1e-12, atol=1e-12)


def test_laplacian_stencil(backend):
    # n_x = 3, v = (1, 1, 1) gives (1, 0, 1) / h^2
    h = 0.25
    np.testing.assert_allclose(kernels.dirichlet_laplacian(np.ones(3), h), np.array([1, 0, 1]) / h**2)


def test_broadcast_coefficients_and_1d(backend):
    rhs = np.arange(1.0, 6.0)
    z = kernels.thomas_solve(-1.0, 2.0, -1.0, rhs)
    np.testing.assert_allclose(kernels.tridiag_matvec(-1.0, 2.0, -1.0, z), rhs, rtol=1e-12)
    assert z.shape == rhs.shape


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 40), rows=st.integers(1, 5), seed=st.integers(0, 2**31))
def test_backends_agree(n, rows, seed):
    rng = np.random.default_rng(seed)
    lo, di, up = _system(rng, rows, n)
    v = rng.standard_normal((rows, n))
    results = {}
    prev = kernels.get_backend()
    try:
        for b in kernels.available_backends():
            kernels.set_backend(b)
            results[b] = (kernels.thomas_solve(lo, di, up, v), kernels.tridiag_matvec(lo, di, up, v),
                          kernels.dirichlet_laplacian(v, 0.1))
    finally:
        kernels.set_backend(prev)
    ref = results["python"]
    for out in results.values():
        for a, b in zip(out, ref):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)

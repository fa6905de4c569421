import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aaoinv.discretization import (
    Grid1D, ObsSpec, gram_apply, gram_matrix, gram_solve, inner, norm, riesz_solve,
    sine_transform, stiffness_apply,
)

TAGS = ["L2", "V", "Vstar", "Wcal", "Vcal", "Ycal"]


@pytest.mark.parametrize("bad", [(1, 4), (4, 1), (4, 4, 0.0), (4, 4, float("nan"))])
def test_grid_validation(bad):
    with pytest.raises(ValueError):
        Grid1D(*bad)


def test_grid_geometry():
    g = Grid1D(3, 4, 2.0)
    assert g.h_x == 0.25 and g.tau == 0.5
    np.testing.assert_allclose(g.x, [0.25, 0.5, 0.75])
    assert g.state_shape == (5, 3) and g.mid_shape == (4, 3)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_stiffness_eigenpair(backend, k):
    g = Grid1D(17, 4)
    v = np.sin(k * np.pi * g.x)
    lam = 2.0 / g.h_x**2 * (1 - np.cos(k * np.pi * g.h_x))
    np.testing.assert_allclose(stiffness_apply(g, v), lam * v, atol=1e-10)
    np.testing.assert_allclose(riesz_solve(g, lam * v), v, atol=1e-12)
    np.testing.assert_allclose(g.eigenvalues()[k - 1], lam)


def test_stiffness_zero_and_stencil():
    g = Grid1D(3, 4)
    assert np.all(stiffness_apply(g, np.zeros(3)) == 0)
    np.testing.assert_allclose(stiffness_apply(g, np.ones(3)), np.array([1, 0, 1]) / g.h_x**2)


def test_riesz_solve_residual(backend, rng):
    g = Grid1D(17, 4)
    w = rng.standard_normal(17)
    z = riesz_solve(g, w)
    assert np.max(np.abs(stiffness_apply(g, z) - w)) / np.max(np.abs(w)) <= 1e-12
    assert np.all(riesz_solve(g, np.zeros(17)) == 0)


def test_inner_examples():
    g = Grid1D(9, 8, 1.0)
    one = np.ones(9)
    assert inner("L2", g, one, one) == pytest.approx(9 / 10, rel=1e-14)
    v = np.sin(np.pi * g.x)
    lam = g.eigenvalues()[0]
    assert inner("V", g, v, v) == pytest.approx(lam * inner("L2", g, v, v), rel=1e-12)
    u = np.tile(v, (g.n_t + 1, 1))
    assert inner("Vcal", g, u, u) == pytest.approx(g.T * inner("V", g, v, v), rel=1e-12)


def test_gram_solve_l2_is_division(rng):
    g = Grid1D(9, 8)
    w = rng.standard_normal(9)
    np.testing.assert_allclose(gram_solve("L2", g, w), w / g.h_x, rtol=1e-15)


@pytest.mark.parametrize("tag", TAGS)
def test_gram_matrix_spd_and_roundtrip(tag, rng):
    g = Grid1D(5, 4, 1.0)
    obs = ObsSpec() if tag == "Ycal" else None
    G = gram_matrix(tag, g, obs)
    np.testing.assert_allclose(G, G.T, atol=1e-12 * np.abs(G).max())
    assert np.linalg.eigvalsh(G).min() > 0
    shape = {"L2": (5,), "V": (5,), "Vstar": (5,), "Wcal": (4, 5), "Vcal": (5, 5),
             "Ycal": (5, 5)}[tag]
    v = rng.standard_normal(shape)
    np.testing.assert_allclose(gram_apply(tag, g, v, obs).ravel(), G @ v.ravel(), rtol=1e-10,
                               atol=1e-10 * np.abs(G).max())
    back = gram_solve(tag, g, gram_apply(tag, g, v, obs), obs)
    assert np.linalg.norm(back - v) <= 1e-10 * np.linalg.norm(v)


def test_vcal_defining_identity(rng):
    g = Grid1D(11, 10, 1.0)
    w = rng.standard_normal(g.state_shape)
    v = gram_solve("Vcal", g, w)
    for _ in range(20):
        y = rng.standard_normal(g.state_shape)
        lhs = inner("Vcal", g, v, y)
        assert lhs == pytest.approx(float(np.sum(w * y)), rel=1e-10, abs=1e-12)


def test_sine_transform_orthonormal(rng):
    a = rng.standard_normal((3, 7))
    np.testing.assert_allclose(sine_transform(sine_transform(a)), a, atol=1e-13)
    assert np.linalg.norm(sine_transform(a)) == pytest.approx(np.linalg.norm(a))


@pytest.mark.parametrize("kind", ["full", "mask", "final_time"])
def test_obs_adjoint_and_roundtrip(kind, rng):
    g = Grid1D(6, 5)
    mask = rng.random(g.state_shape) < 0.4 if kind == "mask" else None
    spec = ObsSpec(kind, mask)
    u = rng.standard_normal(g.state_shape)
    y = rng.standard_normal(spec.shape(g))
    assert float(np.sum(spec.apply(u) * y)) == pytest.approx(float(np.sum(u * spec.adjoint(y, g))))
    back = ObsSpec.from_dict(spec.to_dict(), g)
    assert back.kind == kind
    if kind == "mask":
        assert np.array_equal(back.mask, mask)
    G = gram_matrix("Ycal", g, spec)
    assert np.all(np.linalg.eigvalsh(G) > 0)


def test_obs_validation():
    with pytest.raises(ValueError):
        ObsSpec("partial")
    with pytest.raises(ValueError):
        ObsSpec("mask", np.zeros((3, 3), dtype=bool))
    with pytest.raises(ValueError):
        ObsSpec("mask", np.ones((2, 2), dtype=bool)).check(Grid1D(3, 3))


@settings(max_examples=40, deadline=None)
@given(tag=st.sampled_from(TAGS), n_x=st.integers(2, 12), n_t=st.integers(2, 9),
       seed=st.integers(0, 2**31))
def test_inner_symmetric_positive(tag, n_x, n_t, seed):
    g = Grid1D(n_x, n_t, 0.7)
    rng = np.random.default_rng(seed)
    shape = {"Wcal": g.mid_shape, "Vcal": g.state_shape, "Ycal": g.state_shape}.get(tag, (n_x,))
    obs = ObsSpec() if tag == "Ycal" else None
    a, b = rng.standard_normal(shape), rng.standard_normal(shape)
    assert inner(tag, g, a, b, obs) == pytest.approx(inner(tag, g, b, a, obs), rel=1e-10, abs=1e-12)
    assert norm(tag, g, a, obs) > 0
    assert norm(tag, g, 2 * a, obs) == pytest.approx(2 * norm(tag, g, a, obs), rel=1e-12)

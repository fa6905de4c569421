import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aaoinv.diagnostics import (
    STUDY_COLUMNS, Grid1D, ManufacturedSpec, StudyConfig, add_noise, adjoint_test,
    jacobian_fd_check, lipschitz_sample, manufactured_problem, net_jacobian_check, noisy_problem,
    tcc_estimate, tcc_ladder, trend_slope,
)
from aaoinv.discretization import ObsSpec, norm
from aaoinv.operator import KnownNonlinearity, residual, scale_operator


@settings(max_examples=8, deadline=None)
@given(n_x=st.integers(4, 40), n_t=st.integers(3, 40), T=st.floats(0.2, 3.0),
       u_kind=st.sampled_from(["sin_linear", "sin_exp"]),
       c_kind=st.sampled_from(["constant", "parabola", "bump"]))
def test_manufactured_residual_vanishes(n_x, n_t, T, u_kind, c_kind):
    spec = ManufacturedSpec(u_dagger=u_kind, u_params={}, c_dagger=c_kind, c_params={}, width=6)
    problem, truth = manufactured_problem(spec, Grid1D(n_x, n_t, T))
    e = residual(truth.point, problem).experiments[0]
    assert norm("Wcal", problem.grid, e.w) <= 1e-12
    assert np.all(e.h0 == 0) and np.all(e.obs == 0)


def test_truth_state_satisfies_boundary_conditions(desk):
    problem, truth = desk
    u = truth.point.experiments[0].u
    # sin(pi x) vanishes at x = 0 and x = 1; interior nodes only are stored
    np.testing.assert_allclose(u[:, 0], u[:, -1], rtol=1e-12)
    assert truth.fit_rms < 1e-3 and not truth.warnings


def test_two_experiments_share_network():
    spec = ManufacturedSpec(experiments=[{"c_params": {"base": 1.0}},
                                         {"c_params": {"base": 2.0}, "u_params": {"a": 0.2}}],
                            width=6)
    problem, truth = manufactured_problem(spec, Grid1D(9, 8))
    assert problem.K == 2 and truth.point.K == 2
    a, b = truth.point.experiments
    assert not np.array_equal(a.c, b.c)
    r = residual(truth.point, problem)
    assert all(norm("Wcal", problem.grid, e.w) <= 1e-12 for e in r.experiments)


def test_fit_warning_for_poor_width():
    spec = ManufacturedSpec(f_dagger="sine", width=1)
    _, truth = manufactured_problem(spec, Grid1D(9, 8))
    assert truth.warnings and truth.fit_rms > 1e-3


@pytest.mark.parametrize("kind", ["full", "final_time"])
def test_noise_norm_exact(small, kind):
    problem, truth = small
    spec = ObsSpec(kind)
    y = spec.apply(truth.point.experiments[0].u)
    assert np.array_equal(add_noise(problem, y, 0.0, 1, spec), y)
    for delta in (1e-3, 0.37):
        y1 = add_noise(problem, y, delta, 1, spec)
        y2 = add_noise(problem, y, delta, 2, spec)
        assert not np.array_equal(y1, y2)
        for yd in (y1, y2):
            assert norm("Ycal", problem.grid, yd - y, obs=spec) == pytest.approx(delta, rel=1e-14)
    with pytest.raises(ValueError):
        add_noise(problem, y, -1.0, 0, spec)


def test_noisy_problem_records_delta(small):
    problem, _ = small
    p = noisy_problem(problem, 0.01, 4)
    assert p.observations.delta == pytest.approx(0.01)


def test_adjoint_and_fd_checks(small):
    problem, truth = small
    assert adjoint_test(problem, truth.point, 10) <= 1e-9
    assert adjoint_test(problem, truth.point, 10, variant="coordinate") <= 1e-10
    assert jacobian_fd_check(problem, truth.point, 5) <= 1e-5
    with pytest.raises(ValueError):
        adjoint_test(problem, truth.point, 1, variant="transpose")


def test_adjoint_gap_independent_of_scaling(small):
    problem, truth = small
    assert adjoint_test(problem.scaled(7.5), truth.point, 10) <= 1e-9


def test_sign_flip_fault_is_detected(small):
    from aaoinv.operator import hilbert_adjoint
    problem, truth = small
    gap = adjoint_test(problem, truth.point, 3,
                       adjoint=lambda x, p, r: hilbert_adjoint(x, p, r) * -1.0)
    assert gap > 1e-3


def test_net_jacobian_check():
    assert net_jacobian_check(20, seed=3) <= 1e-5


def test_tcc_affine_problem_is_exact():
    spec = ManufacturedSpec(f_dagger="zero", h=KnownNonlinearity("zero"), width=4)
    problem, truth = manufactured_problem(spec, Grid1D(9, 8))
    res = tcc_estimate(problem, truth.point, 0.5, samples=20, M_R=1.0,
                       blocks=("phi", "u0", "u"))
    assert res.c_tc <= 1e-10
    assert res.K_R == pytest.approx(1 + res.c_tc)
    assert res.mu_R == pytest.approx(1 - res.c_tc**2 + (1 - res.c_tc) ** 2 - 1.0)


def test_tcc_validation(small):
    problem, truth = small
    with pytest.raises(ValueError):
        tcc_estimate(problem, truth.point, 0.0, 10)
    with pytest.raises(ValueError):
        tcc_estimate(problem, truth.point, 0.1, 1)
    with pytest.raises(ValueError):
        tcc_ladder(problem, truth.point, [0.2, 0.1], 5)


def test_tcc_all_degenerate_raises(small):
    problem, truth = small
    with pytest.raises(ValueError, match="degenerate"):
        tcc_estimate(problem.scaled(0.0), truth.point, 0.1, 4, M_R=1.0)


def test_tcc_ladder_nondecreasing(small):
    problem, truth = small
    ladder = tcc_ladder(problem, truth.point, [0.01, 0.05, 0.2], samples=20, M_R=1.0)
    c = [r.c_tc for r in ladder]
    assert c == sorted(c)


def test_lipschitz_identical_pairs_skipped(small):
    problem, truth = small
    assert lipschitz_sample(problem, truth.point, 0.0, 5) == 0.0


def test_lipschitz_scales_with_inner_product_weight(desk_linear):
    problem, truth = desk_linear
    ps, rec = scale_operator(truth.point, problem)
    l1 = lipschitz_sample(ps, truth.point, 0.05, 10, seed=2)
    l2 = lipschitz_sample(ps.scaled(2.0), truth.point, 0.05, 10, seed=2)
    # residual factor 2 is a factor 4 on the data-space inner product
    assert l2 == pytest.approx(4.0 * l1, rel=1e-6)
    assert l1 < 2.0


def test_study_config_validation():
    g = Grid1D(9, 8)
    with pytest.raises(ValueError):
        StudyConfig(g, deltas=())
    with pytest.raises(ValueError):
        StudyConfig(g, deltas=(1e-3, 1e-2))
    with pytest.raises(ValueError):
        StudyConfig(g, methods=("newton",))
    cfg = StudyConfig(g)
    assert len(cfg.cells()) == 10
    seeds = [cfg.cell_seed(i) for i in range(10)]
    assert len(set(seeds)) == 10 and seeds == [StudyConfig(g).cell_seed(i) for i in range(10)]
    assert StudyConfig(g, seed=1).cell_seed(0) != seeds[0]


def test_trend_slope():
    d = np.array([1e-1, 1e-2, 1e-3])
    assert trend_slope(d, 3 * d**0.5) == pytest.approx(0.5)
    assert "status" in STUDY_COLUMNS and STUDY_COLUMNS[0] == "method"

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aaoinv import network as nn

IDENT = nn.NetSpec((1, 1, 1), "identity")
TANH1 = nn.NetSpec((1, 1, 1), "tanh")


def _random_net(rng, act="tanh"):
    widths = (1,) + tuple(int(w) for w in rng.integers(2, 6, size=int(rng.integers(1, 3)))) + (1,)
    spec = nn.NetSpec(widths, act)
    return spec, rng.normal(scale=0.7, size=spec.n_params)


def test_spec_validation():
    with pytest.raises(ValueError):
        nn.NetSpec((2, 3, 1))
    with pytest.raises(ValueError):
        nn.NetSpec((1, 3, 1), "swish")
    spec = nn.NetSpec.single_hidden(4)
    assert spec.activations == ("tanh", "identity")
    assert spec.n_params == 4 + 4 + 4 + 1


def test_eval_examples():
    assert nn.net_eval(IDENT, [1.0, 0.0, 1.0, 0.0], 3.0) == pytest.approx(3.0)
    spec = nn.NetSpec((1, 2, 1), "tanh")
    assert nn.net_eval(spec, np.zeros(spec.n_params), np.linspace(-3, 3, 7)) == pytest.approx(0.0)
    theta = np.array([1.0, -1.0, 0.0, 0.0, 0.5, 0.5, 0.0])
    assert nn.net_eval(spec, theta, 1.0) == pytest.approx(0.0, abs=1e-15)


def test_input_derivative_examples():
    th = [1.0, 0.0, 1.0, 0.0]
    assert nn.net_input_deriv(IDENT, th, 0.3) == pytest.approx(1.0)
    assert nn.net_input_deriv(IDENT, th, 0.3, order=2) == pytest.approx(0.0)
    assert nn.net_input_deriv(TANH1, th, 0.0) == pytest.approx(1.0)
    assert nn.net_input_deriv(TANH1, th, 0.0, order=2) == pytest.approx(0.0)


def test_relu_second_derivative_rejected():
    spec = nn.NetSpec((1, 3, 1), "relu")
    with pytest.raises(ValueError, match="relu"):
        nn.net_input_deriv(spec, np.ones(spec.n_params), 0.5, order=2)


def test_param_jacobian_examples():
    spec = nn.NetSpec.single_hidden(5)
    rng = np.random.default_rng(0)
    theta = rng.normal(size=spec.n_params)
    s = 0.37
    J = nn.net_param_jacobian(spec, theta, s, mode="linear_head")
    w1, b1, _ = spec.slices()[0]
    w2, b2, _ = spec.slices()[1]
    np.testing.assert_allclose(J[w2], np.tanh(theta[w1] * s + theta[b1]))
    assert J[b2][0] == 1.0
    assert np.all(J[w1] == 0) and np.all(J[b1] == 0)
    Jz = nn.net_param_jacobian(spec, np.zeros(spec.n_params), s)
    assert Jz[b2][0] == 1.0 and np.all(Jz[w2] == 0)


def test_param_deriv_jacobian_examples():
    # f'(s) = w2 * w1 for the identity net
    J = nn.net_param_deriv_jacobian(IDENT, [1.7, 0.2, -0.4, 0.1], 0.5)
    assert J[2] == pytest.approx(1.7)
    spec = nn.NetSpec.single_hidden(3)
    Jz = nn.net_param_deriv_jacobian(spec, np.zeros(spec.n_params), 0.5)
    assert np.all(Jz[spec.slices()[1][0]] == 0)


def test_random_nets_against_finite_differences():
    rng = np.random.default_rng(3)
    eps = 1e-5
    for _ in range(20):
        spec, theta = _random_net(rng, str(rng.choice(["tanh", "softplus"])))
        s = float(rng.uniform(-1, 1))
        fd = (nn.net_eval(spec, theta, s + eps) - nn.net_eval(spec, theta, s - eps)) / (2 * eps)
        assert nn.net_input_deriv(spec, theta, s) == pytest.approx(fd, rel=1e-6, abs=1e-9)
        fd2 = (nn.net_input_deriv(spec, theta, s + eps)
               - nn.net_input_deriv(spec, theta, s - eps)) / (2 * eps)
        assert nn.net_input_deriv(spec, theta, s, 2) == pytest.approx(fd2, rel=1e-5, abs=1e-8)
        d = rng.standard_normal(spec.n_params)
        fdp = (nn.net_eval(spec, theta + eps * d, s) - nn.net_eval(spec, theta - eps * d, s)) / (2 * eps)
        assert nn.net_param_jacobian(spec, theta, s) @ d == pytest.approx(fdp, rel=1e-6, abs=1e-9)
        fdq = (nn.net_input_deriv(spec, theta + eps * d, s)
               - nn.net_input_deriv(spec, theta - eps * d, s)) / (2 * eps)
        assert nn.net_param_deriv_jacobian(spec, theta, s) @ d == pytest.approx(fdq, rel=1e-6,
                                                                                abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 12),
       mode=st.sampled_from(["full", "linear_head"]))
def test_vjp_is_transpose_of_jvp(seed, n, mode):
    rng = np.random.default_rng(seed)
    spec, theta = _random_net(rng)
    s = rng.uniform(-2, 2, n)
    w = rng.standard_normal(n)
    d = rng.standard_normal(spec.n_params)
    lhs = float(w @ nn.net_jvp(spec, theta, s, d, mode))
    rhs = float(nn.net_vjp(spec, theta, s, w, mode) @ d)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_hyper_norm_examples():
    assert nn.hyper_norm(np.zeros(4)) == 0.0
    assert nn.hyper_norm([3.0, 4.0], "l2") == 25.0
    assert nn.hyper_norm([3.0, -4.0], "l1") == 7.0
    with pytest.raises(ValueError):
        nn.hyper_norm([1.0], "linf")


def test_sup_norm_examples():
    assert nn.sup_norms(IDENT, [1.0, 0.0, 1.0, 0.0], (-2, 2)) == pytest.approx((2.0, 1.0))
    assert nn.sup_norms(IDENT, np.zeros(4), (-2, 2)) == (0.0, 0.0)
    assert nn.sup_norms(TANH1, [1.0, 0.0, 1.0, 0.0], (-5, 5)) == pytest.approx((np.tanh(5), 1.0))
    with pytest.raises(ValueError):
        nn.sample_lattice((1, 1), 5)


def test_fit_zero_target_linear_head():
    spec = nn.NetSpec.single_hidden(8)
    s = np.linspace(-1, 1, 50)
    fit = nn.net_fit(spec, (s, np.zeros_like(s)), mode="linear_head", interval=(-1, 1))
    assert fit.loss == pytest.approx(0.0, abs=1e-28)
    out = fit.theta[spec.trainable_mask("linear_head")]
    assert np.all(np.abs(out) < 1e-14)


@pytest.mark.parametrize("width", [8, 16])
def test_fit_identity_linear_head(width):
    spec = nn.NetSpec.single_hidden(width)
    s = np.linspace(-1, 1, 200)
    fit = nn.net_fit(spec, (s, s), mode="linear_head", interval=(-1, 1))
    assert np.sqrt(fit.loss) <= 1e-3


def test_fit_full_mode_monotone_losses():
    spec = nn.NetSpec.single_hidden(16)
    s = np.linspace(-1.5, 1.5, 200)
    fit = nn.net_fit(spec, (s, s - s**3), mode="full", steps=300, seed=0)
    losses = np.asarray(fit.losses)
    assert np.all(np.diff(losses) <= 0)
    assert losses[-1] < losses[0]


def test_model_roundtrip_bit_exact():
    rng = np.random.default_rng(9)
    spec, theta = _random_net(rng)
    spec2, theta2, mode = nn.decode_model(nn.encode_model(spec, theta, "linear_head"))
    assert spec2 == spec and mode == "linear_head"
    assert theta2.tobytes() == theta.tobytes()
    with pytest.raises(ValueError):
        nn.decode_model('{"format_version": 99}')


def test_linear_head_mask():
    spec = nn.NetSpec((1, 3, 2, 1), "tanh")
    m = spec.trainable_mask("linear_head")
    assert m.sum() == 3
    with pytest.raises(ValueError):
        nn.NetSpec((1, 1), "tanh").trainable_mask("linear_head")

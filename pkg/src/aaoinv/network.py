"""Scalar feedforward networks ``f_theta: R -> R`` with exact derivatives.

Parameters live in one flat vector, layer by layer: the weight matrix of
layer ``l`` (shape ``(p_l, p_{l-1})``, row-major) followed by its bias.
Every routine is vectorised over a batch of scalar inputs.
"""

import json
from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = 1

_ACTIVATIONS = ("tanh", "softplus", "relu", "identity")


class NetworkError(ArithmeticError):
    """Non-finite value inside a forward pass."""


def _sigma(name, z):
    """Activation value, first and second derivative."""
    if name == "tanh":
        a = np.tanh(z)
        d1 = 1.0 - a * a
        return a, d1, -2.0 * a * d1
    if name == "softplus":
        a = np.logaddexp(0.0, z)
        s = 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic, overflow-free
        return a, s, s * (1.0 - s)
    if name == "relu":
        return np.maximum(z, 0.0), (z > 0).astype(float), np.zeros_like(z)
    return z, np.ones_like(z), np.zeros_like(z)


@dataclass(frozen=True)
class NetSpec:
    """Architecture: ``widths = (1, p_1, ..., p_{L-1}, 1)`` and activations.

    ``activations`` has one entry per layer; the output layer is always the
    identity. A single string applies to all hidden layers.
    """

    widths: tuple
    activations: tuple = None

    def __post_init__(self):
        widths = tuple(int(p) for p in self.widths)
        if len(widths) < 2 or widths[0] != 1 or widths[-1] != 1:
            raise ValueError(f"widths must start and end with 1, got {widths}")
        if min(widths) < 1:
            raise ValueError(f"widths must be positive, got {widths}")
        acts = self.activations
        n_layers = len(widths) - 1
        if acts is None:
            acts = "tanh"
        if isinstance(acts, str):
            acts = (acts,) * (n_layers - 1)
        acts = tuple(acts)
        if len(acts) == n_layers:
            acts = acts[:-1]
        if len(acts) != n_layers - 1:
            raise ValueError(f"{len(acts)} activations for {n_layers} layers")
        for a in acts:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activations", acts + ("identity",))

    @classmethod
    def single_hidden(cls, width, activation="tanh"):
        return cls((1, int(width), 1), activation)

    @property
    def n_layers(self):
        return len(self.widths) - 1

    @property
    def n_params(self):
        return sum((p_in + 1) * p_out for p_in, p_out in zip(self.widths[:-1], self.widths[1:]))

    def slices(self):
        """``(weight_slice, bias_slice, (p_out, p_in))`` per layer."""
        out = []
        pos = 0
        for p_in, p_out in zip(self.widths[:-1], self.widths[1:]):
            w = slice(pos, pos + p_out * p_in)
            pos += p_out * p_in
            b = slice(pos, pos + p_out)
            pos += p_out
            out.append((w, b, (p_out, p_in)))
        return out

    def trainable_mask(self, mode="full"):
        mask = np.ones(self.n_params, dtype=bool)
        if mode == "full":
            return mask
        if mode != "linear_head":
            raise ValueError(f"unknown train mode {mode!r}")
        if self.n_layers < 2:
            raise ValueError("linear_head mode needs at least one hidden layer")
        w, b, _ = self.slices()[-1]
        mask[:] = False
        mask[w] = True
        mask[b] = True
        return mask

    def to_dict(self):
        return {"widths": list(self.widths), "activations": list(self.activations)}


def _layers(spec, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_params,):
        raise ValueError(f"theta has shape {theta.shape}, spec needs ({spec.n_params},)")
    return [(theta[w].reshape(shape), theta[b]) for w, b, shape in spec.slices()]


def _forward(spec, theta, s, tangent=False):
    """Forward pass keeping what the backward pass needs.

    With ``tangent=True`` the input-derivative ``da/ds`` is propagated too.
    """
    a = np.asarray(s, dtype=float).reshape(-1, 1)
    da = np.ones_like(a) if tangent else None
    cache = []
    for k, ((W, b), act) in enumerate(zip(_layers(spec, theta), spec.activations)):
        z = a @ W.T + b
        dz = da @ W.T if tangent else None
        sig, d1, d2 = _sigma(act, z)
        if not np.all(np.isfinite(sig)):
            raise NetworkError(f"non-finite activation in layer {k + 1}")
        cache.append((a, da, z, dz, d1, d2, W))
        a = sig
        da = d1 * dz if tangent else None
    return a[:, 0], (da[:, 0] if tangent else None), cache


def net_eval(spec, theta, s):
    """Network value at scalar or array input ``s`` (same shape out)."""
    s_arr = np.asarray(s, dtype=float)
    val, _, _ = _forward(spec, theta, s_arr)
    return val.reshape(s_arr.shape) if s_arr.ndim else float(val[0])


def net_input_deriv(spec, theta, s, order=1):
    """Exact first or second derivative of the network in its input."""
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    if order == 2 and "relu" in spec.activations:
        raise ValueError("second input derivative unsupported for relu networks")
    s_arr = np.asarray(s, dtype=float)
    a = s_arr.reshape(-1, 1)
    da = np.ones_like(a)
    dda = np.zeros_like(a)
    for (W, b), act in zip(_layers(spec, theta), spec.activations):
        z = a @ W.T + b
        dz = da @ W.T
        ddz = dda @ W.T
        sig, d1, d2 = _sigma(act, z)
        a, da, dda = sig, d1 * dz, d2 * dz * dz + d1 * ddz
    out = (da if order == 1 else dda)[:, 0]
    return out.reshape(s_arr.shape) if s_arr.ndim else float(out[0])


def _backward(spec, cache, g_val, g_der):
    """Reverse sweep; returns ``sum_p g_val[p] dval_p/dtheta + g_der[p] dder_p/dtheta``.

    ``g_der`` may be None when only value sensitivities are needed.
    """
    grad = np.zeros(spec.n_params)
    ga = np.asarray(g_val, dtype=float).reshape(-1, 1)
    gda = None if g_der is None else np.asarray(g_der, dtype=float).reshape(-1, 1)
    for (wsl, bsl, _), (a, da, z, dz, d1, d2, W) in zip(spec.slices()[::-1], cache[::-1]):
        gz = d1 * ga
        if gda is not None:
            gz = gz + d2 * dz * gda
            gdz = d1 * gda
            gW = gz.T @ a + gdz.T @ da
            gda = gdz @ W
        else:
            gW = gz.T @ a
        grad[wsl] = gW.ravel()
        grad[bsl] = gz.sum(axis=0)
        ga = gz @ W
    return grad


def net_vjp(spec, theta, s, weights, mode="full"):
    """``sum_p weights[p] * d f(s_p) / d theta`` over a batch of inputs."""
    _, _, cache = _forward(spec, theta, np.ravel(s))
    g = _backward(spec, cache, np.ravel(weights), None)
    return g * spec.trainable_mask(mode)


def net_jvp(spec, theta, s, dtheta, mode="full"):
    """Directional derivative ``(d f(s_p) / d theta) . dtheta`` for every input."""
    dtheta = np.asarray(dtheta, dtype=float) * spec.trainable_mask(mode)
    s_arr = np.asarray(s, dtype=float)
    a = s_arr.reshape(-1, 1)
    ta = np.zeros_like(a)
    for (W, b), (dW, db), act in zip(_layers(spec, theta), _layers(spec, dtheta), spec.activations):
        z = a @ W.T + b
        tz = ta @ W.T + a @ dW.T + db
        sig, d1, _ = _sigma(act, z)
        a, ta = sig, d1 * tz
    return ta[:, 0].reshape(s_arr.shape)


def net_param_jacobian(spec, theta, s, mode="full"):
    """Gradient of ``f(s)`` with respect to the trainable parameters."""
    _, _, cache = _forward(spec, theta, [float(s)])
    return _backward(spec, cache, [1.0], None) * spec.trainable_mask(mode)


def net_param_deriv_jacobian(spec, theta, s, mode="full"):
    """Gradient of ``f'(s)`` with respect to the trainable parameters."""
    _, _, cache = _forward(spec, theta, [float(s)], tangent=True)
    return _backward(spec, cache, [0.0], [1.0]) * spec.trainable_mask(mode)


def hyper_norm(theta, kind="l2", mode="full", spec=None):
    """Squared l2 or l1 norm over the trainable entries."""
    theta = np.asarray(theta, dtype=float)
    if spec is not None:
        theta = theta[spec.trainable_mask(mode)]
    if kind == "l2":
        return float(theta @ theta)
    if kind == "l1":
        return float(np.abs(theta).sum())
    raise ValueError(f"unknown hyperparameter norm {kind!r}")


def sample_lattice(interval, n_samples):
    a, b = map(float, interval)
    if not a < b:
        raise ValueError(f"empty interval [{a}, {b}]")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    return np.linspace(a, b, int(n_samples))


def sup_norms(spec, theta, interval, n_samples=201):
    """Sampled ``(sup |f|, sup |f'|)`` on a uniform lattice incl. endpoints."""
    s = sample_lattice(interval, n_samples)
    val, der, _ = _forward(spec, theta, s, tangent=True)
    return float(np.max(np.abs(val))), float(np.max(np.abs(der)))


def init_params(spec, seed=0):
    """Uniform(-0.1, 0.1) / sqrt(fan_in) for every weight and bias."""
    rng = np.random.default_rng(seed)
    theta = np.empty(spec.n_params)
    for w, b, (p_out, p_in) in spec.slices():
        scale = 0.1 / np.sqrt(p_in)
        theta[w] = rng.uniform(-scale, scale, size=p_out * p_in)
        theta[b] = rng.uniform(-scale, scale, size=p_out)
    return theta


def init_features(spec, interval, seed=0):
    """Frozen hidden layer spread over ``interval`` for linear-head fits.

    Hidden units get slopes of order ``1 / width(interval)`` and centres
    evenly spaced across the interval; the output layer starts at zero.
    Deeper hidden layers fall back to ``init_params``.
    """
    theta = init_params(spec, seed)
    rng = np.random.default_rng(seed + 1)
    a, b = map(float, interval)
    w_sl, b_sl, (p, _) = spec.slices()[0]
    half = 0.5 * (b - a)
    slopes = rng.uniform(1.0, 3.0, size=p) / half * rng.choice([-1.0, 1.0], size=p)
    centres = a + (np.arange(p) + 0.5) * (b - a) / p
    theta[w_sl] = slopes
    theta[b_sl] = -slopes * centres
    w_last, b_last, _ = spec.slices()[-1]
    theta[w_last] = 0.0
    theta[b_last] = 0.0
    return theta


@dataclass
class FitResult:
    theta: np.ndarray
    loss: float
    losses: list


def _mse(spec, theta, s, t):
    r = net_eval(spec, theta, s) - t
    return float(np.mean(r * r)), r


def net_fit(spec, samples, mode="full", steps=2000, rate=1.0, theta0=None, seed=0,
            interval=None):
    """Least-squares fit of the network to ``samples = (s, t)``.

    ``linear_head`` solves the normal equations for the output layer exactly
    (minimum-norm solution), keeping the hidden layers of ``theta0``. ``full``
    runs gradient descent with Armijo backtracking from ``theta0`` and records
    a nonincreasing loss trace.
    """
    s, t = (np.asarray(v, dtype=float).ravel() for v in samples)
    if s.size == 0 or s.size != t.size:
        raise ValueError("need matching, nonempty sample arrays")
    if theta0 is None:
        if mode == "linear_head":
            theta0 = init_features(spec, interval or (s.min(), s.max() + 1e-12), seed)
        else:
            theta0 = init_params(spec, seed)
    theta = np.array(theta0, dtype=float)
    mask = spec.trainable_mask(mode)

    if mode == "linear_head":
        w_sl, b_sl, _ = spec.slices()[-1]
        feats = _hidden_features(spec, theta, s)
        design = np.hstack([feats, np.ones((s.size, 1))])
        coef, *_ = np.linalg.lstsq(design, t, rcond=None)
        theta[w_sl] = coef[:-1]
        theta[b_sl] = coef[-1]
        loss, _ = _mse(spec, theta, s, t)
        return FitResult(theta, loss, [loss])

    loss, r = _mse(spec, theta, s, t)
    losses = [loss]
    step = float(rate)
    for _ in range(int(steps)):
        if not np.isfinite(loss):
            raise NetworkError("fit diverged")
        grad = net_vjp(spec, theta, s, 2.0 * r / s.size) * mask
        gg = float(grad @ grad)
        if gg == 0.0:
            break
        for _ in range(60):
            trial = theta - step * grad
            try:
                new_loss, new_r = _mse(spec, trial, s, t)
            except NetworkError:
                new_loss = np.inf
            if new_loss <= loss - 1e-4 * step * gg:
                break
            step *= 0.5
        else:
            break
        theta, loss, r = trial, new_loss, new_r
        losses.append(loss)
        step *= 2.0
    if not np.isfinite(loss):
        raise NetworkError("fit diverged")
    return FitResult(theta, loss, losses)


def _hidden_features(spec, theta, s):
    _, _, cache = _forward(spec, theta, s)
    return cache[-1][0]


# Model files ---------------------------------------------------------------

def encode_model(spec, theta, mode="full"):
    """JSON document; floats are written with ``repr`` so they round-trip exactly."""
    doc = {
        "format_version": FORMAT_VERSION,
        "widths": list(spec.widths),
        "activations": list(spec.activations),
        "mode": mode,
        "theta": [float(v) for v in np.asarray(theta, dtype=float)],
    }
    return json.dumps(doc)


def decode_model(text):
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {doc.get('format_version')!r}")
    spec = NetSpec(tuple(doc["widths"]), tuple(doc["activations"]))
    theta = np.array(doc["theta"], dtype=np.float64)
    if theta.shape != (spec.n_params,):
        raise ValueError("model theta length does not match widths")
    return spec, theta, doc.get("mode", "full")

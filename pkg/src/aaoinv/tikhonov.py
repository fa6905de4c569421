"""Tikhonov regularization over ``(c, phi, u0, u, theta)``.

The functional is ``Q + S + gamma * R1 + gamma * R2`` with

* ``Q``: squared model and initial-condition residual norms,
* ``S``: squared observation misfit or the Kullback-Leibler divergence,
* ``R1``: ``||c||^2 + ||phi||^2 + ||u0||^2 + ||u||^2`` in the unknown-space norms,
* ``R2``: a penalty on the network (hyperparameter norm or a sampled
  ``W^{1,inf}`` surrogate).
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import network as nn
from .discretization import inner
from .landweber import project
from .operator import (
    ExperimentResidual, Residual, hilbert_adjoint, inner_x, norm_x, residual,
)

log = logging.getLogger(__name__)

OBJECTIVE_COLUMNS = ("iter", "total", "Q", "S", "R1", "R2", "step", "grad_norm")


@dataclass
class TikhonovConfig:
    """Regularization weight, misfit, network penalty and solver controls.

    ``r2_kind`` is ``hyper_l2``, ``hyper_l1`` or ``sampled_w1inf``; the last
    uses ``interval`` and ``n_samples``.
    """

    gamma: float = 1e-3
    misfit: str = "sq_norm"
    r2_kind: str = "hyper_l2"
    interval: tuple = (-1.0, 1.0)
    n_samples: int = 101
    eta: float = 1e-8
    max_iters: int = 2000
    sweep: int = 10
    armijo: float = 1e-4
    shrink: float = 0.5
    max_halvings: int = 60
    initial_step: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.misfit not in ("sq_norm", "kl"):
            raise ValueError(f"unknown misfit {self.misfit!r}")
        if self.r2_kind not in ("hyper_l2", "hyper_l1", "sampled_w1inf"):
            raise ValueError(f"unknown network penalty {self.r2_kind!r}")
        self.interval = tuple(float(v) for v in self.interval)

    def to_dict(self):
        d = dict(self.__dict__)
        d["interval"] = list(self.interval)
        return d


class LineSearchError(RuntimeError):
    def __init__(self, message, point, trace):
        super().__init__(message)
        self.point = point
        self.trace = trace


def kl_div(g, y, weights=1.0):
    """Weighted ``sum y (g/y - log(g/y) - 1)``; ``inf`` if any entry is negative.

    Terms with ``y == 0`` contribute ``g``; ``g == 0 < y`` gives ``inf``.
    """
    g = np.asarray(g, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), g.shape)
    if np.any(g < 0) or np.any(y < 0):
        return math.inf
    pos = y > 0
    if np.any(pos & (g == 0)):
        return math.inf
    terms = np.where(pos, g - y - y * (np.log(np.where(pos, g, 1.0)) - np.log(np.where(pos, y, 1.0))), g)
    return float(np.sum(w * terms))


def _r1(problem, x):
    g = problem.grid
    return sum(inner("L2", g, e.c, e.c) + inner("Wcal", g, e.phi, e.phi)
               + inner("L2", g, e.u0, e.u0) + inner("Vcal", g, e.u, e.u)
               for e in x.experiments)


def _sampled_w1inf(problem, cfg, theta):
    """Squared sampled sup norms and the lattice points that attain them."""
    s = nn.sample_lattice(cfg.interval, cfg.n_samples)
    val = nn.net_eval(problem.net, theta, s)
    der = nn.net_input_deriv(problem.net, theta, s, 1)
    i_val = int(np.argmax(np.abs(val)))
    i_der = int(np.argmax(np.abs(der)))
    return val[i_val] ** 2 + der[i_der] ** 2, (s[i_val], val[i_val]), (s[i_der], der[i_der])


def _r2(problem, cfg, theta):
    if cfg.r2_kind == "hyper_l2":
        return nn.hyper_norm(theta, "l2", problem.mode, problem.net)
    if cfg.r2_kind == "hyper_l1":
        return nn.hyper_norm(theta, "l1", problem.mode, problem.net)
    return _sampled_w1inf(problem, cfg, theta)[0]


@dataclass
class Objective:
    Q: float
    S: float
    R1: float
    R2: float
    gamma: float

    @property
    def total(self):
        return self.Q + self.S + self.gamma * (self.R1 + self.R2)


def tikhonov_parts(x, problem, cfg):
    g = problem.grid
    r = residual(x, problem)
    Q = S = 0.0
    for spec, e, xe, y in zip(problem.observations.specs, r.experiments, x.experiments,
                              problem.observations.data):
        Q += inner("Wcal", g, e.w, e.w) + inner("L2", g, e.h0, e.h0)
        if cfg.misfit == "sq_norm":
            S += inner("Ycal", g, e.obs, e.obs, obs=spec)
        else:
            S += kl_div(spec.apply(xe.u), y, spec.weights(g))
    return Objective(Q, S, _r1(problem, x), _r2(problem, cfg, x.theta), cfg.gamma)


def tikhonov_value(x, problem, cfg):
    return tikhonov_parts(x, problem, cfg).total


def tikhonov_gradient(x, problem, cfg):
    """Gradient in the unknown-space inner product (``hyper_l1`` excluded)."""
    r = residual(x, problem)
    parts = []
    for spec, e, xe, y in zip(problem.observations.specs, r.experiments, x.experiments,
                              problem.observations.data):
        if cfg.misfit == "sq_norm":
            obs = 2.0 * e.obs
        else:
            gm = spec.apply(xe.u)
            if np.any(gm <= 0):
                raise ValueError("KL misfit is not differentiable here; reduce the step")
            obs = (1.0 - y / gm) / problem.scale
        parts.append(ExperimentResidual(2.0 * e.w, 2.0 * e.h0, obs))
    grad = hilbert_adjoint(x, problem, Residual(parts))
    reg = x.copy()
    reg.theta = np.zeros_like(x.theta)
    grad = grad + reg * (2.0 * cfg.gamma)
    mask = problem.net.trainable_mask(problem.mode)
    if cfg.r2_kind == "hyper_l2":
        grad.theta = grad.theta + 2.0 * cfg.gamma * x.theta * mask
    elif cfg.r2_kind == "sampled_w1inf":
        _, (s_v, v), (s_d, d) = _sampled_w1inf(problem, cfg, x.theta)
        g_r2 = (2.0 * v * nn.net_param_jacobian(problem.net, x.theta, s_v, problem.mode)
                + 2.0 * d * nn.net_param_deriv_jacobian(problem.net, x.theta, s_d, problem.mode))
        grad.theta = grad.theta + cfg.gamma * g_r2
    return grad


@dataclass
class ObjectiveTrace:
    rows: list = field(default_factory=list)
    status: str = "running"

    def append(self, it, obj, step, grad_norm):
        self.rows.append(dict(iter=it, total=obj.total, Q=obj.Q, S=obj.S, R1=obj.R1, R2=obj.R2,
                              step=step, grad_norm=grad_norm))

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(OBJECTIVE_COLUMNS)
        for r in self.rows:
            w.writerow([r["iter"]] + [repr(float(r[c])) for c in OBJECTIVE_COLUMNS[1:]])
        return buf.getvalue()


def _soft(theta, t, mask):
    shrunk = np.sign(theta) * np.maximum(np.abs(theta) - t, 0.0)
    return np.where(mask, shrunk, theta)


def _prox_step(x, grad, step, problem, cfg, constraints):
    trial = x - grad * step
    if cfg.r2_kind == "hyper_l1":
        trial.theta = _soft(trial.theta, step * cfg.gamma, problem.net.trainable_mask(problem.mode))
    return project(constraints, trial)


def minimize_tikhonov(x0, problem, cfg, constraints=None, callback=None):
    """Projected gradient descent with Armijo backtracking.

    Trial steps start from a Barzilai-Borwein estimate; accepted steps never
    increase the objective. Stops when the objective drops by at most
    ``eta`` over ``sweep`` iterations, when the gradient norm is at most
    ``eta``, or after ``max_iters``.
    """
    x = project(constraints, x0)
    obj = tikhonov_parts(x, problem, cfg)
    trace = ObjectiveTrace()
    grad = tikhonov_gradient(x, problem, cfg)
    gnorm = norm_x(problem, grad)
    trace.append(0, obj, 0.0, gnorm)
    step = cfg.initial_step
    history = [obj.total]
    for it in range(1, cfg.max_iters + 1):
        if gnorm <= cfg.eta:
            trace.status = "grad_tol"
            break
        if len(history) > cfg.sweep and history[-cfg.sweep - 1] - history[-1] <= cfg.eta:
            trace.status = "decrease_tol"
            break
        for _ in range(cfg.max_halvings):
            trial = _prox_step(x, grad, step, problem, cfg, constraints)
            try:
                new = tikhonov_parts(trial, problem, cfg)
                ok = np.isfinite(new.total)
            except (ArithmeticError, ValueError):
                ok = False
            if ok:
                decrease = inner_x(problem, grad, x - trial)
                if cfg.r2_kind == "hyper_l1":
                    decrease = norm_x(problem, x - trial) ** 2 / step
                if new.total <= obj.total - cfg.armijo * decrease:
                    break
            step *= cfg.shrink
        else:
            trace.status = "line_search_failed"
            raise LineSearchError(f"no descent after {cfg.max_halvings} halvings at iteration {it}",
                                  x, trace)
        new_grad = tikhonov_gradient(trial, problem, cfg)
        s_vec = trial - x
        y_vec = new_grad - grad
        sy = inner_x(problem, s_vec, y_vec)
        ss = inner_x(problem, s_vec, s_vec)
        x, obj, grad = trial, new, new_grad
        gnorm = norm_x(problem, grad)
        trace.append(it, obj, step, gnorm)
        history.append(obj.total)
        if callback is not None:
            callback(it, x, obj)
        step = ss / sy if sy > 0 else 2.0 * step
    else:
        trace.status = "max_iters"
    return x, trace


# Parameter choice -----------------------------------------------------------

@dataclass
class ParamRule:
    """``gamma = c_gamma * delta``; width is the smallest ladder entry with ``qhat <= C gamma``."""

    c_gamma: float = 1.0
    ladder: tuple = (4, 8, 16, 32)
    C: float = 1.0

    def __post_init__(self):
        self.ladder = tuple(int(w) for w in self.ladder)
        if not self.ladder:
            raise ValueError("width ladder is empty")
        if any(b <= a for a, b in zip(self.ladder, self.ladder[1:])):
            raise ValueError("width ladder must be strictly increasing")
        if not (self.c_gamma > 0 and self.C > 0):
            raise ValueError("c_gamma and C must be positive")

    def to_dict(self):
        return {"c_gamma": self.c_gamma, "ladder": list(self.ladder), "C": self.C}


def param_rule(delta, rule, qhat):
    """Return ``(gamma, width, warning)``; ``qhat`` maps width to its proxy value."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    gamma = rule.c_gamma * delta
    for w in rule.ladder:
        if qhat(w) <= rule.C * gamma:
            return gamma, w, None
    msg = f"no ladder width meets qhat <= C*gamma at delta={delta:g}; using {rule.ladder[-1]}"
    log.warning(msg)
    return gamma, rule.ladder[-1], msg


def q_n_proxy(f_samples, ladder, truth_point, problem, gamma, r2_kind="hyper_l2",
              interval=None, n_samples=101, activation="tanh", mode="linear_head", seed=0,
              r2_reference=None):
    """Approximation-error proxy per width.

    Fits each width to samples of the true nonlinearity, then evaluates the
    model residual of the true state with the fitted network plus
    ``gamma * (R2(fit) - R2_ref)``. ``R2_ref`` defaults to the penalty of the
    true point's own network ``(problem.net, truth_point.theta)``.
    """
    from dataclasses import replace
    s, t = (np.asarray(v, dtype=float) for v in f_samples)
    span = (float(s.min()), float(s.max()))
    interval = interval or span
    cfg = TikhonovConfig(gamma=gamma, r2_kind=r2_kind, interval=interval, n_samples=n_samples)
    fits = {}
    for w in ladder:
        net = nn.NetSpec.single_hidden(w, activation)
        fit = nn.net_fit(net, (s, t), mode=mode, seed=seed, interval=span)
        fits[w] = (net, fit.theta)
    r2 = {w: _r2(replace(problem, net=net, mode=mode), cfg, th) for w, (net, th) in fits.items()}
    ref = _r2(problem, cfg, truth_point.theta) if r2_reference is None else r2_reference
    out = {}
    g = problem.grid
    for w, (net, th) in fits.items():
        p = replace(problem, net=net, mode=mode)
        x = truth_point.copy()
        x.theta = th
        r = residual(x, p)
        Q = sum(inner("Wcal", g, e.w, e.w) + inner("L2", g, e.h0, e.h0) for e in r.experiments)
        out[w] = float(Q / p.scale**2 + gamma * (r2[w] - ref))
    return out

"""Projected Landweber iteration with a-priori and discrepancy stopping."""

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .operator import (
    AaoPoint, OperatorError, block_norms_y, hilbert_adjoint, inner_x, norm_x, norm_y, residual,
)

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("k", "res_model", "res_init", "res_obs", "step_norm", "err_c", "err_u",
                 "err_f_sup", "seconds")


@dataclass
class ConstraintSet:
    """Closed convex set: optional boxes on ``c``, ``phi``, ``u0`` and an l2-ball on ``theta``.

    Box bounds are scalars or arrays broadcastable to the field; ``None``
    leaves a side open. The state ``u`` is unconstrained.
    """

    c_bounds: tuple = None
    phi_bounds: tuple = None
    u0_bounds: tuple = None
    theta_radius: float = None

    def __post_init__(self):
        for name in ("c_bounds", "phi_bounds", "u0_bounds"):
            b = getattr(self, name)
            if b is None:
                continue
            lo, hi = b
            if lo is not None and hi is not None and np.any(np.asarray(lo) > np.asarray(hi)):
                raise ValueError(f"{name}: lower bound exceeds upper bound")
        if self.theta_radius is not None and not self.theta_radius > 0:
            raise ValueError("theta_radius must be positive")

    def to_dict(self):
        def enc(b):
            if b is None:
                return None
            return [None if v is None else np.asarray(v, dtype=float).tolist() for v in b]
        return {"c_bounds": enc(self.c_bounds), "phi_bounds": enc(self.phi_bounds),
                "u0_bounds": enc(self.u0_bounds), "theta_radius": self.theta_radius}

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def _clip(a, bounds):
    if bounds is None:
        return a
    lo, hi = bounds
    return np.clip(a, -np.inf if lo is None else lo, np.inf if hi is None else hi)


def project(constraints, x):
    """Metric projection onto the constraint set (returns a new point).

    Clamping is the projection for the diagonal-weighted ``L2`` blocks; the
    ``phi`` box is applied the same way.
    """
    if constraints is None:
        return x.copy()
    exps = []
    for e in x.experiments:
        e = e.copy()
        e.c = _clip(e.c, constraints.c_bounds)
        e.phi = _clip(e.phi, constraints.phi_bounds)
        e.u0 = _clip(e.u0, constraints.u0_bounds)
        exps.append(e)
    theta = x.theta.copy()
    rho = constraints.theta_radius
    if rho is not None:
        nt = float(np.linalg.norm(theta))
        # rescaling lands within a few ulp of rho; treat that shell as inside
        if nt > rho * (1.0 + 4 * np.finfo(float).eps):
            theta *= rho / nt
    return AaoPoint(exps, theta)


def contains(constraints, x, tol=0.0):
    p = project(constraints, x)
    return float(np.max(np.abs(p.flat() - x.flat()))) <= tol


@dataclass
class StoppingRule:
    """``kind`` is ``apriori``, ``discrepancy`` or ``max_iters``.

    ``apriori`` uses ``mu_R, M_R, K_R, R, d_bar, rho`` and ``m_N``;
    ``discrepancy`` stops once the residual is at most ``tau_d * delta``.
    ``max_iters`` caps every rule.
    """

    kind: str = "max_iters"
    max_iters: int = 500
    tau_d: float = 2.0
    mu_R: float = 1.0
    M_R: float = 0.9 * math.sqrt(2.0)
    K_R: float = 2.0
    R: float = 1.0
    d_bar: float = 0.05
    rho: float = 0.4
    m_N: float = 0.0

    def __post_init__(self):
        if self.kind not in ("apriori", "discrepancy", "max_iters"):
            raise ValueError(f"unknown stopping rule {self.kind!r}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.kind == "discrepancy" and not self.tau_d > 1:
            raise ValueError("discrepancy rule needs tau_d > 1")
        if self.kind == "apriori":
            consts = (self.mu_R, self.M_R, self.K_R, self.R)
            if min(consts) <= 0 or self.d_bar < 0 or self.rho < 0 or self.m_N < 0:
                raise ValueError("a-priori constants must be positive")
            if not self.R > self.rho + 2 * self.d_bar:
                raise ValueError("need R > rho + 2 d_bar")

    def to_dict(self):
        return dict(self.__dict__)


def k_star_apriori(delta, rule):
    """Largest ``k`` with ``C k (m_N + delta)^2 <= (R - d)^2 - (rho + d)^2``.

    ``C = 4 K_R / mu_R + (1 + 4 M_R^2 / mu_R) M_R^2``; capped at
    ``rule.max_iters``.
    """
    rhs = (rule.R - rule.d_bar) ** 2 - (rule.rho + rule.d_bar) ** 2
    if rhs <= 0:
        raise ValueError("ball too small: (R - d_bar)^2 <= (rho + d_bar)^2")
    const = 4.0 * rule.K_R / rule.mu_R + (1.0 + 4.0 * rule.M_R**2 / rule.mu_R) * rule.M_R**2
    level = (rule.m_N + delta) ** 2
    if level == 0:
        return int(rule.max_iters)
    k = math.floor(rhs / (const * level) * (1 + 1e-12))
    return int(min(k, rule.max_iters))


def discrepancy_stop(residual_norm, delta, tau_d):
    if not tau_d > 1:
        raise ValueError("tau_d must exceed 1")
    return residual_norm <= tau_d * delta


@dataclass
class IterationTrace:
    rows: list = field(default_factory=list)
    status: str = "running"
    message: str = ""

    def append(self, **row):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow([r["k"]] + [repr(float(r[c])) for c in TRACE_COLUMNS[1:]])
        return buf.getvalue()


class LandweberAbort(RuntimeError):
    def __init__(self, message, point, trace):
        super().__init__(message)
        self.point = point
        self.trace = trace


def landweber_step(x, problem, constraints=None, r=None):
    """``P(x - F'(x)^* (F(x) - y))`` with unit step."""
    if r is None:
        r = residual(x, problem)
    update = hilbert_adjoint(x, problem, r)
    return project(constraints, x - update)


def _errors(problem, x, truth):
    if truth is None:
        return math.nan, math.nan, math.nan
    from .discretization import norm
    g = problem.grid
    err_c = math.sqrt(sum(norm("L2", g, a.c - b.c) ** 2
                          for a, b in zip(x.experiments, truth.point.experiments)))
    err_u = math.sqrt(sum(norm("Vcal", g, a.u - b.u) ** 2
                          for a, b in zip(x.experiments, truth.point.experiments)))
    return err_c, err_u, truth.err_f_sup(problem.net, x.theta)


def run_landweber(x0, problem, constraints=None, rule=None, truth=None, reference=None,
                  record_every=1):
    """Iterate ``landweber_step`` until the stopping rule fires.

    ``truth`` (a ``GroundTruth``) enables the error columns; ``reference``
    (a point) adds ``err_x``, the unknown-space distance, to each row.
    Returns ``(x, trace)``; raises ``LandweberAbort`` carrying the partial
    trace on numerical failure.
    """
    rule = rule or StoppingRule()
    if constraints is not None and not contains(constraints, x0, tol=1e-12):
        raise ValueError("initial point violates the constraints")
    delta = problem.observations.delta * problem.scale
    if rule.kind == "apriori":
        k_max = k_star_apriori(delta, rule)
    else:
        k_max = int(rule.max_iters)
    trace = IterationTrace()
    x = x0.copy()
    start = time.perf_counter()
    step_norm = 0.0
    k = 0
    while True:
        try:
            r = residual(x, problem)
        except OperatorError as exc:
            trace.status, trace.message = "aborted", str(exc)
            raise LandweberAbort(str(exc), x, trace) from exc
        if k % record_every == 0 or k == k_max:
            blocks = block_norms_y(problem, r)
            err_c, err_u, err_f = _errors(problem, x, truth)
            row = dict(k=k, res_model=blocks[0], res_init=blocks[1], res_obs=blocks[2],
                       step_norm=step_norm, err_c=err_c, err_u=err_u, err_f_sup=err_f,
                       seconds=time.perf_counter() - start)
            if reference is not None:
                row["err_x"] = norm_x(problem, x - reference)
            trace.append(**row)
        res_norm = norm_y(problem, r)
        if k >= k_max:
            trace.status = "max_iters" if rule.kind != "apriori" else "apriori"
            break
        if rule.kind == "discrepancy" and discrepancy_stop(res_norm, delta, rule.tau_d):
            trace.status = "discrepancy"
            if trace.rows[-1]["k"] != k:
                blocks = block_norms_y(problem, r)
                trace.append(k=k, res_model=blocks[0], res_init=blocks[1], res_obs=blocks[2],
                             step_norm=step_norm, err_c=math.nan, err_u=math.nan,
                             err_f_sup=math.nan, seconds=time.perf_counter() - start)
            break
        x_new = landweber_step(x, problem, constraints, r=r)
        flat = x_new.flat()
        if not np.all(np.isfinite(flat)):
            trace.status, trace.message = "aborted", f"non-finite update at k={k}"
            raise LandweberAbort(trace.message, x, trace)
        step_norm = norm_x(problem, x_new - x)
        x = x_new
        k += 1
    return x, trace


def residual_sum_bound(x0, x_ref, problem, rule, k, delta=0.0):
    """Right-hand side of the summed monotonicity estimate after ``k`` steps.

    ``(2 / mu_R) * (||x0 - x_ref||^2 + k C (delta + m_N)^2)`` bounds
    ``sum_{i<k} ||F(x_i) - F(x_ref)||^2``.
    """
    const = 4.0 * rule.K_R / rule.mu_R + (1.0 + 4.0 * rule.M_R**2 / rule.mu_R) * rule.M_R**2
    e0 = inner_x(problem, x0 - x_ref, x0 - x_ref)
    return 2.0 / rule.mu_R * (e0 + k * const * (delta + rule.m_N) ** 2)

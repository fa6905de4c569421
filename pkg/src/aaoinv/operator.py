"""All-at-once forward operator, its Jacobian and adjoints.

For each experiment the residual stacks

* ``w_j = (u^{j+1} - u^j)/tau + D_V ubar_j + c*ubar_j + h(ubar_j) - f(ubar_j) - phi_j``
  (Crank-Nicolson collocation at cell midpoints, ``ubar_j`` the average of
  neighbouring time levels),
* ``h0 = u^0 - u0``,
* ``obs = M u - y``,

multiplied by the problem's residual scale. The source ``phi`` is a
midpoint field like ``w``. The network parameters ``theta`` are shared by
all experiments.

Image space: ``Wcal x L2 x Ycal`` per experiment. Unknown space:
``L2 (c) x Wcal (phi) x L2 (u0) x Vcal (u)`` per experiment plus Euclidean
``theta``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import network as nn
from .discretization import Grid1D, ObsSpec, gram_apply, gram_solve, inner, stiffness_apply

__all__ = [
    "AaoPoint", "Experiment", "ExperimentResidual", "Residual", "KnownNonlinearity",
    "ObservationSet", "Problem", "ObsSpec", "OperatorError", "residual", "apply_jacobian",
    "coordinate_adjoint", "hilbert_adjoint", "operator_norm_estimate", "scale_operator",
    "inner_x", "inner_y", "norm_x", "norm_y",
]


class OperatorError(ArithmeticError):
    """Non-finite residual entry; ``location`` is ``(experiment, cell, node)``."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


@dataclass(frozen=True)
class KnownNonlinearity:
    """The known reaction term ``h``: ``zero``, ``cubic`` or a polynomial.

    ``coefficients`` are in ascending order, degree at most 5.
    """

    kind: str = "zero"
    coefficients: tuple = ()

    def __post_init__(self):
        if self.kind == "zero":
            coeffs = (0.0,)
        elif self.kind == "cubic":
            coeffs = (0.0, 0.0, 0.0, 1.0)
        elif self.kind == "polynomial":
            coeffs = tuple(float(c) for c in self.coefficients) or (0.0,)
        else:
            raise ValueError(f"unknown nonlinearity {self.kind!r}")
        if len(coeffs) > 6:
            raise ValueError("polynomial degree must be at most 5")
        object.__setattr__(self, "coefficients", coeffs)

    def _poly(self, order):
        p = np.polynomial.Polynomial(self.coefficients)
        return p.deriv(order) if order else p

    def value(self, s):
        return self._poly(0)(s)

    def deriv(self, s):
        return self._poly(1)(s)

    def deriv2(self, s):
        return self._poly(2)(s)

    def to_dict(self):
        return {"kind": self.kind, "coefficients": list(self.coefficients)}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("kind", "zero"), tuple(d.get("coefficients", ())))


class _Vector:
    """Blockwise linear algebra over dataclass fields holding arrays."""

    _blocks = ()

    def _map(self, fn, *others):
        kw = {b: fn(getattr(self, b), *(getattr(o, b) for o in others)) for b in self._blocks}
        return replace(self, **kw)

    def __add__(self, other):
        return self._map(np.add, other)

    def __sub__(self, other):
        return self._map(np.subtract, other)

    def __mul__(self, alpha):
        return self._map(lambda a: float(alpha) * a)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def copy(self):
        return self._map(np.array)

    def zeros_like(self):
        return self._map(np.zeros_like)

    def flat(self):
        return np.concatenate([np.ravel(getattr(self, b)) for b in self._blocks])


@dataclass
class Experiment(_Vector):
    """Unknowns of one experiment: potential, source, initial state, state."""

    c: np.ndarray
    phi: np.ndarray
    u0: np.ndarray
    u: np.ndarray
    _blocks = ("c", "phi", "u0", "u")

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(grid.n_x), np.zeros(grid.mid_shape), np.zeros(grid.n_x),
                   np.zeros(grid.state_shape))


@dataclass
class AaoPoint:
    """Iterate ``(c, phi, u0, u)`` per experiment plus shared ``theta``.

    Also used for directions and adjoint outputs.
    """

    experiments: list
    theta: np.ndarray

    def __post_init__(self):
        if len(self.experiments) < 1:
            raise ValueError("need at least one experiment")
        self.theta = np.asarray(self.theta, dtype=float)

    def _combine(self, other, fn):
        return AaoPoint([fn(a, b) for a, b in zip(self.experiments, other.experiments)],
                        fn(self.theta, other.theta))

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b)

    def __mul__(self, alpha):
        return AaoPoint([e * alpha for e in self.experiments], float(alpha) * self.theta)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def copy(self):
        return AaoPoint([e.copy() for e in self.experiments], self.theta.copy())

    def zeros_like(self):
        return AaoPoint([e.zeros_like() for e in self.experiments], np.zeros_like(self.theta))

    def flat(self):
        return np.concatenate([e.flat() for e in self.experiments] + [self.theta])

    def unflat(self, v):
        """Same layout as ``flat``; returns a new point."""
        v = np.asarray(v, dtype=float)
        pos = 0
        exps = []
        for e in self.experiments:
            kw = {}
            for b in e._blocks:
                a = getattr(e, b)
                kw[b] = v[pos:pos + a.size].reshape(a.shape).copy()
                pos += a.size
            exps.append(Experiment(**kw))
        theta = v[pos:pos + self.theta.size].copy()
        if pos + self.theta.size != v.size:
            raise ValueError("flat vector length mismatch")
        return AaoPoint(exps, theta)

    @property
    def K(self):
        return len(self.experiments)


@dataclass
class ExperimentResidual(_Vector):
    w: np.ndarray
    h0: np.ndarray
    obs: np.ndarray
    _blocks = ("w", "h0", "obs")


@dataclass
class Residual:
    experiments: list

    def __add__(self, other):
        return Residual([a + b for a, b in zip(self.experiments, other.experiments)])

    def __sub__(self, other):
        return Residual([a - b for a, b in zip(self.experiments, other.experiments)])

    def __mul__(self, alpha):
        return Residual([e * alpha for e in self.experiments])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def zeros_like(self):
        return Residual([e.zeros_like() for e in self.experiments])

    def flat(self):
        return np.concatenate([e.flat() for e in self.experiments])


@dataclass
class ObservationSet:
    """Per-experiment observation operators, noisy data and noise levels."""

    specs: list
    data: list
    deltas: list = None

    def __post_init__(self):
        if len(self.specs) != len(self.data):
            raise ValueError("one observation spec per data array")
        self.data = [np.asarray(d, dtype=float) for d in self.data]
        if self.deltas is None:
            self.deltas = [0.0] * len(self.data)

    @property
    def delta(self):
        """Total noise level over experiments (root sum of squares)."""
        return float(np.sqrt(np.sum(np.square(self.deltas))))


@dataclass
class Problem:
    """Everything the operator needs besides the iterate."""

    grid: Grid1D
    net: nn.NetSpec
    observations: ObservationSet
    h: KnownNonlinearity = field(default_factory=KnownNonlinearity)
    mode: str = "full"
    scale: float = 1.0

    def __post_init__(self):
        for spec, y in zip(self.observations.specs, self.observations.data):
            spec.check(self.grid)
            if y.shape != spec.shape(self.grid):
                raise ValueError(f"data shape {y.shape} != observation shape {spec.shape(self.grid)}")

    @property
    def K(self):
        return len(self.observations.specs)

    def with_data(self, data, deltas=None):
        obs = ObservationSet(list(self.observations.specs), list(data),
                             list(deltas) if deltas is not None else None)
        return replace(self, observations=obs)

    def scaled(self, factor):
        return replace(self, scale=self.scale * float(factor))

    def zero_point(self, theta=None):
        theta = np.zeros(self.net.n_params) if theta is None else np.asarray(theta, dtype=float)
        return AaoPoint([Experiment.zeros(self.grid) for _ in range(self.K)], theta)

    def check_point(self, x):
        g = self.grid
        if x.K != self.K:
            raise ValueError(f"point has {x.K} experiments, problem has {self.K}")
        if x.theta.shape != (self.net.n_params,):
            raise ValueError("theta length does not match the network")
        for e in x.experiments:
            if (e.c.shape != (g.n_x,) or e.u0.shape != (g.n_x,) or e.phi.shape != g.mid_shape
                    or e.u.shape != g.state_shape):
                raise ValueError("experiment fields do not match the grid")


# Inner products ------------------------------------------------------------

def inner_x(problem, a, b):
    """Block-sum inner product of the unknown space."""
    g = problem.grid
    total = 0.0
    for ea, eb in zip(a.experiments, b.experiments):
        total += inner("L2", g, ea.c, eb.c)
        total += inner("Wcal", g, ea.phi, eb.phi)
        total += inner("L2", g, ea.u0, eb.u0)
        total += inner("Vcal", g, ea.u, eb.u)
    return total + float(np.dot(a.theta, b.theta))


def inner_y(problem, r, s):
    """Block-sum inner product of the image space."""
    g = problem.grid
    total = 0.0
    for spec, ra, rb in zip(problem.observations.specs, r.experiments, s.experiments):
        total += inner("Wcal", g, ra.w, rb.w)
        total += inner("L2", g, ra.h0, rb.h0)
        total += inner("Ycal", g, ra.obs, rb.obs, obs=spec)
    return total


def norm_x(problem, a):
    return float(np.sqrt(max(inner_x(problem, a, a), 0.0)))


def norm_y(problem, r):
    return float(np.sqrt(max(inner_y(problem, r, r), 0.0)))


def block_norms_y(problem, r):
    """``(model, initial, observation)`` norms summed over experiments."""
    g = problem.grid
    parts = np.zeros(3)
    for spec, e in zip(problem.observations.specs, r.experiments):
        parts += [inner("Wcal", g, e.w, e.w), inner("L2", g, e.h0, e.h0),
                  inner("Ycal", g, e.obs, e.obs, obs=spec)]
    return np.sqrt(parts)


# Operator ------------------------------------------------------------------

def _midpoints(u):
    return 0.5 * (u[1:] + u[:-1])


def _stiff(grid, v):
    return stiffness_apply(grid, v)


def model_residual(x, problem):
    """Unscaled model residual ``w`` per experiment, without data."""
    g = problem.grid
    out = []
    for e in x.experiments:
        ubar = _midpoints(e.u)
        f_val = nn.net_eval(problem.net, x.theta, ubar)
        w = ((e.u[1:] - e.u[:-1]) / g.tau + _stiff(g, ubar) + e.c * ubar
             + problem.h.value(ubar) - f_val - e.phi)
        out.append(w)
    return out


def residual(x, problem, data=None):
    """``scale * (F(x) - y)``; ``data`` overrides the problem's observations."""
    problem.check_point(x)
    data = problem.observations.data if data is None else data
    try:
        with np.errstate(invalid="ignore", over="ignore"):
            ws = model_residual(x, problem)
    except nn.NetworkError as exc:
        raise OperatorError(f"network evaluation failed: {exc}") from exc
    parts = []
    for m, (e, w, spec, y) in enumerate(zip(x.experiments, ws, problem.observations.specs, data)):
        if not np.all(np.isfinite(w)):
            j, i = np.argwhere(~np.isfinite(w))[0]
            raise OperatorError(f"non-finite model residual at experiment {m}, cell {j}, node {i}",
                                (m, int(j), int(i)))
        obs = spec.apply(e.u) - y
        parts.append(ExperimentResidual(w, e.u[0] - e.u0, obs) * problem.scale)
    return Residual(parts)


def apply_jacobian(x, problem, dx):
    """Directional derivative ``F'(x) dx`` (scaled like ``residual``)."""
    g = problem.grid
    parts = []
    dtheta = dx.theta * problem.net.trainable_mask(problem.mode)
    for e, d, spec in zip(x.experiments, dx.experiments, problem.observations.specs):
        ubar = _midpoints(e.u)
        dubar = _midpoints(d.u)
        coef = e.c + problem.h.deriv(ubar) - nn.net_input_deriv(problem.net, x.theta, ubar)
        dw = ((d.u[1:] - d.u[:-1]) / g.tau + _stiff(g, dubar) + coef * dubar + d.c * ubar
              - nn.net_jvp(problem.net, x.theta, ubar, dtheta, problem.mode) - d.phi)
        parts.append(ExperimentResidual(dw, d.u[0] - d.u0, spec.apply(d.u)) * problem.scale)
    return Residual(parts)


def coordinate_adjoint(x, problem, r):
    """Coordinate gradient ``A^T G_Y r`` of ``dx -> <F'(x) dx, r>_Y``."""
    g = problem.grid
    exps = []
    gtheta = np.zeros(problem.net.n_params)
    for e, rr, spec in zip(x.experiments, r.experiments, problem.observations.specs):
        q = gram_apply("Wcal", g, rr.w)
        qh = gram_apply("L2", g, rr.h0)
        qo = gram_apply("Ycal", g, rr.obs, obs=spec)
        ubar = _midpoints(e.u)
        coef = e.c + problem.h.deriv(ubar) - nn.net_input_deriv(problem.net, x.theta, ubar)
        s = _stiff(g, q) + coef * q
        gu = spec.adjoint(qo, g)
        gu[:-1] += 0.5 * s - q / g.tau
        gu[1:] += 0.5 * s + q / g.tau
        gu[0] += qh
        exps.append(Experiment(c=np.sum(q * ubar, axis=0), phi=-q, u0=-qh, u=gu))
        gtheta -= nn.net_vjp(problem.net, x.theta, ubar, q, problem.mode)
    return AaoPoint(exps, gtheta) * problem.scale


def riesz_x(problem, gcoord):
    """Map a coordinate gradient to its representer in the unknown space."""
    grid = problem.grid
    exps = [Experiment(c=gram_solve("L2", grid, e.c), phi=gram_solve("Wcal", grid, e.phi),
                       u0=gram_solve("L2", grid, e.u0), u=gram_solve("Vcal", grid, e.u))
            for e in gcoord.experiments]
    return AaoPoint(exps, gcoord.theta.copy())


def gram_x(problem, v):
    """Inverse of ``riesz_x``: coordinate functional of a point."""
    grid = problem.grid
    exps = [Experiment(c=gram_apply("L2", grid, e.c), phi=gram_apply("Wcal", grid, e.phi),
                       u0=gram_apply("L2", grid, e.u0), u=gram_apply("Vcal", grid, e.u))
            for e in v.experiments]
    return AaoPoint(exps, v.theta.copy())


def hilbert_adjoint(x, problem, r):
    """Hilbert-space adjoint ``F'(x)^* r`` in the unknown-space inner product.

    The state block solves the ``Vcal`` Gram system, the discrete two-point
    problem in time.
    """
    return riesz_x(problem, coordinate_adjoint(x, problem, r))


def _random_direction(problem, rng, like):
    v = like.unflat(rng.standard_normal(like.flat().size))
    v.theta = v.theta * problem.net.trainable_mask(problem.mode)
    return v


def operator_norm_estimate(x, problem, iters=50, seed=0, max_restarts=3):
    """Power iteration for ``||F'(x)||`` between the unknown and image spaces.

    Returns ``(estimate, previous_estimate)``; the gap between them indicates
    convergence.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    for attempt in range(max_restarts + 1):
        rng = np.random.default_rng(seed + 7919 * attempt)
        v = _random_direction(problem, rng, x)
        nv = norm_x(problem, v)
        v = v * (1.0 / nv)
        est = prev = 0.0
        broke = False
        for _ in range(iters):
            Av = apply_jacobian(x, problem, v)
            w = hilbert_adjoint(x, problem, Av)
            prev, est = est, np.sqrt(max(inner_y(problem, Av, Av), 0.0))
            nw = norm_x(problem, w)
            if nw == 0.0 or not np.isfinite(nw):
                broke = True
                break
            v = w * (1.0 / nw)
        if not broke or est > 0.0:
            return float(est), float(prev)
    return 0.0, 0.0


@dataclass
class ScalingRecord:
    target: float
    norm_estimate: float
    factor: float
    total_scale: float

    def to_dict(self):
        return dict(self.__dict__)


def scale_operator(x, problem, target=0.9 * np.sqrt(2.0), iters=50, seed=0):
    """Rescale the residual so that ``||F'(x)|| == target``.

    Returns ``(scaled_problem, record)``. Scaling composes multiplicatively.
    """
    if not 0.0 < target <= np.sqrt(2.0) + 1e-15:
        raise ValueError(f"target must lie in (0, sqrt(2)], got {target}")
    est, _ = operator_norm_estimate(x, problem, iters=iters, seed=seed)
    if est <= 0.0:
        raise OperatorError("operator norm estimate is zero; cannot scale")
    factor = target / est
    scaled = problem.scaled(factor)
    return scaled, ScalingRecord(float(target), float(est), float(factor), float(scaled.scale))

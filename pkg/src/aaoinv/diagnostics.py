"""Manufactured ground truths, noise injection and empirical hypothesis checks."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import network as nn
from .discretization import Grid1D, ObsSpec, inner, norm, stiffness_apply
from .operator import (
    AaoPoint, Experiment, KnownNonlinearity, ObservationSet, Problem, apply_jacobian,
    coordinate_adjoint, hilbert_adjoint, inner_x, inner_y, norm_x, norm_y,
    operator_norm_estimate, residual,
)

log = logging.getLogger(__name__)

FIT_RMS_WARN = 1e-3


# Catalogues ----------------------------------------------------------------

def _state(kind, params, x, t):
    X, Tt = np.meshgrid(x, t)
    base = np.sin(np.pi * X)
    if kind == "sin_linear":
        return base * (1.0 + params.get("a", 0.5) * Tt)
    if kind == "sin_exp":
        return base * np.exp(-params.get("b", 1.0) * Tt)
    raise ValueError(f"unknown state {kind!r}")


def _potential(kind, params, x):
    if kind == "constant":
        return np.full_like(x, params.get("value", 1.0))
    if kind == "parabola":
        return params.get("base", 1.0) + params.get("amp", 1.0) * x * (1.0 - x)
    if kind == "bump":
        return params.get("base", 1.0) + params.get("amp", 1.0) * np.exp(-((x - 0.5) / 0.15) ** 2)
    raise ValueError(f"unknown potential {kind!r}")


def f_dagger_fn(kind):
    if kind == "cubic":
        return lambda s: s - s**3
    if kind == "sine":
        return lambda s: np.sin(2.0 * s)
    if kind == "zero":
        return np.zeros_like
    raise ValueError(f"unknown nonlinearity {kind!r}")


@dataclass
class ManufacturedSpec:
    """Symbolic ground truth.

    ``experiments`` holds one dict per experiment with optional overrides of
    ``u_params`` and ``c_params``; all experiments share ``f_dagger``.
    """

    u_dagger: str = "sin_linear"
    u_params: dict = field(default_factory=lambda: {"a": 0.5})
    c_dagger: str = "parabola"
    c_params: dict = field(default_factory=lambda: {"base": 1.0, "amp": 1.0})
    f_dagger: str = "cubic"
    h: KnownNonlinearity = field(default_factory=lambda: KnownNonlinearity("cubic"))
    experiments: list = field(default_factory=lambda: [{}])
    width: int = 16
    activation: str = "tanh"
    fit_samples: int = 200
    seed: int = 0
    obs: ObsSpec = field(default_factory=ObsSpec)

    @property
    def K(self):
        return len(self.experiments)

    def to_dict(self):
        return {
            "u_dagger": self.u_dagger, "u_params": dict(self.u_params),
            "c_dagger": self.c_dagger, "c_params": dict(self.c_params),
            "f_dagger": self.f_dagger, "h": self.h.to_dict(),
            "experiments": [dict(e) for e in self.experiments], "width": self.width,
            "activation": self.activation, "fit_samples": self.fit_samples,
            "seed": self.seed, "obs": self.obs.to_dict(),
        }

    @classmethod
    def from_dict(cls, d, grid=None):
        d = dict(d)
        if "h" in d:
            d["h"] = KnownNonlinearity.from_dict(d["h"])
        if "obs" in d:
            d["obs"] = ObsSpec.from_dict(d["obs"], grid)
        return cls(**d)


@dataclass
class GroundTruth:
    """Exact discrete solution plus the symbolic quantities it came from."""

    point: AaoPoint
    f_dagger: object
    range_interval: tuple
    fit_rms: float
    warnings: list = field(default_factory=list)

    def err_f_sup(self, net, theta, n_samples=201):
        s = nn.sample_lattice(self.range_interval, n_samples)
        return float(np.max(np.abs(nn.net_eval(net, theta, s) - self.f_dagger(s))))


def manufactured_problem(spec, grid):
    """Build a problem whose discrete residual vanishes at the returned truth.

    ``theta`` is a linear-head fit of the symbolic nonlinearity on the range of
    the states; the source is defined cellwise so that the model residual is
    zero for that fitted network.
    """
    states = [_state(spec.u_dagger, {**spec.u_params, **e.get("u_params", {})}, grid.x, grid.t)
              for e in spec.experiments]
    lo = min(float(u.min()) for u in states)
    hi = max(float(u.max()) for u in states)
    interval = (lo, hi)
    f_sym = f_dagger_fn(spec.f_dagger)
    net = nn.NetSpec.single_hidden(spec.width, spec.activation)
    s = np.linspace(lo, hi, spec.fit_samples)
    fit = nn.net_fit(net, (s, f_sym(s)), mode="linear_head", seed=spec.seed, interval=interval)
    rms = float(np.sqrt(fit.loss))
    warnings = []
    if rms > FIT_RMS_WARN:
        warnings.append(f"fit RMS {rms:.3e} above {FIT_RMS_WARN:g}")
        log.warning(warnings[-1])
    theta = fit.theta
    exps = []
    for e, u in zip(spec.experiments, states):
        c = _potential(spec.c_dagger, {**spec.c_params, **e.get("c_params", {})}, grid.x)
        ubar = 0.5 * (u[1:] + u[:-1])
        phi = ((u[1:] - u[:-1]) / grid.tau + stiffness_apply(grid, ubar) + c * ubar
               + spec.h.value(ubar) - nn.net_eval(net, theta, ubar))
        exps.append(Experiment(c=c, phi=phi, u0=u[0].copy(), u=u))
    truth = AaoPoint(exps, theta)
    obs_specs = [spec.obs for _ in exps]
    data = [o.apply(e.u) for o, e in zip(obs_specs, exps)]
    problem = Problem(grid, net, ObservationSet(obs_specs, data), spec.h, mode="full")
    return problem, GroundTruth(truth, f_sym, interval, rms, warnings)


def add_noise(problem, y, delta, seed, spec=None):
    """``y + delta * e / ||e||_Y`` with ``e`` standard normal from ``seed``."""
    if delta < 0:
        raise ValueError("noise level must be nonnegative")
    y = np.asarray(y, dtype=float)
    if delta == 0:
        return y.copy()
    spec = spec or problem.observations.specs[0]
    rng = np.random.default_rng(seed)
    while True:
        e = rng.standard_normal(y.shape)
        ne = norm("Ycal", problem.grid, e, obs=spec)
        if ne > 0:
            break
    return y + (delta / ne) * e


def noisy_problem(problem, delta, seed):
    """Perturb every experiment's data; ``delta`` is the per-experiment level."""
    data = [add_noise(problem, y, delta, seed + 1000 * m, spec)
            for m, (y, spec) in enumerate(zip(problem.observations.data,
                                              problem.observations.specs))]
    return problem.with_data(data, [float(delta)] * problem.K)


def initial_point(problem, kind="data", interval=(-1.0, 1.0), seed=0):
    """Starting iterate for the solvers.

    ``data`` copies the state and initial state from full observations (zero
    otherwise); ``zero`` leaves them at zero. Potential and source start at
    zero; the network comes from ``init_features`` on ``interval`` (linear
    head) or ``init_params`` (full).
    """
    if kind not in ("data", "zero"):
        raise ValueError(f"unknown initial point {kind!r}")
    if problem.mode == "linear_head":
        theta = nn.init_features(problem.net, interval, seed)
    else:
        theta = nn.init_params(problem.net, seed)
    x = problem.zero_point(theta)
    if kind == "data":
        for e, spec, y in zip(x.experiments, problem.observations.specs, problem.observations.data):
            if spec.kind == "full":
                e.u = y.copy()
                e.u0 = y[0].copy()
    return x


def perturbed_truth(truth, grid, amplitude=0.05):
    """True point with ``amplitude * sin(pi x) * t`` added to every state."""
    x = truth.point.copy() if hasattr(truth, "point") else truth.copy()
    for e in x.experiments:
        e.u = e.u + smooth_state_perturbation(grid, amplitude)
    return x


def smooth_state_perturbation(grid, amplitude=0.05):
    """``amplitude * sin(pi x) * t``: vanishes at t = 0 and on the boundary."""
    return amplitude * np.sin(np.pi * grid.x)[None, :] * grid.t[:, None]


# Random elements -------------------------------------------------------------

BLOCKS = ("c", "phi", "u0", "u", "theta")


def random_direction(problem, like, rng, blocks=BLOCKS):
    """Random point with each selected block of unit norm, total norm one."""
    out = like.zeros_like()
    mask = problem.net.trainable_mask(problem.mode)
    parts = 0
    for e in out.experiments:
        for b in ("c", "phi", "u0", "u"):
            if b in blocks:
                v = rng.standard_normal(getattr(e, b).shape)
                tag = {"c": "L2", "phi": "Wcal", "u0": "L2", "u": "Vcal"}[b]
                setattr(e, b, v / norm(tag, problem.grid, v))
                parts += 1
    if "theta" in blocks and mask.any():
        v = rng.standard_normal(out.theta.shape) * mask
        out.theta = v / np.linalg.norm(v)
        parts += 1
    if parts == 0:
        raise ValueError("no blocks selected")
    return out * (1.0 / np.sqrt(parts))


def random_residual(problem, rng):
    parts = []
    g = problem.grid
    from .operator import ExperimentResidual, Residual
    for spec in problem.observations.specs:
        parts.append(ExperimentResidual(rng.standard_normal(g.mid_shape),
                                        rng.standard_normal(g.n_x),
                                        rng.standard_normal(spec.shape(g))))
    return Residual(parts)


# Checks ----------------------------------------------------------------------

def adjoint_test(problem, x, trials=50, seed=0, variant="hilbert", adjoint=None):
    """Largest relative gap in ``<F'dx, r>_Y = <dx, F'^* r>_X`` over random pairs.

    ``variant="coordinate"`` pairs the coordinate adjoint with the Euclidean
    product instead. ``adjoint`` overrides the adjoint under test.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        dx = random_direction(problem, x, rng)
        r = random_residual(problem, rng)
        Jdx = apply_jacobian(x, problem, dx)
        lhs = inner_y(problem, Jdx, r)
        if adjoint is not None:
            rhs = inner_x(problem, dx, adjoint(x, problem, r))
        elif variant == "hilbert":
            rhs = inner_x(problem, dx, hilbert_adjoint(x, problem, r))
        elif variant == "coordinate":
            rhs = float(np.dot(dx.flat(), coordinate_adjoint(x, problem, r).flat()))
        else:
            raise ValueError(f"unknown variant {variant!r}")
        gap = abs(lhs - rhs) / (1.0 + norm_y(problem, Jdx) * norm_y(problem, r))
        worst = max(worst, gap)
    return worst


def jacobian_fd_check(problem, x, directions=20, eps=1e-6, seed=0):
    """Worst relative error of central differences against ``apply_jacobian``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(directions):
        dx = random_direction(problem, x, rng)
        J = apply_jacobian(x, problem, dx)
        fd = (residual(x + dx * eps, problem) - residual(x - dx * eps, problem)) * (0.5 / eps)
        worst = max(worst, norm_y(problem, fd - J) / norm_y(problem, J))
    return worst


def gradient_fd_check(problem, x, cfg, directions=20, eps=1e-6, seed=0):
    """Worst relative error of the Tikhonov gradient against central differences."""
    from .tikhonov import tikhonov_gradient, tikhonov_value
    rng = np.random.default_rng(seed)
    grad = tikhonov_gradient(x, problem, cfg)
    worst = 0.0
    for _ in range(directions):
        dx = random_direction(problem, x, rng)
        fd = (tikhonov_value(x + dx * eps, problem, cfg)
              - tikhonov_value(x - dx * eps, problem, cfg)) / (2 * eps)
        an = inner_x(problem, grad, dx)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-300))
    return worst


def net_jacobian_check(n_nets=100, seed=0, eps=1e-6):
    """Worst relative error of network derivatives against central differences.

    Covers the parameter gradient, the input derivative and the parameter
    gradient of the input derivative, for random small tanh/softplus nets.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        depth = int(rng.integers(1, 3))
        widths = (1,) + tuple(int(w) for w in rng.integers(2, 6, size=depth)) + (1,)
        spec = nn.NetSpec(widths, str(rng.choice(["tanh", "softplus"])))
        theta = rng.normal(scale=0.8, size=spec.n_params)
        s = float(rng.uniform(-1.5, 1.5))
        d = rng.standard_normal(spec.n_params)
        d /= np.linalg.norm(d)
        pairs = [
            (nn.net_param_jacobian(spec, theta, s) @ d,
             (nn.net_eval(spec, theta + eps * d, s) - nn.net_eval(spec, theta - eps * d, s)) / (2 * eps)),
            (nn.net_param_deriv_jacobian(spec, theta, s) @ d,
             (nn.net_input_deriv(spec, theta + eps * d, s) - nn.net_input_deriv(spec, theta - eps * d, s)) / (2 * eps)),
            (nn.net_input_deriv(spec, theta, s),
             (nn.net_eval(spec, theta, s + eps) - nn.net_eval(spec, theta, s - eps)) / (2 * eps)),
        ]
        for an, fd in pairs:
            worst = max(worst, abs(an - fd) / max(abs(an), 1e-3))
    return worst


@dataclass
class TccResult:
    c_tc: float
    K_R: float
    mu_R: float
    M_R: float
    skipped: int
    ratios: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {"c_tc": self.c_tc, "K_R": self.K_R, "mu_R": self.mu_R, "M_R": self.M_R,
                "skipped": self.skipped}


def _ball_pairs(problem, center, R, samples, seed, blocks):
    """Pairs drawn uniformly in radius within ``B_R(center)``; same draws for every ``R``."""
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        d1 = random_direction(problem, center, rng, blocks)
        d2 = random_direction(problem, center, rng, blocks)
        a, b = rng.uniform(0.0, 1.0, size=2)
        yield center + d1 * (R * a), center + d2 * (R * b)


def tcc_estimate(problem, center, R, samples=200, seed=0, M_R=None, blocks=BLOCKS):
    """Sampled tangential-cone constant in ``B_R(center)``.

    ``c_tc`` is the largest ``||F(x) - F(x2) - F'(x)(x - x2)|| / ||F(x) - F(x2)||``;
    ``K_R = 1 + c_tc`` and ``mu_R = 1 - c_tc^2 + (1 - c_tc)^2 - M_R``, with
    ``M_R`` estimated by power iteration at ``center`` unless given.
    """
    if not R > 0 or samples < 2:
        raise ValueError("need R > 0 and at least two samples")
    ratios = []
    skipped = 0
    for x, x2 in _ball_pairs(problem, center, R, samples, seed, blocks):
        Fx = residual(x, problem)
        diff = Fx - residual(x2, problem)
        den = norm_y(problem, diff)
        if den < 1e-12:
            skipped += 1
            continue
        rem = diff - apply_jacobian(x, problem, x - x2)
        ratios.append(norm_y(problem, rem) / den)
    if not ratios:
        raise ValueError("all sampled pairs were degenerate")
    c = float(max(ratios))
    if M_R is None:
        M_R, _ = operator_norm_estimate(center, problem, iters=50, seed=seed)
    return TccResult(c, 1.0 + c, 1.0 - c**2 + (1.0 - c) ** 2 - M_R, float(M_R), skipped,
                     np.array(ratios))


def tcc_ladder(problem, center, radii, samples=200, seed=0, M_R=None, blocks=BLOCKS):
    """Estimates over increasing radii; each reports the max over all balls so far.

    The balls are nested, so samples from a smaller ball are admissible for a
    larger one and the reported constants are nondecreasing.
    """
    radii = list(radii)
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must increase")
    if M_R is None:
        M_R, _ = operator_norm_estimate(center, problem, iters=50, seed=seed)
    out = []
    running = 0.0
    for R in radii:
        res = tcc_estimate(problem, center, R, samples, seed, M_R, blocks)
        running = max(running, res.c_tc)
        c = running
        out.append(TccResult(c, 1.0 + c, 1.0 - c**2 + (1.0 - c) ** 2 - M_R, M_R, res.skipped,
                             res.ratios))
    return out


def lipschitz_sample(problem, center, R, samples=50, seed=0, z=None):
    """Largest ``||G(x) - G(x2)||_X / ||x - x2||_X`` with ``G(x) = F'(x)^*(F(x) - z)``."""
    def G(x):
        r = residual(x, problem, data=z)
        return hilbert_adjoint(x, problem, r)

    worst = 0.0
    for x, x2 in _ball_pairs(problem, center, R, samples, seed, BLOCKS):
        dist = norm_x(problem, x - x2)
        if dist < 1e-14:
            continue
        worst = max(worst, norm_x(problem, G(x) - G(x2)) / dist)
    return worst


# Convergence study -----------------------------------------------------------

STUDY_COLUMNS = ("method", "delta", "gamma_or_kstar", "width", "err_c", "err_u", "err_f_sup",
                 "res_final", "seconds", "seed", "status")


def omega_y(interval, margin=0.5):
    """Inflated sampling interval for the network penalty and feature placement."""
    return (interval[0] - margin, interval[1] + margin)


@dataclass
class StudyConfig:
    """Everything a convergence study needs; every cell is a pure function of it.

    ``timing`` is ``wall`` (measured seconds in the table) or ``omit``
    (``nan`` in the table, measured seconds kept in the cell records only).
    """

    grid: Grid1D
    manufactured: ManufacturedSpec = field(default_factory=ManufacturedSpec)
    deltas: tuple = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    methods: tuple = ("tikhonov", "landweber")
    seed: int = 0
    mode: str = "linear_head"
    width_ladder: tuple = (4, 8, 16, 32)
    c_gamma: float = 1.0
    C: float = 1.0
    tikhonov: dict = field(default_factory=dict)
    stopping: dict = field(default_factory=lambda: {"kind": "apriori", "max_iters": 5000})
    scale_target: float = 0.9 * np.sqrt(2.0)
    omega_margin: float = 0.5
    timing: str = "wall"

    def __post_init__(self):
        self.deltas = tuple(float(d) for d in self.deltas)
        if not self.deltas:
            raise ValueError("delta ladder is empty")
        if any(b >= a for a, b in zip(self.deltas, self.deltas[1:])) or self.deltas[-1] <= 0:
            raise ValueError("delta ladder must be positive and strictly decreasing")
        self.methods = tuple(self.methods)
        for m in self.methods:
            if m not in ("tikhonov", "landweber"):
                raise ValueError(f"unknown method {m!r}")
        if self.timing not in ("wall", "omit"):
            raise ValueError(f"unknown timing mode {self.timing!r}")
        self.width_ladder = tuple(int(w) for w in self.width_ladder)

    def cells(self):
        return [(m, d) for m in self.methods for d in self.deltas]

    def cell_seed(self, index):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(index),))
        return int(ss.generate_state(1, dtype=np.uint32)[0])

    def to_dict(self):
        return {"grid": self.grid.to_dict(), "manufactured": self.manufactured.to_dict(),
                "deltas": list(self.deltas), "methods": list(self.methods), "seed": self.seed,
                "mode": self.mode, "width_ladder": list(self.width_ladder),
                "c_gamma": self.c_gamma, "C": self.C, "tikhonov": dict(self.tikhonov),
                "stopping": dict(self.stopping), "scale_target": self.scale_target,
                "omega_margin": self.omega_margin, "timing": self.timing}


def ladder_fits(truth, ladder, activation="tanh", seed=0, samples=200):
    """Linear-head fits of the true nonlinearity for each width in ``ladder``."""
    s = np.linspace(*truth.range_interval, samples)
    out = {}
    for w in ladder:
        net = nn.NetSpec.single_hidden(w, activation)
        fit = nn.net_fit(net, (s, truth.f_dagger(s)), mode="linear_head", seed=seed,
                         interval=truth.range_interval)
        out[w] = (net, fit.theta)
    return out


def m_n_proxy(problem, truth, net, theta):
    """Residual of the true state and coefficients with a fitted network (``d_N`` proxy)."""
    from dataclasses import replace
    x = truth.point.copy()
    x.theta = np.asarray(theta, dtype=float)
    return norm_y(replace(problem, net=net), residual(x, replace(problem, net=net)))


def _errors_vs_truth(problem, x, truth):
    g = problem.grid
    err_c = float(np.sqrt(sum(norm("L2", g, a.c - b.c) ** 2
                              for a, b in zip(x.experiments, truth.point.experiments))))
    err_u = float(np.sqrt(sum(norm("Vcal", g, a.u - b.u) ** 2
                              for a, b in zip(x.experiments, truth.point.experiments))))
    return err_c, err_u, truth.err_f_sup(problem.net, x.theta)


def _cell_start(problem, truth, net, seed):
    from dataclasses import replace
    p = replace(problem, net=net)
    return p, initial_point(p, "data", truth.range_interval, seed)


def run_study_cell(cfg, index):
    """Solve one (method, delta) cell; returns a record dict with the table columns.

    Failures are caught and recorded with ``status`` and ``message``; the
    numeric columns are then ``nan``.
    """
    from dataclasses import replace
    from .landweber import LandweberAbort, StoppingRule, run_landweber
    from .tikhonov import (LineSearchError, ParamRule, TikhonovConfig, minimize_tikhonov,
                           param_rule, q_n_proxy)

    method, delta = cfg.cells()[index]
    seed = cfg.cell_seed(index)
    rec = {"method": method, "delta": delta, "gamma_or_kstar": float("nan"), "width": -1,
           "err_c": float("nan"), "err_u": float("nan"), "err_f_sup": float("nan"),
           "res_final": float("nan"), "seconds": float("nan"), "seed": seed,
           "index": index, "status": "ok", "message": "", "warnings": [], "constants": {}}
    start = time.perf_counter()
    try:
        base, truth = manufactured_problem(cfg.manufactured, cfg.grid)
        base = replace(base, mode=cfg.mode)
        noisy = noisy_problem(base, delta, seed)
        act = cfg.manufactured.activation
        fits = ladder_fits(truth, cfg.width_ladder, act, cfg.manufactured.seed)
        margin = omega_y(truth.range_interval, cfg.omega_margin)
        if method == "tikhonov":
            tk = dict(cfg.tikhonov)
            tk.setdefault("interval", margin)
            rule = ParamRule(cfg.c_gamma, cfg.width_ladder, cfg.C)
            gamma = rule.c_gamma * delta
            f_s = np.linspace(*truth.range_interval, cfg.manufactured.fit_samples)
            q = q_n_proxy((f_s, truth.f_dagger(f_s)), cfg.width_ladder, truth.point, noisy,
                          gamma, tk.get("r2_kind", "hyper_l2"), margin,
                          tk.get("n_samples", 101), act, cfg.mode, cfg.manufactured.seed)
            gamma, width, warn = param_rule(delta, rule, q.__getitem__)
            if warn:
                rec["warnings"].append(warn)
            tcfg = TikhonovConfig(**{**tk, "gamma": gamma, "interval": tuple(tk["interval"])})
            p, x0 = _cell_start(noisy, truth, fits[width][0], cfg.manufactured.seed)
            x, trace = minimize_tikhonov(x0, p, tcfg)
            rec.update(gamma_or_kstar=gamma, width=width)
            rec["constants"] = {"q_hat": {str(k): v for k, v in q.items()},
                                "tikhonov": tcfg.to_dict(), "stop": trace.status}
        else:
            m_n = {w: m_n_proxy(base, truth, *fits[w]) for w in cfg.width_ladder}
            width = next((w for w in cfg.width_ladder if m_n[w] <= cfg.C * delta),
                         cfg.width_ladder[-1])
            if m_n[width] > cfg.C * delta:
                rec["warnings"].append(
                    f"no ladder width meets m_N <= C*delta at delta={delta:g}; using {width}")
            p, x0 = _cell_start(noisy, truth, fits[width][0], cfg.manufactured.seed)
            from .operator import scale_operator
            ps, srec = scale_operator(x0, p, target=cfg.scale_target, seed=seed)
            stop = {**cfg.stopping, "M_R": cfg.scale_target, "m_N": m_n[width] * ps.scale}
            rule = StoppingRule(**stop)
            x, trace = run_landweber(x0, ps, rule=rule, truth=truth,
                                     record_every=max(1, rule.max_iters))
            rec.update(gamma_or_kstar=float(trace.rows[-1]["k"]), width=width)
            rec["constants"] = {"m_N": {str(k): v for k, v in m_n.items()},
                                "scaling": srec.to_dict(), "stopping": rule.to_dict(),
                                "stop": trace.status}
        err_c, err_u, err_f = _errors_vs_truth(p, x, truth)
        r = residual(x, p)
        rec.update(err_c=err_c, err_u=err_u, err_f_sup=err_f, res_final=norm_y(p, r))
    except (ArithmeticError, ValueError, LineSearchError, LandweberAbort) as exc:
        rec["status"], rec["message"] = "failed", f"{type(exc).__name__}: {exc}"
        log.warning("study cell %d failed: %s", index, exc)
    rec["wall_seconds"] = time.perf_counter() - start
    rec["seconds"] = rec["wall_seconds"] if cfg.timing == "wall" else float("nan")
    return rec


def study_csv(records):
    import csv
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STUDY_COLUMNS)
    for r in sorted(records, key=lambda r: r["index"]):
        w.writerow([r[c] if isinstance(r[c], (str, int)) else repr(float(r[c]))
                    for c in STUDY_COLUMNS])
    return buf.getvalue()


def convergence_study(cfg, parallel=1, done=None, on_cell=None):
    """Run every (method, delta) cell and return the records in cell order.

    ``done`` maps cell index to an already computed record (resumption);
    ``on_cell`` is called with each fresh record as it completes.
    """
    done = dict(done or {})
    todo = [i for i in range(len(cfg.cells())) if i not in done]
    if parallel > 1 and len(todo) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futs = {i: pool.submit(run_study_cell, cfg, i) for i in todo}
            for i, fut in futs.items():
                done[i] = fut.result()
                if on_cell:
                    on_cell(done[i])
    else:
        for i in todo:
            done[i] = run_study_cell(cfg, i)
            if on_cell:
                on_cell(done[i])
    return [done[i] for i in sorted(done)]


def trend_slope(deltas, errs):
    """Least-squares slope of ``log err`` against ``log delta``."""
    return float(np.polyfit(np.log(deltas), np.log(errs), 1)[0])

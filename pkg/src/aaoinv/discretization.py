"""Uniform space-time grid on (0, 1) x (0, T) and its discrete Hilbert spaces.

Fields are plain float64 arrays:

* space fields: shape ``(n_x,)``, interior nodes, zero Dirichlet data implied;
* state fields (``Vcal``): shape ``(n_t + 1, n_x)``, one row per time node;
* model residuals and sources (``Wcal``): shape ``(n_t, n_x)``, one row per
  time-cell midpoint.

Every inner product is written as ``a @ G @ b`` for a symmetric positive
definite Gram matrix ``G``; ``gram_apply`` multiplies by ``G`` and
``gram_solve`` inverts it. The ``Vcal`` Gram couples neighbouring time
levels. It is diagonalised in space by the orthonormal sine transform (the
eigenbasis of the Dirichlet Laplacian), which leaves one tridiagonal system in
time per sine mode.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import fft

from . import kernels


class SpaceTag(str, Enum):
    L2 = "L2"
    V = "V"
    Vstar = "Vstar"
    Wcal = "Wcal"
    Vcal = "Vcal"
    Ycal = "Ycal"


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid with ``n_x`` interior nodes and ``n_t`` time steps."""

    n_x: int
    n_t: int
    T: float = 1.0

    def __post_init__(self):
        if int(self.n_x) < 2 or int(self.n_t) < 2:
            raise ValueError(f"need n_x >= 2 and n_t >= 2, got {self.n_x}, {self.n_t}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"final time must be positive, got {self.T}")
        object.__setattr__(self, "n_x", int(self.n_x))
        object.__setattr__(self, "n_t", int(self.n_t))
        object.__setattr__(self, "T", float(self.T))

    @property
    def h_x(self):
        return 1.0 / (self.n_x + 1)

    @property
    def tau(self):
        return self.T / self.n_t

    @property
    def x(self):
        return np.arange(1, self.n_x + 1) * self.h_x

    @property
    def t(self):
        return np.arange(self.n_t + 1) * self.tau

    @property
    def t_mid(self):
        return (np.arange(self.n_t) + 0.5) * self.tau

    @property
    def state_shape(self):
        return (self.n_t + 1, self.n_x)

    @property
    def mid_shape(self):
        return (self.n_t, self.n_x)

    def eigenvalues(self):
        """Eigenvalues of the Dirichlet second difference, sine modes 1..n_x."""
        k = np.arange(1, self.n_x + 1)
        return (2.0 / self.h_x**2) * (1.0 - np.cos(k * np.pi * self.h_x))

    def to_dict(self):
        return {"n_x": self.n_x, "n_t": self.n_t, "T": self.T}


@dataclass(frozen=True)
class ObsSpec:
    """Observation operator ``M``.

    ``kind`` is ``"full"`` (every node, trapezoid weights in time),
    ``"mask"`` (boolean mask over the state array, weight ``h_x * tau`` per
    observed entry) or ``"final_time"`` (the last time row, ``L2`` weights).
    """

    kind: str = "full"
    mask: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("full", "mask", "final_time"):
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.kind == "mask":
            if self.mask is None:
                raise ValueError("mask observations need a mask")
            m = np.asarray(self.mask, dtype=bool)
            if not m.any():
                raise ValueError("observation mask is empty")
            object.__setattr__(self, "mask", m)

    def check(self, grid):
        if self.kind == "mask" and self.mask.shape != grid.state_shape:
            raise ValueError(f"mask shape {self.mask.shape} != state shape {grid.state_shape}")

    def apply(self, u):
        """``M u`` for a state array ``u`` of shape ``(n_t + 1, n_x)``."""
        if self.kind == "full":
            return np.array(u, dtype=float)
        if self.kind == "final_time":
            return np.array(u[-1], dtype=float)
        return np.asarray(u)[self.mask]

    def adjoint(self, y, grid):
        """Coordinate transpose ``M^T y`` back onto the state array."""
        if self.kind == "full":
            return np.array(y, dtype=float)
        out = np.zeros(grid.state_shape)
        if self.kind == "final_time":
            out[-1] = y
        else:
            out[self.mask] = y
        return out

    def shape(self, grid):
        if self.kind == "full":
            return grid.state_shape
        if self.kind == "final_time":
            return (grid.n_x,)
        return (int(self.mask.sum()),)

    def weights(self, grid):
        """Diagonal Gram of the observation space."""
        h, tau = grid.h_x, grid.tau
        if self.kind == "full":
            w = np.full(grid.state_shape, h * tau)
            w[0] *= 0.5
            w[-1] *= 0.5
            return w
        if self.kind == "final_time":
            return np.full(grid.n_x, h)
        return np.full(int(self.mask.sum()), h * tau)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "mask":
            d["mask"] = np.argwhere(self.mask).tolist()
        return d

    @classmethod
    def from_dict(cls, d, grid=None):
        kind = d.get("kind", "full")
        if kind != "mask":
            return cls(kind)
        if grid is None:
            raise ValueError("mask observations need the grid to rebuild the mask")
        m = np.zeros(grid.state_shape, dtype=bool)
        idx = np.asarray(d["mask"], dtype=int).reshape(-1, 2)
        m[idx[:, 0], idx[:, 1]] = True
        return cls("mask", m)


def _check_space(grid, v):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != grid.n_x:
        raise ValueError(f"field has {v.shape[-1]} nodes, grid has {grid.n_x}")
    return v


def stiffness_apply(grid, v):
    """``D_V v``: Dirichlet second difference, along the last axis."""
    return kernels.dirichlet_laplacian(_check_space(grid, v), grid.h_x)


def riesz_solve(grid, w):
    """``I_V w``: solves ``D_V z = w`` along the last axis (Thomas algorithm)."""
    w = _check_space(grid, w)
    s = 1.0 / grid.h_x**2
    n = grid.n_x
    lower = np.full(n, -s)
    upper = np.full(n, -s)
    diag = np.full(n, 2.0 * s)
    return kernels.thomas_solve(lower, diag, upper, w)


def _time_diff(a, tau):
    return (a[1:] - a[:-1]) / tau


def _time_avg(a):
    return 0.5 * (a[1:] + a[:-1])


def _expect_shape(a, shape, tag):
    a = np.asarray(a, dtype=float)
    if a.shape != tuple(shape):
        raise ValueError(f"{tag} field has shape {a.shape}, expected {tuple(shape)}")
    return a


def _shape_for(tag, grid, obs):
    tag = SpaceTag(tag)
    if tag in (SpaceTag.L2, SpaceTag.V, SpaceTag.Vstar):
        return (grid.n_x,)
    if tag is SpaceTag.Wcal:
        return grid.mid_shape
    if tag is SpaceTag.Vcal:
        return grid.state_shape
    if obs is None:
        raise ValueError("Ycal inner product needs an ObsSpec")
    return obs.shape(grid)


def gram_apply(tag, grid, v, obs=None):
    """Multiply by the Gram matrix of ``inner(tag, ...)``."""
    tag = SpaceTag(tag)
    v = _expect_shape(v, _shape_for(tag, grid, obs), tag.value)
    h, tau = grid.h_x, grid.tau
    if tag is SpaceTag.L2:
        return h * v
    if tag is SpaceTag.V:
        return h * stiffness_apply(grid, v)
    if tag is SpaceTag.Vstar:
        return h * riesz_solve(grid, v)
    if tag is SpaceTag.Wcal:
        return tau * h * riesz_solve(grid, v)
    if tag is SpaceTag.Ycal:
        return obs.weights(grid) * v
    # Vcal: (1/tau) B^T (h I_V) B + tau A^T (h D_V) A with B, A the
    # difference and averaging maps from nodes to cells.
    z = (h / tau) * riesz_solve(grid, v[1:] - v[:-1])
    q = tau * h * stiffness_apply(grid, _time_avg(v))
    out = np.zeros_like(v)
    out[:-1] += 0.5 * q - z
    out[1:] += 0.5 * q + z
    return out


def inner(tag, grid, a, b, obs=None):
    """Discrete inner product of the space named by ``tag``."""
    tag = SpaceTag(tag)
    shape = _shape_for(tag, grid, obs)
    a = _expect_shape(a, shape, tag.value)
    b = _expect_shape(b, shape, tag.value)
    h, tau = grid.h_x, grid.tau
    if tag is SpaceTag.L2:
        return float(h * np.dot(a, b))
    if tag is SpaceTag.V:
        return float(h * np.dot(stiffness_apply(grid, a), b))
    if tag is SpaceTag.Vstar:
        return float(h * np.dot(riesz_solve(grid, a), b))
    if tag is SpaceTag.Wcal:
        return float(tau * h * np.sum(riesz_solve(grid, a) * b))
    if tag is SpaceTag.Ycal:
        return float(np.sum(obs.weights(grid) * a * b))
    da, db = _time_diff(a, tau), _time_diff(b, tau)
    ma, mb = _time_avg(a), _time_avg(b)
    dual = np.sum(riesz_solve(grid, da) * db)
    primal = np.sum(stiffness_apply(grid, ma) * mb)
    return float(tau * h * (dual + primal))


def norm(tag, grid, a, obs=None):
    return float(np.sqrt(max(inner(tag, grid, a, a, obs=obs), 0.0)))


def vcal_mode_coefficients(grid):
    """Tridiagonal time systems of the ``Vcal`` Gram, one per sine mode.

    Returns ``(lower, diag, upper)`` of shape ``(n_x, n_t + 1)``.
    """
    lam = grid.eigenvalues()[:, None]
    h, tau = grid.h_x, grid.tau
    n = grid.n_t + 1
    lap_diag = np.full(n, 2.0)
    lap_diag[[0, -1]] = 1.0
    avg_diag = np.full(n, 0.5)
    avg_diag[[0, -1]] = 0.25
    diag = h * (lap_diag[None, :] / (tau * lam) + tau * lam * avg_diag[None, :])
    off = h * (-1.0 / (tau * lam) + 0.25 * tau * lam) * np.ones((1, n))
    return off, diag, off


def sine_transform(a):
    """Orthonormal DST-I along the last axis (an involution)."""
    return fft.dst(np.asarray(a, dtype=float), type=1, norm="ortho", axis=-1)


def gram_solve(tag, grid, w, obs=None):
    """Return ``v`` with ``gram_apply(tag, v) == w``.

    ``w`` is a coordinate-space functional such as a raw gradient; ``v`` is
    its Riesz representer in the space named by ``tag``.
    """
    tag = SpaceTag(tag)
    w = _expect_shape(w, _shape_for(tag, grid, obs), tag.value)
    h, tau = grid.h_x, grid.tau
    if tag is SpaceTag.L2:
        return w / h
    if tag is SpaceTag.V:
        return riesz_solve(grid, w) / h
    if tag is SpaceTag.Vstar:
        return stiffness_apply(grid, w) / h
    if tag is SpaceTag.Wcal:
        return stiffness_apply(grid, w) / (tau * h)
    if tag is SpaceTag.Ycal:
        return w / obs.weights(grid)
    lower, diag, upper = vcal_mode_coefficients(grid)
    w_hat = sine_transform(w).T
    v_hat = kernels.thomas_solve(lower, diag, upper, w_hat)
    return sine_transform(v_hat.T)


def gram_matrix(tag, grid, obs=None):
    """Assemble the Gram matrix densely (small grids; used by checks)."""
    shape = _shape_for(tag, grid, obs)
    n = int(np.prod(shape))
    eye = np.eye(n)
    cols = [gram_apply(tag, grid, eye[k].reshape(shape), obs=obs).ravel() for k in range(n)]
    return np.array(cols).T

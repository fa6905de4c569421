"""Backend selection for the tridiagonal kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. ``set_backend`` switches explicitly (tests, benchmarks).
"""

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active = _BACKENDS.get("compiled", _fallback)


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def set_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    previous = get_backend()
    _active = _BACKENDS[name]
    return previous


def thomas_solve(lower, diag, upper, rhs):
    """Solve tridiagonal systems along the last axis of ``rhs``.

    Coefficient arrays broadcast against ``rhs``; ``rhs`` may be 1-D or 2-D.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    flat = rhs.reshape(-1, rhs.shape[-1])
    shape = flat.shape
    lo, di, up = (np.broadcast_to(np.asarray(c, dtype=np.float64), rhs.shape).reshape(shape)
                  for c in (lower, diag, upper))
    out = _active.thomas_solve(lo, di, up, np.ascontiguousarray(flat))
    return np.asarray(out).reshape(rhs.shape)


def tridiag_matvec(lower, diag, upper, v):
    v = np.asarray(v, dtype=np.float64)
    flat = v.reshape(-1, v.shape[-1])
    shape = flat.shape
    lo, di, up = (np.broadcast_to(np.asarray(c, dtype=np.float64), v.shape).reshape(shape)
                  for c in (lower, diag, upper))
    out = _active.tridiag_matvec(lo, di, up, np.ascontiguousarray(flat))
    return np.asarray(out).reshape(v.shape)


def dirichlet_laplacian(v, h):
    """Apply the Dirichlet second difference along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    flat = np.ascontiguousarray(v.reshape(-1, v.shape[-1]))
    return np.asarray(_active.dirichlet_laplacian(flat, float(h))).reshape(v.shape)

"""Bundle, point and manifest files.

Arrays live in a binary sidecar of little-endian float64 values; the JSON
manifest next to it records name, byte offset and shape for each array.
Every file is written to a temporary name and renamed into place.
"""

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import network as nn
from .discretization import Grid1D, ObsSpec
from .operator import AaoPoint, Experiment, KnownNonlinearity, ObservationSet, Problem

BUNDLE_FORMAT = 1
DTYPE = "<f8"


class BundleError(OSError):
    pass


def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_arrays(path, arrays):
    """Concatenate ``arrays`` (name -> array) into one sidecar; return the index."""
    index = {}
    chunks = []
    offset = 0
    for name, a in arrays.items():
        b = np.ascontiguousarray(a, dtype=DTYPE).tobytes()
        index[name] = {"offset": offset, "shape": list(np.shape(a))}
        chunks.append(b)
        offset += len(b)
    atomic_write(path, b"".join(chunks))
    return {"file": Path(path).name, "dtype": DTYPE, "bytes": offset,
            "sha256": hashlib.sha256(b"".join(chunks)).hexdigest(), "arrays": index}


def read_arrays(directory, table):
    path = Path(directory) / table["file"]
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise BundleError(f"cannot read array sidecar {path}: {exc}") from exc
    if len(raw) != table["bytes"]:
        raise BundleError(f"{path}: expected {table['bytes']} bytes, found {len(raw)}")
    out = {}
    for name, entry in table["arrays"].items():
        n = int(np.prod(entry["shape"], dtype=int))
        a = np.frombuffer(raw, dtype=DTYPE, count=n, offset=entry["offset"])
        out[name] = a.astype(float).reshape(entry["shape"])
    return out


def point_arrays(x, prefix=""):
    arrays = {}
    for m, e in enumerate(x.experiments):
        for f in ("c", "phi", "u0", "u"):
            arrays[f"{prefix}{f}[{m}]"] = getattr(e, f)
    arrays[f"{prefix}theta"] = x.theta
    return arrays


def point_from_arrays(arrays, K, prefix=""):
    exps = [Experiment(*(arrays[f"{prefix}{f}[{m}]"] for f in ("c", "phi", "u0", "u")))
            for m in range(K)]
    return AaoPoint(exps, arrays[f"{prefix}theta"])


def _load_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise BundleError(f"{what} not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise BundleError(f"cannot read {what} {path}: {exc}") from exc


# Problem bundles --------------------------------------------------------------

def write_bundle(directory, problem, truth=None, seeds=None, extra=None):
    """Write ``bundle.json``, ``bundle.bin`` and (with a truth) ``model.json``."""
    d = Path(directory)
    arrays = {f"y[{m}]": y for m, y in enumerate(problem.observations.data)}
    if truth is not None:
        arrays.update(point_arrays(truth.point, prefix="truth."))
    table = write_arrays(d / "bundle.bin", arrays)
    manifest = {
        "format_version": BUNDLE_FORMAT,
        "software_version": __version__,
        "grid": problem.grid.to_dict(),
        "h": problem.h.to_dict(),
        "observations": [s.to_dict() for s in problem.observations.specs],
        "deltas": list(problem.observations.deltas),
        "net": problem.net.to_dict(),
        "mode": problem.mode,
        "seeds": seeds or {},
        "arrays": table,
    }
    if truth is not None:
        atomic_write(d / "model.json", nn.encode_model(problem.net, truth.point.theta, "linear_head"))
        manifest["truth"] = {"model": "model.json", "range_interval": list(truth.range_interval),
                             "fit_rms": truth.fit_rms, "warnings": list(truth.warnings)}
    manifest.update(extra or {})
    atomic_write(d / "bundle.json", dump_json(manifest))
    return manifest


def read_bundle(directory):
    """Return ``(problem, truth_point or None, manifest)``."""
    d = Path(directory)
    man = _load_json(d / "bundle.json", "problem bundle")
    if man.get("format_version") != BUNDLE_FORMAT:
        raise BundleError(f"unsupported bundle format {man.get('format_version')!r}")
    grid = Grid1D(**man["grid"])
    arrays = read_arrays(d, man["arrays"])
    specs = [ObsSpec.from_dict(s, grid) for s in man["observations"]]
    net = nn.NetSpec(tuple(man["net"]["widths"]), tuple(man["net"]["activations"]))
    obs = ObservationSet(specs, [arrays[f"y[{m}]"] for m in range(len(specs))], man["deltas"])
    problem = Problem(grid, net, obs, KnownNonlinearity.from_dict(man["h"]), mode=man["mode"])
    truth = None
    if "truth.theta" in arrays:
        truth = point_from_arrays(arrays, len(specs), prefix="truth.")
    return problem, truth, man


# Points -----------------------------------------------------------------------

def write_point(directory, name, x, problem, mode=None):
    """``<name>.bin`` sidecar plus ``<name>.model.json``; returns the manifest entry."""
    d = Path(directory)
    table = write_arrays(d / f"{name}.bin", point_arrays(x))
    atomic_write(d / f"{name}.model.json",
                 nn.encode_model(problem.net, x.theta, mode or problem.mode))
    return {"arrays": table, "model": f"{name}.model.json", "K": x.K}


def read_point(directory, entry):
    return point_from_arrays(read_arrays(directory, entry["arrays"]), entry["K"])

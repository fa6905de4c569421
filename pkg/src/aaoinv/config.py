"""Run configuration: one versioned JSON document per run.

The schema is closed (unknown keys are rejected everywhere) and is checked
before any computation. ``load_config`` returns a plain dict with every
default filled in, so the echo in a manifest shows the full run setup.
"""

import copy
import json
import math
from pathlib import Path

import jsonschema

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Schema or file problem; ``where`` names the offending field or line."""

    def __init__(self, message, where=""):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


def _obj(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int = {"type": "integer"}
_seed = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_bound = {"anyOf": [{"type": "null"}, _num]}
_box = {"anyOf": [{"type": "null"},
                  {"type": "array", "items": _bound, "minItems": 2, "maxItems": 2}]}

_nonlinearity = _obj({"kind": {"enum": ["zero", "cubic", "polynomial"]},
                      "coefficients": {"type": "array", "items": _num}})
_obs = _obj({"kind": {"enum": ["full", "mask", "final_time"]},
             "mask": {"type": "array", "items": {"type": "array", "items": _int,
                                                 "minItems": 2, "maxItems": 2}}})
_params = {"type": "object", "additionalProperties": _num}
_manufactured = _obj({
    "u_dagger": {"enum": ["sin_linear", "sin_exp"]},
    "u_params": _params,
    "c_dagger": {"enum": ["constant", "parabola", "bump"]},
    "c_params": _params,
    "f_dagger": {"enum": ["cubic", "sine", "zero"]},
    "h": _nonlinearity,
    "experiments": {"type": "array", "minItems": 1,
                    "items": _obj({"u_params": _params, "c_params": _params})},
    "width": {"type": "integer", "minimum": 1},
    "activation": {"enum": ["tanh", "softplus", "relu"]},
    "fit_samples": {"type": "integer", "minimum": 2},
    "seed": _seed,
    "obs": _obs,
})
_stopping = _obj({
    "kind": {"enum": ["apriori", "discrepancy", "max_iters"]},
    "max_iters": {"type": "integer", "minimum": 0},
    "tau_d": _num, "mu_R": _num, "M_R": _num, "K_R": _num, "R": _num,
    "d_bar": _num, "rho": _num, "m_N": _num,
})
_tikhonov = _obj({
    "gamma": _pos, "misfit": {"enum": ["sq_norm", "kl"]},
    "r2_kind": {"enum": ["hyper_l2", "hyper_l1", "sampled_w1inf"]},
    "interval": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
    "n_samples": {"type": "integer", "minimum": 2}, "eta": _nonneg,
    "max_iters": {"type": "integer", "minimum": 0}, "sweep": {"type": "integer", "minimum": 1},
    "armijo": _pos, "shrink": _pos, "max_halvings": {"type": "integer", "minimum": 1},
    "initial_step": _pos,
})

SCHEMA = _obj({
    "version": {"const": CONFIG_VERSION},
    "seed": _seed,
    "out": {"type": "string"},
    "grid": _obj({"n_x": {"type": "integer", "minimum": 2},
                  "n_t": {"type": "integer", "minimum": 2}, "T": _pos}, ["n_x", "n_t"]),
    "problem": {"oneOf": [_obj({"manufactured": _manufactured}, ["manufactured"]),
                          _obj({"bundle": {"type": "string"}}, ["bundle"])]},
    "noise": _obj({"delta": _nonneg, "seed": _seed}),
    "method": {"enum": ["landweber", "tikhonov"]},
    "mode": {"enum": ["linear_head", "full"]},
    "initial": _obj({"kind": {"enum": ["data", "zero", "truth_perturbed"]},
                     "amplitude": _num, "seed": _seed}),
    "landweber": _obj({"stopping": _stopping, "scale": {"type": "boolean"},
                       "scale_target": _pos, "record_every": {"type": "integer", "minimum": 1}}),
    "tikhonov": _tikhonov,
    "constraints": _obj({"c_bounds": _box, "phi_bounds": _box, "u0_bounds": _box,
                         "theta_radius": {"anyOf": [{"type": "null"}, _pos]}}),
    "verify": _obj({
        "adjoint_trials": {"type": "integer", "minimum": 1},
        "fd_directions": {"type": "integer", "minimum": 1},
        "net_checks": {"type": "integer", "minimum": 1},
        "tcc_radii": {"type": "array", "items": _pos, "minItems": 1},
        "tcc_samples": {"type": "integer", "minimum": 2},
        "lipschitz_R": _pos, "lipschitz_samples": {"type": "integer", "minimum": 2},
        "fault": {"enum": [None, "adjoint_sign_flip"]},
        "thresholds": _obj({"adjoint": _pos, "fd": _pos, "tcc": _pos, "lipschitz": _pos}),
    }),
    "study": _obj({
        "deltas": {"type": "array", "items": _pos, "minItems": 1},
        "methods": {"type": "array", "items": {"enum": ["tikhonov", "landweber"]}, "minItems": 1},
        "width_ladder": {"type": "array", "items": {"type": "integer", "minimum": 1},
                         "minItems": 1},
        "c_gamma": _pos, "C": _pos, "stopping": _stopping, "tikhonov": _tikhonov,
        "omega_margin": _nonneg, "timing": {"enum": ["wall", "omit"]},
        "estimate_constants": {"type": "boolean"},
    }),
}, ["version", "grid"])

DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "out": "out",
    "grid": {"n_x": 63, "n_t": 64, "T": 1.0},
    "problem": {"manufactured": {}},
    "noise": {"delta": 0.0},
    "method": "landweber",
    "mode": "linear_head",
    "initial": {"kind": "data", "amplitude": 0.05},
    "landweber": {"stopping": {"kind": "max_iters", "max_iters": 500}, "scale": True,
                  "scale_target": 0.9 * math.sqrt(2.0), "record_every": 1},
    "tikhonov": {},
    "constraints": {},
    "verify": {"adjoint_trials": 50, "fd_directions": 20, "net_checks": 100,
               "tcc_radii": [0.01, 0.05, 0.2], "tcc_samples": 200, "lipschitz_R": 0.05,
               "lipschitz_samples": 20, "fault": None,
               "thresholds": {"adjoint": 1e-9, "fd": 1e-5, "tcc": 1.0, "lipschitz": 2.0}},
    "study": {"deltas": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3], "methods": ["tikhonov", "landweber"],
              "width_ladder": [4, 8, 16, 32], "c_gamma": 1.0, "C": 1.0,
              "stopping": {"kind": "apriori", "max_iters": 5000}, "tikhonov": {},
              "omega_margin": 0.5, "timing": "wall", "estimate_constants": True},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "problem":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc):
    """Raise ``ConfigError`` naming the first offending field."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(e.message, where)


def resolve(doc):
    """Validate ``doc`` and fill in defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    validate(doc)
    cfg = _merge(DEFAULTS, doc)
    validate(cfg)
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror or exc}", str(path)) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{path}: line {exc.lineno} column {exc.colno}") from exc
    cfg = resolve(doc)
    bundle = cfg["problem"].get("bundle")
    if bundle is not None and not Path(bundle).is_absolute():
        cfg["problem"]["bundle"] = str((path.parent / bundle).resolve())
    return cfg

"""Command-line entry point: ``aaoinv {make-problem,solve,verify,study}``.

Exit codes: 0 ok, 1 numerical failure (or failed verification), 2 config or
I/O error. Every run writes ``status.json`` into the output directory, and
failures also print the same JSON document on stderr.
"""

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from .config import ConfigError, load_config
from .discretization import Grid1D
from .io import (BundleError, atomic_write, dump_json, read_bundle, write_bundle,
                 write_point)
from .landweber import (ConstraintSet, LandweberAbort, StoppingRule, k_star_apriori,
                        run_landweber)
from .operator import (OperatorError, hilbert_adjoint, norm_y, operator_norm_estimate, residual,
                       scale_operator)
from .tikhonov import LineSearchError, TikhonovConfig, minimize_tikhonov, tikhonov_parts

log = logging.getLogger("aaoinv")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
OUT_ENV = "AAOINV_OUT"

NOTES = {
    "omega_y": "network penalty and feature placement use the state range inflated by omega_margin",
    "mask_weights": "masked observations are weighted by h_x * tau per observed node",
}


class NumericalFailure(RuntimeError):
    pass


# Problem construction ----------------------------------------------------------

def _grid(cfg):
    return Grid1D(**cfg["grid"])


def _truth_from_manifest(man, point):
    spec = man.get("manufactured")
    if spec is None or point is None:
        return None
    info = man["truth"]
    return dg.GroundTruth(point, dg.f_dagger_fn(spec["f_dagger"]), tuple(info["range_interval"]),
                          info["fit_rms"], list(info["warnings"]))


def build_problem(cfg):
    """Return ``(problem, truth or None, info)`` with noise applied and mode set."""
    grid = _grid(cfg)
    seed = cfg["noise"].get("seed", cfg["seed"])
    if "bundle" in cfg["problem"]:
        problem, point, man = read_bundle(cfg["problem"]["bundle"])
        if problem.grid != grid:
            raise ConfigError(f"bundle grid {problem.grid.to_dict()} differs from config grid",
                              "grid")
        truth = _truth_from_manifest(man, point)
        info = {"source": "bundle", "bundle": cfg["problem"]["bundle"]}
    else:
        spec = dg.ManufacturedSpec.from_dict(cfg["problem"]["manufactured"], grid)
        problem, truth = dg.manufactured_problem(spec, grid)
        delta = cfg["noise"]["delta"]
        if delta > 0:
            problem = dg.noisy_problem(problem, delta, seed)
        info = {"source": "manufactured", "manufactured": spec.to_dict(), "noise_seed": seed}
    problem = replace(problem, mode=cfg["mode"])
    if truth is not None:
        info["fit_rms"] = truth.fit_rms
        info["warnings"] = list(truth.warnings)
        info["range_interval"] = list(truth.range_interval)
    return problem, truth, info


def _interval(problem, truth):
    if truth is not None:
        return truth.range_interval
    lo = min(float(y.min()) for y in problem.observations.data)
    hi = max(float(y.max()) for y in problem.observations.data)
    return (lo, hi)


def _initial(cfg, problem, truth):
    ini = cfg["initial"]
    if ini["kind"] == "truth_perturbed":
        if truth is None:
            raise ConfigError("truth_perturbed start needs a manufactured truth", "initial/kind")
        return dg.perturbed_truth(truth, problem.grid, ini["amplitude"])
    seed = ini.get("seed", cfg["problem"].get("manufactured", {}).get("seed", 0))
    return dg.initial_point(problem, ini["kind"], _interval(problem, truth), seed)


def _omega(cfg, problem, truth):
    return dg.omega_y(_interval(problem, truth), cfg["study"]["omega_margin"])


def _stopping(spec, target):
    spec = dict(spec)
    if spec.get("kind") == "apriori":
        spec.setdefault("M_R", target)
    return StoppingRule(**spec)


# Commands -----------------------------------------------------------------------

def cmd_make_problem(cfg, out):
    if "bundle" in cfg["problem"]:
        raise ConfigError("make-problem needs a manufactured problem", "problem")
    problem, truth, info = build_problem(cfg)
    seeds = {"master": cfg["seed"], "noise": info["noise_seed"],
             "fit": cfg["problem"]["manufactured"].get("seed", 0)}
    man = write_bundle(out, problem, truth, seeds,
                       extra={"manufactured": info["manufactured"]})
    r = residual(truth.point, problem)
    manifest = {
        "command": "make-problem", "software_version": __version__, "config": cfg,
        "bundle": "bundle.json", "truth_fit_rms": truth.fit_rms, "warnings": truth.warnings,
        "range_interval": list(truth.range_interval),
        "omega_y": list(_omega(cfg, problem, truth)), "notes": NOTES,
        "truth_residual": {"model": float(np.sqrt(sum(
            float(np.sum(e.w**2)) for e in r.experiments)))},
        "arrays": man["arrays"],
    }
    atomic_write(Path(out) / "manifest.json", dump_json(_json_safe(manifest)))
    return {"status": "ok"}


def cmd_solve(cfg, out):
    problem, truth, info = build_problem(cfg)
    x0 = _initial(cfg, problem, truth)
    constraints = ConstraintSet.from_dict(cfg["constraints"])
    method = cfg["method"]
    manifest = {"command": "solve", "software_version": __version__, "config": cfg,
                "problem": info, "method": method, "notes": NOTES}
    start = time.perf_counter()
    if method == "landweber":
        lw = cfg["landweber"]
        p = problem
        if lw["scale"]:
            p, rec = scale_operator(x0, problem, target=lw["scale_target"], seed=cfg["seed"])
            manifest["scaling"] = rec.to_dict()
        rule = _stopping(lw["stopping"], lw["scale_target"])
        if rule.kind == "apriori":
            manifest["k_star"] = k_star_apriori(p.observations.delta * p.scale, rule)
        manifest["stopping"] = rule.to_dict()
        try:
            x, trace = run_landweber(x0, p, constraints, rule, truth, record_every=lw["record_every"])
        except LandweberAbort as exc:
            atomic_write(Path(out) / "trace.csv", exc.trace.to_csv())
            raise NumericalFailure(str(exc)) from exc
        status = trace.status
    else:
        tk = dict(cfg["tikhonov"])
        tk.setdefault("interval", _omega(cfg, problem, truth))
        tcfg = TikhonovConfig(**{**tk, "interval": tuple(tk["interval"])})
        manifest["tikhonov"] = tcfg.to_dict()
        p = problem
        try:
            x, trace = minimize_tikhonov(x0, p, tcfg, constraints)
        except LineSearchError as exc:
            raise NumericalFailure(str(exc)) from exc
        status = trace.status
        manifest["objective"] = tikhonov_parts(x, p, tcfg).__dict__
    manifest["seconds"] = time.perf_counter() - start
    manifest["stop"] = status
    manifest["residual_final"] = norm_y(p, residual(x, p)) / p.scale
    if truth is not None:
        err_c, err_u, err_f = dg._errors_vs_truth(p, x, truth)
        manifest["errors"] = {"err_c": err_c, "err_u": err_u, "err_f_sup": err_f}
    atomic_write(Path(out) / "trace.csv", trace.to_csv())
    manifest["point"] = write_point(out, "point", x, p)
    atomic_write(Path(out) / "manifest.json", dump_json(_json_safe(manifest)))
    return {"status": "ok", "stop": status}


def _check(name, value, threshold, ok=None):
    ok = bool(value <= threshold) if ok is None else bool(ok)
    return {"name": name, "value": float(value), "threshold": float(threshold), "pass": ok}


def cmd_verify(cfg, out):
    """Adjoint and derivative checks plus estimated constants; writes ``report.json``."""
    problem, truth, info = build_problem(cfg)
    v = cfg["verify"]
    thr = v["thresholds"]
    seed = cfg["seed"]
    center = truth.point if truth is not None else _initial(cfg, problem, truth)
    full = replace(problem, mode="full")
    off = dg.perturbed_truth(center, problem.grid, 0.05)
    adjoint = None
    if v["fault"] == "adjoint_sign_flip":
        adjoint = lambda x, p, r: hilbert_adjoint(x, p, r) * -1.0  # noqa: E731
    checks = []
    t0 = time.perf_counter()
    checks.append(_check("adjoint", dg.adjoint_test(full, off, v["adjoint_trials"], seed,
                                                    adjoint=adjoint), thr["adjoint"]))
    checks.append(_check("adjoint_coordinate",
                         dg.adjoint_test(full, off, v["adjoint_trials"], seed, "coordinate"),
                         thr["adjoint"]))
    checks.append(_check("jacobian_fd", dg.jacobian_fd_check(full, off, v["fd_directions"],
                                                             seed=seed), thr["fd"]))
    tk = dict(cfg["tikhonov"])
    tk.setdefault("interval", _omega(cfg, problem, truth))
    tcfg = TikhonovConfig(**{**tk, "interval": tuple(tk["interval"])})
    checks.append(_check("tikhonov_gradient_fd",
                         dg.gradient_fd_check(full, off, tcfg, v["fd_directions"], seed=seed),
                         thr["fd"]))
    checks.append(_check("network_fd", dg.net_jacobian_check(v["net_checks"], seed), thr["fd"]))
    m_hat, _ = operator_norm_estimate(center, problem, seed=seed)
    target = cfg["landweber"]["scale_target"]
    ps, rec = scale_operator(center, problem, target=target, seed=seed)
    ladder = dg.tcc_ladder(ps, center, v["tcc_radii"], v["tcc_samples"], seed, M_R=target)
    for R, res in zip(v["tcc_radii"], ladder):
        checks.append(_check(f"tcc_R={R:g}", res.c_tc, thr["tcc"], res.c_tc < thr["tcc"]))
    l_hat = dg.lipschitz_sample(ps, center, v["lipschitz_R"], v["lipschitz_samples"], seed)
    checks.append(_check("lipschitz", l_hat, thr["lipschitz"], l_hat < thr["lipschitz"]))
    ok = all(c["pass"] for c in checks)
    report = {
        "command": "verify", "software_version": __version__, "config": cfg, "problem": info,
        "pass": ok, "checks": checks, "seconds": time.perf_counter() - t0,
        "constants": {"M_hat": m_hat, "M_hat_scaled": target, "c_tc_hat": ladder[-1].c_tc,
                      "tcc_ladder": [dict(R=R, **r.to_dict()) for R, r in zip(v["tcc_radii"], ladder)],
                      "L_hat": l_hat, "scaling": rec.to_dict()},
        "fault": v["fault"],
    }
    atomic_write(Path(out) / "report.json", dump_json(_json_safe(report)))
    if not ok:
        failed = [c["name"] for c in checks if not c["pass"]]
        return {"status": "verification_failed", "reason": "verification_failed",
                "message": "failed checks: " + ", ".join(failed), "exit": EXIT_NUMERIC}
    return {"status": "ok"}


def study_config(cfg):
    s = cfg["study"]
    grid = _grid(cfg)
    if "bundle" in cfg["problem"]:
        raise ConfigError("study needs a manufactured problem", "problem")
    spec = dg.ManufacturedSpec.from_dict(cfg["problem"]["manufactured"], grid)
    return dg.StudyConfig(grid=grid, manufactured=spec, deltas=s["deltas"], methods=s["methods"],
                          seed=cfg["seed"], mode=cfg["mode"], width_ladder=s["width_ladder"],
                          c_gamma=s["c_gamma"], C=s["C"], tikhonov=s["tikhonov"],
                          stopping=s["stopping"], scale_target=cfg["landweber"]["scale_target"],
                          omega_margin=s["omega_margin"], timing=s["timing"])


def _study_constants(scfg, cfg):
    problem, truth = dg.manufactured_problem(scfg.manufactured, scfg.grid)
    problem = replace(problem, mode=scfg.mode)
    v = cfg["verify"]
    m_hat, _ = operator_norm_estimate(truth.point, problem, seed=scfg.seed)
    ps, rec = scale_operator(truth.point, problem, target=scfg.scale_target, seed=scfg.seed)
    R = v["lipschitz_R"]
    tcc = dg.tcc_estimate(ps, truth.point, R, v["tcc_samples"], scfg.seed, M_R=scfg.scale_target)
    l_hat = dg.lipschitz_sample(ps, truth.point, R, v["lipschitz_samples"], scfg.seed)
    return {"M_hat": m_hat, "c_tc_hat": tcc.c_tc, "K_R_hat": tcc.K_R, "mu_R_hat": tcc.mu_R,
            "L_hat": l_hat, "R": R, "scaling": rec.to_dict()}


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def cmd_study(cfg, out, parallel=1):
    scfg = study_config(cfg)
    key = hashlib.sha256(dump_json(scfg.to_dict()).encode()).hexdigest()
    cell_dir = Path(out) / "cells"
    done = {}
    for i in range(len(scfg.cells())):
        f = cell_dir / f"cell_{i:03d}.json"
        if f.exists():
            try:
                rec = json.loads(f.read_text())
            except (OSError, json.JSONDecodeError):
                continue
            if rec.get("config_key") == key:
                done[i] = {k: (float(v) if isinstance(v, str) and v in ("nan", "inf") else v)
                           for k, v in rec.items()}
    resumed = sorted(done)

    def save(rec):
        rec["config_key"] = key
        atomic_write(cell_dir / f"cell_{rec['index']:03d}.json", dump_json(_json_safe(rec)))

    start = time.perf_counter()
    records = dg.convergence_study(scfg, parallel=parallel, done=done, on_cell=save)
    atomic_write(Path(out) / "study.csv", dg.study_csv(records))
    manifest = {
        "command": "study", "software_version": __version__, "config": cfg,
        "study": scfg.to_dict(), "config_key": key, "resumed_cells": resumed,
        "columns": list(dg.STUDY_COLUMNS), "notes": NOTES,
        "cells": [{k: r[k] for k in ("index", "method", "delta", "seed", "status", "message",
                                      "warnings", "constants", "wall_seconds")} for r in records],
        "seconds": time.perf_counter() - start,
    }
    if cfg["study"]["estimate_constants"]:
        manifest["constants"] = _study_constants(scfg, cfg)
    atomic_write(Path(out) / "manifest.json", dump_json(_json_safe(manifest)))
    failed = [r["index"] for r in records if r["status"] != "ok"]
    if failed:
        return {"status": "numerical_failure", "reason": "study_cells_failed",
                "message": f"cells {failed} failed", "exit": EXIT_NUMERIC}
    return {"status": "ok", "cells": len(records)}


# Entry point --------------------------------------------------------------------

COMMANDS = {"make-problem": cmd_make_problem, "solve": cmd_solve, "verify": cmd_verify,
            "study": cmd_study}


def build_parser():
    ap = argparse.ArgumentParser(prog="aaoinv", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR", help=f"output directory (or ${OUT_ENV})")
        p.add_argument("--seed", type=int, metavar="U64", help="override the master seed")
        p.add_argument("--parallel", type=int, default=1, metavar="N",
                       help="study cells run in N worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _finish(out, command, result, code):
    doc = {"command": command, "exit_code": code, **result}
    doc.pop("exit", None)
    if out is not None:
        try:
            atomic_write(Path(out) / "status.json", dump_json(doc))
        except OSError:
            pass
    if code != EXIT_OK:
        print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # known before the config is read, so config errors still land in status.json
    out = args.out or os.environ.get(OUT_ENV)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer", "--seed")
            cfg["seed"] = args.seed
        if args.parallel < 1:
            raise ConfigError("--parallel must be at least 1", "--parallel")
        out = out or cfg["out"]
        Path(out).mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command]
        result = fn(cfg, out, args.parallel) if args.command == "study" else fn(cfg, out)
        return _finish(out, args.command, result, result.get("exit", EXIT_OK))
    except ConfigError as exc:
        return _finish(out, args.command, {"status": "error", "reason": "config_error",
                                           "where": exc.where, "message": str(exc)}, EXIT_CONFIG)
    except (BundleError, OSError) as exc:
        return _finish(out, args.command, {"status": "error", "reason": "io_error",
                                           "message": str(exc)}, EXIT_CONFIG)
    except (NumericalFailure, OperatorError, ArithmeticError) as exc:
        return _finish(out, args.command, {"status": "error", "reason": "numerical_failure",
                                           "message": str(exc)}, EXIT_NUMERIC)
    except ValueError as exc:
        return _finish(out, args.command, {"status": "error", "reason": "config_error",
                                           "message": str(exc)}, EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())

import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from aaoinv import cli
from aaoinv.config import ConfigError, load_config, resolve
from aaoinv.io import BundleError, read_bundle, read_point, write_bundle, write_point
from aaoinv.operator import residual

SMALL = {"version": 1, "grid": {"n_x": 11, "n_t": 10},
         "problem": {"manufactured": {"width": 6}}}


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _run(tmp_path, command, doc, out="out", extra=()):
    code = cli.main([command, "--config", _write(tmp_path, doc), "--out", str(tmp_path / out),
                     *extra])
    return code, tmp_path / out


def _status(out):
    return json.loads((out / "status.json").read_text())


# io ----------------------------------------------------------------------------

def test_bundle_round_trip_bit_exact(small, tmp_path):
    problem, truth = small
    write_bundle(tmp_path, problem, truth, seeds={"master": 3})
    p2, t2, man = read_bundle(tmp_path)
    assert man["seeds"] == {"master": 3}
    assert p2.grid == problem.grid and p2.mode == problem.mode
    for a, b in zip(problem.observations.data, p2.observations.data):
        assert np.array_equal(a, b)
    for e, f in zip(truth.point.experiments, t2.experiments):
        for name in ("c", "phi", "u0", "u"):
            assert np.array_equal(getattr(e, name), getattr(f, name))
    assert np.array_equal(truth.point.theta, t2.theta)
    r = residual(t2, p2)
    assert max(float(np.max(np.abs(e.w))) for e in r.experiments) <= 1e-12


def test_point_round_trip(small, tmp_path):
    problem, truth = small
    entry = write_point(tmp_path, "pt", truth.point, problem)
    x = read_point(tmp_path, entry)
    assert np.array_equal(x.flat(), truth.point.flat())
    assert json.loads((tmp_path / "pt.model.json").read_text())


def test_bundle_errors(small, tmp_path):
    problem, truth = small
    with pytest.raises(BundleError, match="not found"):
        read_bundle(tmp_path / "missing")
    write_bundle(tmp_path, problem, truth)
    raw = (tmp_path / "bundle.bin").read_bytes()
    (tmp_path / "bundle.bin").write_bytes(raw[:-8])
    with pytest.raises(BundleError, match="bytes"):
        read_bundle(tmp_path)


# config --------------------------------------------------------------------------

def test_unknown_key_rejected_with_path():
    with pytest.raises(ConfigError) as exc:
        resolve({**SMALL, "landweber": {"stopping": {"kind": "apriori", "tau": 2}}})
    assert exc.value.where == "landweber/stopping"
    with pytest.raises(ConfigError):
        resolve({**SMALL, "colour": "red"})
    with pytest.raises(ConfigError):
        resolve({"grid": {"n_x": 5, "n_t": 5}})  # version missing


def test_json_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "version": 1,\n  "grid": {"n_x": 5,}\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert "line 3" in exc.value.where


def test_defaults_filled_and_bundle_path_resolved(tmp_path):
    (tmp_path / "sub").mkdir()
    p = _write(tmp_path / "sub", {"version": 1, "grid": {"n_x": 5, "n_t": 5},
                                  "problem": {"bundle": "../b"}})
    cfg = load_config(p)
    assert cfg["problem"]["bundle"] == str((tmp_path / "b").resolve())
    assert cfg["verify"]["adjoint_trials"] == 50 and cfg["grid"]["T"] == 1.0


# cli -----------------------------------------------------------------------------

def test_config_errors_exit_2(tmp_path):
    code = cli.main(["solve", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")])
    assert code == 2 and _status(tmp_path / "o")["reason"] == "config_error"
    code, out = _run(tmp_path, "solve", {**SMALL, "problem": {"bundle": "nowhere"}})
    assert code == 2 and _status(out)["reason"] == "io_error"
    code, out = _run(tmp_path, "solve", {**SMALL, "bogus": 1})
    assert code == 2


def test_make_problem_deterministic_and_exact(tmp_path):
    doc = {**SMALL, "seed": 7}
    assert _run(tmp_path, "make-problem", doc, "a")[0] == 0
    assert _run(tmp_path, "make-problem", doc, "b")[0] == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "bundle.bin").read_bytes() == (b / "bundle.bin").read_bytes()
    assert (a / "bundle.json").read_text() == (b / "bundle.json").read_text()
    problem, truth, _ = read_bundle(a)
    # zero noise: the stored data are the truth state itself
    assert np.array_equal(problem.observations.data[0], truth.experiments[0].u)
    man = json.loads((a / "manifest.json").read_text())
    assert man["truth_residual"]["model"] <= 1e-12


def test_solve_zero_iterations_echoes_start(tmp_path):
    doc = {**SMALL, "initial": {"kind": "truth_perturbed", "amplitude": 0.05},
           "landweber": {"stopping": {"kind": "max_iters", "max_iters": 0}}}
    assert _run(tmp_path, "make-problem", SMALL, "b")[0] == 0
    doc["problem"] = {"bundle": str(tmp_path / "b")}
    code, out = _run(tmp_path, "solve", doc)
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    x = read_point(out, man["point"])
    problem, truth, _ = read_bundle(tmp_path / "b")
    x0 = cli._initial(cli.load_config(tmp_path / "cfg.json"), problem,
                      cli._truth_from_manifest(json.loads((tmp_path / "b/bundle.json").read_text()),
                                               truth))
    assert np.array_equal(x.flat(), x0.flat())
    rows = list(csv.DictReader((out / "trace.csv").open()))
    assert len(rows) == 1 and rows[0]["k"] == "0"


def test_solve_tikhonov_writes_outputs(tmp_path):
    doc = {**SMALL, "method": "tikhonov", "noise": {"delta": 1e-2},
           "tikhonov": {"max_iters": 50}}
    code, out = _run(tmp_path, "solve", doc)
    assert code == 0, _status(out)
    man = json.loads((out / "manifest.json").read_text())
    assert {"errors", "objective", "point", "stop"} <= set(man)
    assert (out / "point.bin").exists() and (out / "point.model.json").exists()


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("AAOINV_OUT", str(tmp_path / "env"))
    assert cli.main(["make-problem", "--config", _write(tmp_path, SMALL)]) == 0
    assert (tmp_path / "env" / "bundle.json").exists()


VERIFY = {**SMALL, "verify": {"adjoint_trials": 5, "fd_directions": 3, "net_checks": 5,
                              "tcc_radii": [0.01, 0.05], "tcc_samples": 10,
                              "lipschitz_samples": 4}}


def test_verify_report_and_fault_injection(tmp_path):
    code, out = _run(tmp_path, "verify", VERIFY, "ok")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert {"M_hat", "c_tc_hat", "L_hat"} <= set(report["constants"])
    assert all(c["pass"] for c in report["checks"])
    doc = json.loads(json.dumps(VERIFY))
    doc["verify"]["fault"] = "adjoint_sign_flip"
    code, out = _run(tmp_path, "verify", doc, "bad")
    assert code == 1
    st = _status(out)
    assert st["reason"] == "verification_failed" and "adjoint" in st["message"]


STUDY = {**SMALL, "study": {"deltas": [1e-1, 1e-2], "width_ladder": [4, 8], "timing": "omit",
                            "estimate_constants": False,
                            "stopping": {"kind": "apriori", "max_iters": 200},
                            "tikhonov": {"max_iters": 30}}}


def test_study_deterministic_and_resumable(tmp_path):
    code, a = _run(tmp_path, "study", STUDY, "a")
    assert code == 0, _status(a)
    rows = list(csv.DictReader((a / "study.csv").open()))
    assert len(rows) == 4 and {r["method"] for r in rows} == {"tikhonov", "landweber"}
    code, b = _run(tmp_path, "study", STUDY, "b", extra=("--parallel", "2"))
    assert code == 0
    assert (a / "study.csv").read_bytes() == (b / "study.csv").read_bytes()
    (b / "cells" / "cell_002.json").unlink()
    code, b = _run(tmp_path, "study", STUDY, "b")
    assert code == 0
    man = json.loads((b / "manifest.json").read_text())
    assert man["resumed_cells"] == [0, 1, 3]
    assert (a / "study.csv").read_bytes() == (b / "study.csv").read_bytes()


def test_console_script(tmp_path):
    exe = shutil.which("aaoinv")
    cmd = [exe] if exe else [sys.executable, "-m", "aaoinv.cli"]
    res = subprocess.run([*cmd, "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("make-problem", "solve", "verify", "study"):
        assert sub in res.stdout

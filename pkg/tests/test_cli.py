from __future__ import annotations

import copy
import hashlib
import json

import numpy as np
import pytest

from partdiss.cli import main, memory_estimate
from partdiss.config import RunConfig
from partdiss.errors import ConfigError
from partdiss.models import custom_model, register_model
from partdiss.output import read_csv, read_snapshots, write_csv

SMALL = {
    "schema": "partdiss.config/1",
    "basis": {"n": 1, "N": 16, "M": 48, "d": 1.0, "padding": 3.0},
    "noise": {"h_noise": 0.00390625, "t_min": -40.0, "t_max": 20.0, "seed": 3,
              "cov1": {"kind": "inverse_power", "gamma": 4.0}, "cov2": {"kind": "inverse_power", "gamma": 2.0},
              "alpha": 0.4, "ou_init": {"kind": "exact_diagonal"}, "tail_modes": 256},
    "model": {"name": "fhn", "parameters": {"p_field": 1.0, "alpha1": 0.5, "alpha2": 0.5, "alpha3": 1.0},
              "fit_box": 10.0, "fit_samples": 2000},
    "solver": {"h_step": 0.015625, "scheme": "etd1", "record_every": 4, "norms": ["l2", "h1"], "lp_power": 4.0},
    "experiment": {"kind": "pullback", "pullback_times": [0.0, 1.0, 2.0, 4.0], "radius": 10.0, "count": 4,
                   "sample_seed": 0, "threshold": 1e-6},
    "output": {"directory": "out", "snapshots": False},
}


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _with(**sections):
    doc = copy.deepcopy(SMALL)
    for k, v in sections.items():
        doc[k] = v
    return doc


def _err(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    return json.loads(lines[-1])


def test_config_round_trip_is_lossless():
    cfg = RunConfig.from_dict(copy.deepcopy(SMALL))
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again.to_dict() == cfg.to_dict()
    assert again.sha256() == cfg.sha256()


def test_config_rejects_unknown_and_inconsistent():
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_with(schema="partdiss.config/0"))
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_with(basis={**SMALL["basis"], "L": 3}))
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_with(solver={**SMALL["solver"], "h_step": 0.01}))
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_with(experiment={**SMALL["experiment"], "pullback_times": [0.0, 100.0]}))
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_with(experiment={"kind": "pullback", "radius_typo": 1}))


def test_csv_floats_round_trip(tmp_path):
    vals = [0.1, 1 / 3, 1e-300, -2.5e17, np.float64(np.pi)]
    write_csv(tmp_path / "a.csv", ["x"], [[v] for v in vals])
    _, rows = read_csv(tmp_path / "a.csv")
    assert [r[0] for r in rows] == [float(v) for v in vals]


def test_pullback_command_outputs_and_manifest(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["pullback", "--config", _write(tmp_path, SMALL), "--out", str(out)]) == 0
    header, rows = read_csv(out / "pullback.csv")
    assert header == ["t_pullback", "i", "j", "distance_H", "norm_i_H"]
    assert len(rows) == 4 * 16
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3 and man["status"] == "ok"
    assert man["calibration"]["monotone_band"] == 0.05 and man["calibration"]["pullback_threshold"] == 1e-6
    for ent in man["files"]:
        assert ent["sha256"] == hashlib.sha256((out / ent["name"]).read_bytes()).hexdigest()
    summary = json.loads(capsys.readouterr().out)["summary"]
    assert summary["monotone"] is True


def test_simulate_with_snapshots(tmp_path):
    doc = _with(experiment={"kind": "simulate", "t0": 0.0, "t1": 1.0, "initial_radius": 1.0, "initial_seed": 0},
                output={"directory": str(tmp_path / "sim"), "snapshots": True})
    assert main(["simulate", "--config", _write(tmp_path, doc)]) == 0
    man = json.loads((tmp_path / "sim" / "manifest.json").read_text())
    snap = next(f for f in man["files"] if f["kind"] == "snapshots")
    frames = read_snapshots(tmp_path / "sim" / snap["name"], snap)
    header, rows = read_csv(tmp_path / "sim" / "trajectory.csv")
    assert len(frames) == len(rows) == 64 // 4 + 1
    assert frames[-1]["t"][0] == 1.0
    assert frames[0]["u1"].shape == (16,) and frames[0]["u2"].shape == (48,)


def test_splitting_and_absorb_commands(tmp_path):
    doc = _with(experiment={"kind": "splitting", "t0": 0.0, "t1": 2.0})
    assert main(["splitting", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "s")]) == 0
    _, rows = read_csv(tmp_path / "s" / "splitting.csv")
    assert max(r[4] for r in rows) <= 1e-10
    doc = _with(experiment={"kind": "absorb", "scale_ladder": [1.0, 10.0], "t_max": 8.0, "count": 4},
                solver={**SMALL["solver"], "scheme": "lie_implicit"})
    assert main(["absorb", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "a")]) == 0
    _, rows = read_csv(tmp_path / "a" / "absorption.csv")
    assert len(rows) == 4


def test_ou_stats_command(tmp_path):
    doc = _with(experiment={"kind": "ou-stats", "seeds": 2, "horizon": 16.0, "stride": 4})
    assert main(["ou-stats", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 0
    header, rows = read_csv(tmp_path / "o" / "temperedness.csv")
    assert header[:2] == ["member", "quantity"] and len(rows) == 6
    _, var = read_csv(tmp_path / "o" / "ou_variance.csv")
    assert len(var) == 8


def test_validate_command_and_validation_failure(tmp_path, capsys):
    assert main(["validate", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path / "v")]) == 0
    _, rows = read_csv(tmp_path / "v" / "validation.csv")
    assert all(r[2] == "PASS" for r in rows)
    capsys.readouterr()
    bad = _with(noise={**SMALL["noise"], "cov1": {"kind": "inverse_power", "gamma": 2.0}})
    assert main(["pullback", "--config", _write(tmp_path, bad), "--out", str(tmp_path / "b")]) == 2
    rec = _err(capsys)
    assert rec["exit_code"] == 2 and "noise:noise_regularity" in rec["failed"]
    assert not (tmp_path / "b" / "pullback.csv").exists()


def test_too_tight_given_constants_fail_validation(tmp_path, capsys):
    doc = _with(model={"name": "allen_cahn_cq", "parameters": {"p1": 1.0, "p2": -1.0, "q2": 1.0, "eps": 0.1},
                       "fit_box": 10.0, "fit_samples": 2000,
                       "constants": {"p": 6.0, "p1": 1.0, "delta1": 0.5, "delta2": 2.0, "delta3": 1.0,
                                     "delta4": 1.0, "delta5": 1.0, "delta7": 1.0, "delta8": 2.0,
                                     "delta_lo": 0.05, "delta_hi": 0.2}})
    assert main(["validate", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "v")]) == 2
    assert _err(capsys)["failed"] == ["allen_cahn_cq:h_dissipation"]


def test_infeasible_fit_reports_named_condition(tmp_path, capsys):
    register_model("wrong_quintic", lambda c=1.0: custom_model(
        "wrong_quintic", lambda x, u: -c * u - u ** 3 - u ** 5, lambda x, u1, u2: 0 * u2,
        lambda x, u1: 0.1 * u1, lambda *x: 1.0, p=6.0, p1=1.0))
    doc = _with(model={"name": "wrong_quintic", "parameters": {}})
    assert main(["validate", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "w")]) == 2
    assert _err(capsys)["failed"] == ["wrong_quintic:h_dissipation"]


def test_config_errors_exit_one(tmp_path, capsys):
    assert main(["pullback", "--config", str(tmp_path / "missing.json")]) == 1
    assert _err(capsys)["error"] == "ConfigError"
    short = _with(noise={**SMALL["noise"], "cov1": {"kind": "explicit", "values": [1.0] * 10}})
    assert main(["describe", "--config", _write(tmp_path, short)]) == 1
    rec = _err(capsys)
    assert rec["exit_code"] == 1 and "10 intensities" in rec["message"]
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["validate", "--config", str(tmp_path / "bad.json")]) == 1


def test_blow_up_exits_three(tmp_path, capsys):
    doc = _with(experiment={"kind": "simulate", "t0": 0.0, "t1": 4.0, "initial_radius": 1e5, "initial_seed": 0},
                solver={**SMALL["solver"], "h_step": 0.0625})
    with np.errstate(all="ignore"):
        code = main(["simulate", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "x")])
    assert code == 3
    rec = _err(capsys)
    assert rec["error"] == "BlowUpError" and rec["t"] > 0


def test_describe_reports_model_and_basis(tmp_path, capsys):
    doc = _with(basis={**SMALL["basis"], "N": 64, "M": 192})
    assert main(["describe", "--config", _write(tmp_path, doc)]) == 0
    text = capsys.readouterr().out
    assert "N=64 (64 total)" in text and "padded grid 192" in text
    assert "p=4" in text and "sigma range [1, 1]" in text
    assert "memory estimate" in text


def test_memory_estimate_grows_with_basis():
    small = RunConfig.from_dict(copy.deepcopy(SMALL))
    big = RunConfig.from_dict(_with(basis={**SMALL["basis"], "N": 64, "M": 192}))
    assert memory_estimate(big, big.build_basis())["total"] > memory_estimate(small, small.build_basis())["total"]

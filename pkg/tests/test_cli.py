import json

import numpy as np
import pytest

from msexit.cli import main


def run(tmp_path, doc, command, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    out = tmp_path / "out"
    return main([command, "--config", str(path), "--out", str(out), *extra]), out


HOMOGENIZE = {"kind": "homogenize_only",
              "coefficients": {"langevin": {"V": {"kind": "quadratic_well"}, "Q": 0.0, "D": 1.0}},
              "x_grid": {"lower": -1.0, "upper": 1.0, "points": 9}, "torus_points": 64}

DETERMINISTIC = {"kind": "fluctuation", "coefficients": {"b": 0.0, "c": 1.0, "sigma": 0.0},
                 "regime": {"gamma": 0.0, "zeta": 0.25}, "x0": 0.0, "horizon": 1.0,
                 "x_grid": {"lower": -0.5, "upper": 1.5, "points": 11},
                 "epsilons": [0.01], "n_paths": 100, "dt": {"dt": 1e-3}, "seed": 1,
                 "torus_points": 64}

ROUGH = {"kind": "conditional_exit", "epsilons": [0.05], "n_paths": 100, "seed": 4,
         "rough": {"Q": 0.0, "D": 1.0, "interval": {"lower": 0.5, "upper": 2.0}, "x0": 1.0},
         "dt": {"dt": 1e-3}, "tolerances": {"mean_se": 10.0, "variance_rel": 1.0}}


def test_homogenize_flat_potential(tmp_path, capsys):
    code, out = run(tmp_path, HOMOGENIZE, "homogenize")
    assert code == 0
    model = json.loads((out / "model.json").read_text())
    xs = np.asarray(model["x_grid"])
    assert np.allclose(model["lambda_bar"], -xs, atol=1e-12)
    assert np.allclose(model["q_bar"], 2.0, atol=1e-12)
    assert "PASS" in capsys.readouterr().out


def test_malformed_config(tmp_path):
    assert run(tmp_path, "{not json", "homogenize")[0] == 2


def test_wrong_kind_for_subcommand(tmp_path):
    assert run(tmp_path, HOMOGENIZE, "fluctuations")[0] == 2


def test_uncentered_fast_drift(tmp_path):
    doc = dict(HOMOGENIZE, coefficients={"b": 1.0, "c": 0.0, "sigma": 1.0})
    code, out = run(tmp_path, doc, "homogenize")
    assert code == 4
    assert json.loads((out / "report.json").read_text())["centering_residual"] > 0.5


def test_deterministic_fluctuations(tmp_path):
    code, out = run(tmp_path, DETERMINISTIC, "fluctuations")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] and (out / "samples.csv").exists() and (out / "model.json").exists()


def test_zero_tolerance_fails(tmp_path):
    doc = dict(DETERMINISTIC, coefficients={"b": 0.0, "c": 1.0, "sigma": 1.0},
               tolerances={"mean_sigmas": 0.0, "variance_rel": 0.0, "ks": 0.0})
    assert run(tmp_path, doc, "fluctuations")[0] == 5


def test_exit_law_transport(tmp_path):
    doc = dict(DETERMINISTIC, kind="exit", exit={"upper": 0.5},
               coefficients={"b": 0.0, "c": 1.0, "sigma": 1.0},
               regime={"gamma": 1.0, "zeta": 0.5}, epsilons=[0.01], n_paths=200,
               tolerances={"mean_se": 5.0, "variance_rel": 0.5, "ks_factor": 3.0})
    code, out = run(tmp_path, doc, "exit-law")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["blocks"][0]["endpoint_tally"]["upper"] == 200


def test_rough_potential_prediction(tmp_path, capsys):
    code, _ = run(tmp_path, ROUGH, "rough-potential")
    assert code == 0
    text = capsys.readouterr().out
    assert "predicted variance = 0.75" in text and "rare endpoint: upper" in text


def test_scale_speed_table(tmp_path):
    doc = {"kind": "scale_speed", "seed": 0,
           "rough": {"Q": {"kind": "cosine"}, "D": 1.0,
                     "interval": {"lower": 0.5, "upper": 2.0}, "x0": 1.0},
           "scale_speed": {"epsilon": 0.05, "deltas": [1e-2, 1e-3, 1e-4]}}
    code, out = run(tmp_path, doc, "scale-speed")
    assert code == 0
    rows = np.loadtxt(out / "samples.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(rows[:, 1]) < 0)


def test_seed_override_keeps_model_and_quiet(tmp_path, capsys):
    code, out = run(tmp_path, DETERMINISTIC, "fluctuations", "--quiet")
    assert code == 0 and capsys.readouterr().out == ""
    first = (out / "model.json").read_bytes()
    assert run(tmp_path, DETERMINISTIC, "fluctuations", "--seed", "99")[0] == 0
    assert (out / "model.json").read_bytes() == first

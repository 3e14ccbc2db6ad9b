import json
import math
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

import support
from ricci_transport.cli import THREADS_ENV, main, resolve_threads, sample_points
from ricci_transport.config import (
    PRESETS,
    RunConfig,
    config_hash,
    initial_metric,
    load_config,
    preset,
)
from ricci_transport.errors import ConfigurationError
from ricci_transport.flow import FlowConfig
from ricci_transport.harmonics import SpectralField, save_spectral
from ricci_transport.io import (
    dumps_json,
    load_metric,
    load_trajectory,
    read_csv,
    save_metric,
    save_trajectory,
    svg_heatmap,
    svg_timeseries,
    write_json,
)


# -- configuration -------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(PRESETS))
@pytest.mark.parametrize("v", [math.pi, 2 * math.pi, 3 * math.pi])
def test_presets_have_requested_volume(name, v):
    m = initial_metric(preset(name, v=v, eps=0.05, L=16))
    assert m.volume == pytest.approx(v, rel=1e-12)


def test_preset_catalog():
    assert preset("round").perturbation == () and preset("round").eps is None
    assert preset("y20", eps=0.02).perturbation == ((2, 0, 0.02),)
    assert preset("y31", eps=0.02).perturbation == ((3, 1, 0.02),)
    assert len(preset("mixed").perturbation) == 4
    with pytest.raises(ConfigurationError):
        preset("y42")


@pytest.mark.parametrize("bad", [
    {"volume": 0.0}, {"volume": 4 * math.pi}, {"L": 3}, {"ode_tol": 0.0}, {"n_quasi": -1},
    {"perturbation": ((2, 3, 0.1),)}, {"perturbation": ((11, 0, 0.1),)},
])
def test_config_validation(bad):
    with pytest.raises(ConfigurationError):
        RunConfig(**bad)


def test_round_preset_is_exact_sphere():
    m = initial_metric(preset("round", v=2 * math.pi, L=16))
    assert_allclose(m.R, 4.0, rtol=1e-13)


def test_config_hash_ignores_location_and_threads():
    a = preset("y20", eps=0.01)
    assert config_hash(a) == config_hash(a.with_updates(out_dir="elsewhere", threads=7))
    assert config_hash(a) != config_hash(a.with_updates(seed=1))
    assert config_hash(a) != config_hash(a.with_updates(flow=FlowConfig(dt_init=5e-3)))
    assert len(config_hash(a)) == 64


def test_config_round_trip(tmp_path):
    cfg = preset("mixed", eps=0.03, L=24, seed=4)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = load_config(path)
    assert back == cfg and config_hash(back) == config_hash(cfg)
    path.write_text(json.dumps({**cfg.to_dict(), "colour": "red"}))
    with pytest.raises(ConfigurationError):
        load_config(path)
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_perturbation_file(tmp_path):
    stem = save_spectral(tmp_path / "pert", SpectralField.from_modes(8, {(2, 1): 0.03}))
    cfg = RunConfig(L=16, perturbation_file=str(stem))
    ref = initial_metric(RunConfig(L=16, perturbation=((2, 1, 0.03),)))
    assert_allclose(initial_metric(cfg).u.coeffs, ref.u.coeffs, atol=1e-15)
    big = save_spectral(tmp_path / "big", SpectralField.from_modes(8, {(8, 0): 0.01}))
    with pytest.raises(ConfigurationError):
        initial_metric(RunConfig(L=16, perturbation_file=str(big)))


def test_thread_resolution(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads(None) == 1 and resolve_threads(4) == 4
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_threads(None) == 3
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigurationError):
        resolve_threads(None)


def test_sample_points_are_seeded():
    cfg = preset("y20", L=8, n_quasi=50)
    a, b = sample_points(cfg), sample_points(cfg)
    assert a.shape == (9 * 18 + 50, 3) and np.array_equal(a, b)
    assert not np.array_equal(a, sample_points(cfg.with_updates(seed=1)))


# -- io ------------------------------------------------------------------------

def test_json_is_canonical_and_tagged(tmp_path):
    text = dumps_json({"b": np.float64(0.1), "a": [np.int64(2), float("inf")], "c": np.bool_(True)})
    assert text == '{\n  "a": [\n    2,\n    "inf"\n  ],\n  "b": 0.1,\n  "c": true\n}\n'
    path = write_json(tmp_path / "x.json", {"k": 1}, "h0")
    assert json.loads(path.read_text()) == {"k": 1, "config_hash": "h0"}


def test_trajectory_archive_round_trip(tmp_path):
    traj = support.trajectory("y31", 0.05)
    out = save_trajectory(tmp_path / "arch", traj, "cafe", {"L": 32})
    back, manifest = load_trajectory(out)
    assert manifest["config_hash"] == "cafe" and manifest["archive_version"] == 1
    assert manifest["interpolation"] == {"u": "cubic-hermite", "xi": "lagrange-4"}
    assert np.array_equal(back.times, traj.times)
    for a, b in zip(back.checkpoints, traj.checkpoints):
        assert np.array_equal(a.u.coeffs, b.u.coeffs) and np.array_equal(a.xi.coeffs, b.xi.coeffs)
        assert_allclose(a.dudt.coeffs, b.dudt.coeffs, atol=1e-14)
        assert a.diagnostics == b.diagnostics
    assert back.r == traj.r and back.tol_conv == traj.tol_conv and back.config == traj.config
    side = json.loads((out / "u_0000.json").read_text())
    assert side["config_hash"] == "cafe"
    h, rows = read_csv(out / "diagnostics.csv")
    assert h == "cafe" and len(rows) == len(traj.checkpoints)
    assert float(rows[-1]["t"]) == traj.t_final


def test_missing_archive(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_trajectory(tmp_path / "nothing")


def test_metric_file_round_trip(tmp_path):
    m = support.metric0("y20", 0.05, L=16)
    path = save_metric(tmp_path / "m", m, "initial y20", "beef")
    side = json.loads(path.read_text())
    assert side["volume"] == pytest.approx(2 * math.pi) and side["description"] == "initial y20"
    assert side["config_hash"] == "beef"
    assert np.array_equal(load_metric(path).u.coeffs, m.u.coeffs)


def test_svg_writers(tmp_path):
    p = svg_heatmap(tmp_path / "h.svg", np.arange(12.0).reshape(3, 4), "demo", "h1", cell=2)
    text = p.read_text()
    assert text.startswith("<svg") and "<!-- config_hash: h1 -->" in text
    assert text.count("<rect") == 12
    p = svg_timeseries(tmp_path / "t.svg", np.linspace(0, 1, 5), {"a": [1, 0.1, 0.01, 1e-3, 1e-4]},
                       "series", "h1")
    assert "<polyline" in p.read_text()


# -- command line --------------------------------------------------------------

def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def small_archive(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["flow", "--preset", "y20", "--eps", "0.05", "--L", "16", "--out", str(out)]) == 0
    return out


def test_cli_flow_writes_archive(small_archive):
    manifest = json.loads((small_archive / "manifest.json").read_text())
    cfg = json.loads((small_archive / "config.json").read_text())
    assert manifest["config_hash"] == cfg["config_hash"]
    assert manifest["converged"] and manifest["grid"]["L"] == 16
    assert RunConfig.from_dict({k: v for k, v in cfg.items() if k != "config_hash"}).L == 16


def test_cli_certify_and_transport(small_archive, capsys):
    code, out, _ = run_cli(capsys, "certify", "--archive", str(small_archive), "--measure",
                           "--n-quasi", "200", "--threads", "2")
    assert code == 0
    cert = json.loads((small_archive / "certificate.json").read_text())
    assert cert["condition12"] is True and cert["measured"] <= 1.0
    assert cert["provenance"]["atlas"]["samples"] == 17 * 34 + 200
    code, out, _ = run_cli(capsys, "transport", "--archive", str(small_archive), "--n-quasi", "50")
    assert code == 0 and json.loads(out)["samples"] == 17 * 34 + 50
    h, rows = read_csv(small_archive / "atlas.csv")
    assert len(rows) == 17 * 34 + 50 and h == json.loads(out)["config_hash"]


def test_cli_verify(small_archive, capsys):
    code, out, _ = run_cli(capsys, "verify", "--archive", str(small_archive))
    assert code == 0
    rep = json.loads(out)
    assert rep["pushforward"]["worst_error"] <= 1e-3
    assert rep["lichnerowicz"]["holds"] and rep["hessian_decay_monitor"]["verdict"]
    assert rep["decay_rate"]["relative_error"] <= 0.1
    h, rows = read_csv(small_archive / "verification.csv")
    assert h == json.loads((small_archive / "verification.json").read_text())["config_hash"]


def test_cli_report_svg(small_archive, capsys):
    code, out, _ = run_cli(capsys, "report", "--archive", str(small_archive), "--svg")
    assert code == 0
    files = json.loads(out)["files"]
    assert any(f.endswith("timeseries.svg") for f in files)
    assert sum(f.endswith(".svg") for f in files) == 7
    h, rows = read_csv(small_archive / "report.csv")
    assert float(rows[0]["lambda_dot"]) > 0


def test_cli_sweep(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "sweep", "--preset", "y20", "--L", "12", "--eps-list",
                           "0.01", "0.03", "--out", str(tmp_path / "sw"))
    assert code == 0
    table = json.loads(out)
    assert table["Lambda_nondecreasing"] and table["C_nonincreasing"]
    h, rows = read_csv(tmp_path / "sw" / "sweep.csv")
    assert [float(r["eps"]) for r in rows] == [0.01, 0.03] and h == table["config_hash"]


def test_cli_missing_archive_exits_2(tmp_path, capsys):
    code, out, err = run_cli(capsys, "certify", "--archive", str(tmp_path / "none"))
    assert code == 2 and out == ""
    assert json.loads(err)["error"] == "FileNotFoundError"


def test_cli_bad_volume_exits_2(tmp_path, capsys):
    code, _, err = run_cli(capsys, "flow", "--v", "20", "--out", str(tmp_path / "x"))
    assert code == 2 and json.loads(err)["error"] == "ConfigurationError"


def test_cli_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ricci_transport.cli", "verify", "--archive",
                           str(tmp_path / "none")], capture_output=True, text=True)
    assert proc.returncode == 2 and "FileNotFoundError" in proc.stderr

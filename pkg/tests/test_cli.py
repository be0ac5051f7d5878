import csv
import json

import numpy as np
import pytest

from warpflow.cli import RunConfig, main, read_config


def _run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_spectra_prints_and_writes_json(tmp_path, capsys):
    code, cap = _run(capsys, "spectra", "--out", str(tmp_path), "--kmax", "4")
    assert code == 0
    printed = json.loads(cap.out)
    assert printed["B2_lambda"] == [1.5, 0.5, -0.5, -1.5, -2.5]
    assert printed["B2_h"] == [-1, -2, -3, -4, -5]
    data = json.loads((tmp_path / "spectra" / "spectra.json").read_text())
    assert data["alpha"][4] == pytest.approx(5 / 6)
    assert data["predicted_exponent"][3] == pytest.approx(2.0)
    assert (tmp_path / "spectra" / "spectrum.png").stat().st_size > 0
    manifest = json.loads((tmp_path / "spectra" / "manifest.json").read_text())
    assert manifest["kmax"] == 4 and manifest["subcommand"] == "spectra"


def test_spectra_output_is_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        assert _run(capsys, "spectra", "--out", str(tmp_path / name))[0] == 0
    first = (tmp_path / "a" / "spectra" / "spectra.json").read_bytes()
    assert first == (tmp_path / "b" / "spectra" / "spectra.json").read_bytes()


def test_invalid_configuration_exits_1(tmp_path, capsys):
    code, cap = _run(capsys, "spectra", "--out", str(tmp_path), "--p", "2", "--q", "2")
    assert code == 1
    assert "p + q >= 10" in cap.err
    assert _run(capsys, "barriers", "--out", str(tmp_path), "--lemma", "nope")[0] == 1
    assert _run(capsys, "frobnicate")[0] == 1


def test_unknown_config_key_exits_1(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    assert _run(capsys, "spectra", "--config", str(cfg), "--out", str(tmp_path))[0] == 1


def test_flag_overrides_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# spectra settings\nkmax = 2\np = 5\nq = 10   # unequal factors\n")
    assert read_config(cfg) == {"kmax": "2", "p": "5", "q": "10"}
    code, cap = _run(capsys, "spectra", "--config", str(cfg), "--kmax", "3", "--out", str(tmp_path))
    assert code == 0
    manifest = json.loads((tmp_path / "spectra" / "manifest.json").read_text())
    assert manifest["kmax"] == 3 and manifest["q"] == 10
    assert len(json.loads(cap.out)["B2_lambda"]) == 4


def test_output_root_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("WARPFLOW_OUT", str(tmp_path))
    assert _run(capsys, "spectra")[0] == 0
    assert (tmp_path / "spectra" / "spectra.json").exists()


def test_bad_stepper_setting_is_invalid():
    with pytest.raises(ValueError):
        RunConfig("simulate", stepper={"cfl_safety": 2.0}).validate()


def test_barriers_single_lemma(tmp_path, capsys):
    code, cap = _run(capsys, "barriers", "--out", str(tmp_path), "--q", "10", "--lemma", "inner_cone_U", "--n-x", "40", "--n-t", "5")
    assert code == 0
    assert cap.out.startswith("PASS inner_cone_U")
    assert "inner_cone_U" in json.loads((tmp_path / "barriers" / "barriers.json").read_text())
    assert (tmp_path / "barriers" / "violations.png").exists()


def test_initdata_fixture(tmp_path, capsys):
    code, cap = _run(capsys, "initdata", "--out", str(tmp_path), "--direction", "random", "--radius", "0.5")
    assert code == 0
    assert cap.out.count("PASS set") == 3
    rep = json.loads((tmp_path / "initdata" / "initdata.json").read_text())
    assert rep["projection"]["error_relative_to_mode"] < 1e-6
    assert (tmp_path / "initdata" / "profile.csv").exists()
    assert (tmp_path / "initdata" / "fields.png").exists()


def test_diagnose_trajectory(tmp_path, capsys):
    T = 0.3
    t = T - np.geomspace(1e-1, 1e-4, 30)
    path = tmp_path / "traj.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "max_abs_rm", "max_abs_r", "amp_0"])
        for ti in t:
            w.writerow([float(v) for v in (ti, 2.0 * (T - ti) ** -2, 5.0 / (T - ti), np.exp(-0.5 * ti))])
    code, cap = _run(capsys, "diagnose", "--out", str(tmp_path), "--trajectory", str(path))
    assert code == 0, cap.err
    res = json.loads(cap.out)
    assert res["exponent"] == pytest.approx(2.0, rel=1e-6)
    assert res["type"] == "type II"
    assert res["scalar_sup"] == pytest.approx(5.0, rel=1e-6)
    assert res["mode_rates"]["0"] == pytest.approx(-0.5)
    assert res["overlap_max_deviation"] < 0.05


def test_diagnose_rejects_bad_trajectory(tmp_path, capsys):
    path = tmp_path / "traj.csv"
    path.write_text("time,value\n0,1\n")
    assert _run(capsys, "diagnose", "--out", str(tmp_path), "--trajectory", str(path))[0] == 1


def test_oracle_exits_0(tmp_path, capsys):
    code, cap = _run(capsys, "oracle", "--out", str(tmp_path))
    assert code == 0
    assert cap.out.count("PASS") == 3
    assert json.loads((tmp_path / "oracle" / "oracle.json").read_text())["rfc_stationarity"]["passed"]

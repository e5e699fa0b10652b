import csv
import json

import pytest

from masskit import snapshot
from masskit.cli import Config, main
from masskit.conformal import ExteriorManifold


def write_config(tmp_path, extension="type = schwarzschild\nmass = 0.4", params=""):
    path = tmp_path / "case.ini"
    path.write_text("[domain]\ntype = round_ball\nradius = 1.0\n\n"
                    f"[extension]\n{extension}\n\n[params]\ngrid = 6x12\nepsilon = 0.1\n{params}\n")
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_config_defaults():
    cfg = Config()
    assert cfg.epsilon == 0.1 and cfg.rho_max == 400
    assert cfg.grid.shape == (8, 16)
    assert cfg.params.s0 == 0.1 and cfg.params.delta0 == 0.05


def test_config_file(tmp_path):
    cfg = Config(write_config(tmp_path, params="s0 = 0.05\ndelta0 = 0.02"))
    assert cfg.grid.shape == (6, 12)
    assert cfg.params.s0 == 0.05 and cfg.params.delta0 == 0.02
    assert isinstance(cfg.extension(), ExteriorManifold)


def test_run(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out_csv = tmp_path / "stages.csv"
    code, out = run(capsys, "run", "--config", cfg, "--csv", str(out_csv),
                    "--out", str(tmp_path / "final.snap"))
    assert code == 0
    d = json.loads(out)
    assert d["verdict"] == {"H_within_epsilon": True, "mass_decreased": True}
    rows = list(csv.DictReader(out_csv.open()))
    assert [r["label"] for r in rows][-1] == "leveldown"
    assert isinstance(snapshot.load(tmp_path / "final.snap"), ExteriorManifold)


def test_validate(tmp_path, capsys):
    code, out = run(capsys, "validate", "--config", write_config(tmp_path), "--penrose")
    assert code == 0
    d = json.loads(out)
    assert d["passes"] and d["strict_jump"]


def test_bridge(tmp_path, capsys):
    code, out = run(capsys, "bridge", "--config", write_config(tmp_path))
    assert code == 0
    d = json.loads(out)
    assert d["H_inner_error"] < 1e-4 and d["H_outer_gap_min"] > 0


def test_mollify_concentration(tmp_path, capsys):
    path = tmp_path / "I.csv"
    code, out = run(capsys, "mollify", "--config", write_config(tmp_path), "--delta", "0.01",
                    "--report-concentration", "--csv", str(path))
    assert code == 0
    d = json.loads(out)
    assert d["ratio_mean"] == pytest.approx(2.0, rel=1e-4)
    assert len(path.read_text().splitlines()) == 6 * 12 + 1


def test_tilt_then_annihilate_and_leveldown(tmp_path, capsys):
    cfg = write_config(tmp_path)
    snap = str(tmp_path / "tilt.snap")
    code, out = run(capsys, "tilt", "--config", cfg, "--s", "0.1", "--out", snap)
    assert code == 0
    d = json.loads(out)
    assert d["dH_boundary"]["max"] < 0
    assert d["A_identity"] == pytest.approx(d["A_fit"], rel=1e-4)
    code, out = run(capsys, "annihilate", "--input", snap)
    assert code == 0
    code, out = run(capsys, "leveldown", "--input", snap, "--t", "0.5")
    assert code == 0


def test_static_descent(tmp_path, capsys):
    cfg = write_config(tmp_path, "type = quasi_spherical\nu0 = 1.1\nu0_cos2 = 0.05")
    code, out = run(capsys, "static-descent", "--config", cfg)
    assert code == 0
    assert json.loads(out)["A_fit"] == 0.0


def test_errors_exit_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "type = wormhole")
    assert main(["validate", "--config", cfg]) == 2
    assert main(["validate", "--config", str(tmp_path / "missing.ini")]) == 2
    cfg = write_config(tmp_path, "type = flat")
    assert main(["run", "--config", cfg]) == 2
    assert "error" in capsys.readouterr().err

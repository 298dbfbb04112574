"""Tests for the command-line interface."""

import json

from typer.testing import CliRunner

from endow.cli import app

runner = CliRunner()


def test_version():
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert "endow version" in result.output


def test_presets_lists_names():
    result = runner.invoke(app, ["presets"])
    assert result.exit_code == 0
    assert "baseline" in result.output


def test_classify_sell_all():
    result = runner.invoke(app, ["classify", "--aux", "b1=1", "b2=1", "b3=-0.2", "R=0.5"])
    assert result.exit_code == 0
    assert "SellAll" in result.output


def test_classify_illposed_preset():
    result = runner.invoke(app, ["classify", "--preset", "ill-posed"])
    assert result.exit_code == 0
    assert "IllPosed" in result.output


def test_exit_codes():
    degenerate = runner.invoke(app, ["classify", "--aux", "b1=-1", "b2=1", "b3=0.4", "R=0.5"])
    assert degenerate.exit_code == 3
    missing = runner.invoke(app, ["classify", "--aux", "b1=1", "b2=1", "b3=0.4"])
    assert missing.exit_code == 2
    malformed = runner.invoke(app, ["classify", "--aux", "b1"])
    assert malformed.exit_code == 2
    nothing = runner.invoke(app, ["classify"])
    assert nothing.exit_code == 2


def test_classify_market_file(tmp_path):
    params = {"r": 0.02, "beta": 0.10, "mu": 0.07, "sigma": 0.30, "alpha": 0.05,
              "eta": 0.40, "rho": 0.30, "R": 0.5, "x0": 1.0, "y0": 1.0, "theta0": 1.0}
    path = tmp_path / "params.json"
    path.write_text(json.dumps(params))
    result = runner.invoke(app, ["classify", "--params", str(path)])
    assert result.exit_code == 0
    assert "FiniteRatio" in result.output
    bad = runner.invoke(app, ["classify", "--params", str(path), "sigma=-1"])
    assert bad.exit_code == 2


def test_solve_without_endowment(tmp_path):
    out = tmp_path / "solve"
    result = runner.invoke(app, ["solve", "--aux", "b1=1", "b2=1", "b3=-0.2", "R=0.5",
                                 "theta0=0", "--out", str(out)])
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "summary.json").read_text())
    assert summary["regime"] == "SellAll"
    assert summary["p"] == 0.0
    assert (out / "policy.csv").exists()


def test_solve_json_policy_on_custom_grid(tmp_path):
    out = tmp_path / "solve"
    result = runner.invoke(app, ["solve", "--preset", "finite-ratio", "--format", "json",
                                 "--grid", "z=0:1:11", "--out", str(out)])
    assert result.exit_code == 0, result.output
    rows = json.loads((out / "policy.json").read_text())
    assert len(rows) == 11
    assert rows[0]["z"] == 0.0


def test_verify_finite_ratio(tmp_path):
    out = tmp_path / "verify"
    result = runner.invoke(app, ["verify", "--preset", "finite-ratio", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "PASS" in result.output
    assert (out / "residuals.json").exists()


def test_verify_illposed_has_nothing_to_check(tmp_path):
    result = runner.invoke(app, ["verify", "--preset", "ill-posed", "--out", str(tmp_path)])
    assert result.exit_code == 0
    assert "nothing to verify" in result.output


def test_simulate_writes_path(tmp_path):
    out = tmp_path / "sim"
    result = runner.invoke(app, ["simulate", "--preset", "sell-all", "--npaths", "8",
                                 "--dt", "0.05", "--horizon", "1", "--out", str(out)])
    assert result.exit_code == 0, result.output
    header = (out / "path.csv").read_text().splitlines()[0]
    assert header == "t,Y,Theta,X,Z,C,Pi,L"
    assert (out / "mc_summary.json").exists()


def test_simulate_rejects_bad_grid(tmp_path):
    result = runner.invoke(app, ["simulate", "--preset", "sell-all", "--dt", "1",
                                 "--horizon", "0.5", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_regions_map(tmp_path, monkeypatch):
    import endow.experiments.sweep as sweep_mod

    monkeypatch.setattr(sweep_mod, "find_b3_crit", lambda b1, b2, R, tol, opts=None: 1.0)
    result = runner.invoke(app, ["regions", "--b1", "1", "--R", "0.5",
                                 "--grid", "b2=1,2;b3=-0.5,0.3,3", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "regions.csv").exists()
    assert "IllPosed" in result.output


def test_b3crit_checks_inputs():
    assert runner.invoke(app, ["b3crit", "--b1", "1", "--b2", "0.5", "--R", "0.5"]).exit_code == 2
    assert runner.invoke(app, ["b3crit", "--b1", "0", "--b2", "1", "--R", "0.5"]).exit_code == 3

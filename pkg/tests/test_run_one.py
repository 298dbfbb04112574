"""Tests for the single-parameter-set pipeline."""

import json
import math

from endow.experiments.run_one import run_single, solve_one, solve_summary
from endow.model.params import Regime, aux_mode_params
from endow.sim.paths import SimConfig

from .conftest import upper_bound_lookup

QUICK = SimConfig(dt=0.05, horizon=1.0, npaths=16, seed=1)


def test_illposed_summary_is_infinite():
    mp, ap = aux_mode_params({"b1": 1.0, "b2": 1.0, "b3": 2.6, "R": 0.5})
    pol, report = solve_one(mp, ap)
    assert pol is None
    assert report.regime is Regime.ILL_POSED
    summary = solve_summary(pol, report, mp)
    assert math.isinf(summary["p"]) and math.isinf(summary["value"])


def test_pipeline_with_verification_and_simulation(tmp_path):
    mp, ap = aux_mode_params({"b1": 1.0, "b2": 1.5, "b3": 0.4, "R": 0.5})
    result = run_single(mp, ap, output_dir=tmp_path, sim_cfg=QUICK, refine=True,
                        crit_lookup=upper_bound_lookup)
    assert result["verify_ok"]
    assert result["summary"]["regime"] == "FiniteRatio"
    assert result["simulation"]["npaths"] == 16
    assert "refinement" in result
    for name in ("policy.csv", "residuals.json", "path.csv", "mc_summary.json",
                 "refinement.json", "summary.json"):
        assert (tmp_path / name).exists(), name
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["success"] == result["success"]


def test_pipeline_runs_divergent_demo(tmp_path):
    mp, ap = aux_mode_params({"b1": 1.0, "b2": 1.5, "b3": 3.0, "R": 0.5, "theta0": 1e3})
    result = run_single(mp, ap, output_dir=tmp_path, sim_cfg=QUICK)
    assert result["summary"]["regime"] == "IllPosed"
    assert result["simulation"]["increasing"] is True
    assert (tmp_path / "illposed.json").exists()
    assert not (tmp_path / "policy.csv").exists()
    data = json.loads((tmp_path / "summary.json").read_text())
    assert data["p"] == "inf"

"""Tests for grid parsing, sweeps, monotonicity metrics and region maps."""

import math

import numpy as np
import pytest

from endow.errors import BracketFailure, InvalidParams
from endow.experiments.metrics import calculate_metrics, format_metrics_report
from endow.experiments.sweep import (
    grid_cells,
    parse_grid,
    region_rows,
    run_cell,
    run_regions,
    run_sweep,
    sweep_mode,
)


def unit_crit(b1, b2, R, tol):
    return 1.0


def test_parse_grid():
    grid = parse_grid("b3=0.1:0.6:6; b1=0.5,1")
    assert list(grid) == ["b3", "b1"]
    assert np.allclose(grid["b3"], [0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    assert grid["b1"] == [0.5, 1.0]
    assert parse_grid("R=2") == {"R": [2.0]}


@pytest.mark.parametrize("text", ["", "b3", "b3=1:2", "b3=1:2:0", "b3=a,b", "=1"])
def test_parse_grid_rejects(text):
    with pytest.raises(InvalidParams):
        parse_grid(text)


def test_grid_cells_first_axis_slowest():
    cells = grid_cells({"b3": [0.1, 0.2], "b1": [1.0, 2.0]}, {"R": 0.5})
    assert cells == [
        {"R": 0.5, "b3": 0.1, "b1": 1.0},
        {"R": 0.5, "b3": 0.1, "b1": 2.0},
        {"R": 0.5, "b3": 0.2, "b1": 1.0},
        {"R": 0.5, "b3": 0.2, "b1": 2.0},
    ]


def test_sweep_mode():
    assert sweep_mode(["b1", "b2", "b3", "R"]) == "aux"
    assert sweep_mode(["r", "beta", "R"]) == "market"
    with pytest.raises(InvalidParams):
        sweep_mode(["b1", "beta"])


def test_run_cell_reports_failures():
    row = run_cell({"b1": 1.0, "b2": 1.0, "b3": 0.4})
    assert row["success"] is False
    assert row["error"].startswith("InvalidParams")
    assert math.isnan(row["qstar"])
    ill = run_cell({"b1": 1.0, "b2": 1.0, "b3": 2.6, "R": 0.5})
    assert ill["regime"] == "IllPosed" and math.isinf(ill["p"])


def _rows(qs, ps):
    return [{"b1": 1.0, "b3": 0.1 * (i + 1), "regime": "FiniteRatio", "qstar": q, "p": p,
             "success": True} for i, (q, p) in enumerate(zip(qs, ps))]


def test_metrics_flag_a_decrease():
    rows = _rows([0.4, 0.5, 0.45, 0.6], [1.0, 1.1, 1.2, 1.3])
    metrics = calculate_metrics(rows, ["b3"])
    assert metrics.total_violations == 1
    assert metrics.by_axis["b3"].violations == {"qstar": 1, "p": 0}
    assert metrics.violations[0]["output"] == "qstar"
    assert "SWEEP MONOTONICITY REPORT" in format_metrics_report(metrics)


def test_metrics_accept_infinite_tail_along_b3():
    rows = _rows([0.4, 0.5, 1.0], [1.0, 1.1, math.inf])
    metrics = calculate_metrics(rows, ["b3"])
    assert metrics.total_violations == 0
    assert metrics.by_axis["b3"].pairs == 4
    back = _rows([0.4, 1.0], [math.inf, 1.0])
    assert calculate_metrics(back, ["b3"]).total_violations == 1


def test_metrics_count_failures_and_unchecked_axes():
    rows = _rows([0.4, 0.5], [1.0, 1.1])
    rows.append({"b1": 1.0, "b3": 0.3, "success": False, "error": "StiffnessFailure: stalled"})
    metrics = calculate_metrics(rows, ["b3", "R"])
    assert metrics.failed == 1
    assert metrics.error_types == {"StiffnessFailure": 1}
    assert metrics.unchecked_axes == ["R"]


def test_run_sweep_in_b3(tmp_path):
    grid = parse_grid("b3=0.1:0.6:6")
    rows, metrics = run_sweep(grid, {"b1": 1.0, "b2": 1.0, "R": 0.5}, output_dir=tmp_path,
                              crit_lookup=unit_crit)
    assert all(r["success"] for r in rows)
    assert {r["regime"] for r in rows} == {"FiniteRatio"}
    q = [r["qstar"] for r in rows]
    assert all(b > a for a, b in zip(q, q[1:]))
    assert metrics.total_violations == 0
    assert (tmp_path / "sweep.csv").exists()
    assert (tmp_path / "rows.jsonl").exists()
    assert (tmp_path / "summary.json").exists()


def test_region_rows_unit_b1():
    rows = region_rows(1.0, 0.5, [1.0, 2.0], [-0.5, 0.3, 0.8, 2.0, 3.0], crit_lookup=unit_crit)
    regimes = {(r["b2"], r["b3"]): r["regime"] for r in rows}
    assert regimes == {
        (1.0, -0.5): "SellAll", (1.0, 0.3): "FiniteRatio", (1.0, 0.8): "FiniteRatio",
        (1.0, 2.0): "NoFiniteRatio", (1.0, 3.0): "IllPosed",
        (2.0, -0.5): "SellAll", (2.0, 0.3): "FiniteRatio", (2.0, 0.8): "FiniteRatio",
        (2.0, 2.0): "NoFiniteRatio", (2.0, 3.0): "IllPosed",
    }
    assert rows[0]["illposed_b3"] == 2.5
    assert rows[-1]["illposed_b3"] == 3.0


def test_region_rows_without_illposed_region():
    rows = region_rows(1.0, 2.0, [1.0], [-0.5, 0.3, 2.0, 3.0],
                       crit_lookup=lambda b1, b2, R, tol: 3.0)
    assert [r["regime"] for r in rows] == ["SellAll", "FiniteRatio", "FiniteRatio",
                                          "NoFiniteRatio"]
    assert all(math.isinf(r["illposed_b3"]) for r in rows)


def test_region_rows_mark_failed_columns():
    def flaky(b1, b2, R, tol):
        if b2 > 1.5:
            raise BracketFailure("no sign change")
        return 1.0

    rows = region_rows(1.0, 0.5, [1.0, 2.0], [0.3, 0.8], crit_lookup=flaky)
    regimes = [r["regime"] for r in rows]
    assert regimes == ["FiniteRatio", "FiniteRatio", "FiniteRatio", "error: BracketFailure"]
    assert math.isnan(rows[-1]["b3_crit"])


def test_run_regions_writes_map(tmp_path):
    rows = run_regions(1.0, 0.5, parse_grid("b2=1,2;b3=-0.5,0.3"), output_dir=tmp_path,
                       crit_lookup=unit_crit)
    assert len(rows) == 4
    assert (tmp_path / "regions.csv").read_text().startswith("b2,b3,regime,b3_crit,illposed_b3")
    with pytest.raises(InvalidParams):
        run_regions(1.0, 0.5, parse_grid("b3=0.1,0.2"))


def test_certainty_equivalent_falls_with_b1():
    rows, metrics = run_sweep(parse_grid("b1=0.5:2:4"), {"b2": 1.0, "b3": 0.4, "R": 0.5})
    p = [r["p"] for r in rows]
    assert all(b <= a for a, b in zip(p, p[1:]))
    assert metrics.total_violations == 0


def test_alpha_sweep_in_market_mode():
    from endow.model.params import load_presets

    base = next(p["market"] for p in load_presets() if p["name"] == "baseline")
    rows, metrics = run_sweep(parse_grid("alpha=0.035:0.065:4"), dict(base),
                              crit_lookup=unit_crit)
    assert rows[0]["regime"] == "SellAll"
    assert all(r["success"] for r in rows)
    assert metrics.total_violations == 0
    assert metrics.by_axis["alpha"].pairs == 6


def test_three_axis_sweep_is_monotone(tmp_path):
    grid = parse_grid("b1=0.5,2;b2=1,2;b3=0.1,0.25,0.4")
    rows, metrics = run_sweep(grid, {"R": 0.5}, output_dir=tmp_path, crit_lookup=unit_crit)
    assert len(rows) == 12
    assert all(r["success"] for r in rows)
    assert {r["regime"] for r in rows} == {"FiniteRatio"}
    assert metrics.failed == 0
    assert metrics.total_violations == 0
    assert metrics.unchecked_axes == []
    assert {a: metrics.by_axis[a].pairs for a in grid} == {"b1": 12, "b2": 12, "b3": 16}

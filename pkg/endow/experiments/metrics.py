"""Monotonicity metrics for parameter sweeps."""

import math
from dataclasses import dataclass, field
from typing import Any

from endow.model.params import AUX_KEYS, MARKET_KEYS

# +1: q* and p increase along the axis, -1: they decrease
EXPECTED_DIRECTION: dict[str, int] = {
    "b1": -1,
    "b2": -1,
    "b3": 1,
    "alpha": 1,  # moves b3 only
    "beta": -1,  # moves b1 only
}

OUTPUTS = ("qstar", "p")
REL_TOL = 1e-8


@dataclass
class AxisMetrics:
    """Pairwise comparisons along one swept axis."""

    direction: int = 0
    pairs: int = 0
    skipped: int = 0
    violations: dict[str, int] = field(default_factory=lambda: {k: 0 for k in OUTPUTS})


@dataclass
class SweepMetrics:
    total_cells: int = 0
    successful: int = 0
    failed: int = 0
    by_axis: dict[str, AxisMetrics] = field(default_factory=dict)
    by_regime: dict[str, int] = field(default_factory=dict)
    violations: list[dict[str, Any]] = field(default_factory=list)
    error_types: dict[str, int] = field(default_factory=dict)
    unchecked_axes: list[str] = field(default_factory=list)

    @property
    def total_violations(self) -> int:
        return len(self.violations)


def _consistent(a: float, b: float, direction: int, axis: str) -> bool | None:
    """Whether b follows a in `direction`; None when the pair is not comparable."""
    if math.isnan(a) or math.isnan(b):
        return None
    if math.isinf(a) or math.isinf(b):
        # an infinite value only appears past the ill-posed frontier, reached by raising b3
        if direction > 0 and axis == "b3":
            return not (math.isinf(a) and not math.isinf(b))
        return None
    return direction * (b - a) >= -REL_TOL * (1.0 + abs(a))


def calculate_metrics(rows: list[dict[str, Any]], axes: list[str]) -> SweepMetrics:
    """Count monotonicity violations of q* and p along each axis."""
    metrics = SweepMetrics(total_cells=len(rows))
    ok = [r for r in rows if r.get("success")]
    metrics.successful = len(ok)
    metrics.failed = len(rows) - len(ok)
    for r in ok:
        metrics.by_regime[r["regime"]] = metrics.by_regime.get(r["regime"], 0) + 1
    for r in rows:
        if not r.get("success"):
            kind = str(r.get("error", "Unknown")).split(":")[0]
            metrics.error_types[kind] = metrics.error_types.get(kind, 0) + 1
    if not ok:
        return metrics

    inputs = [k for k in ok[0] if k in MARKET_KEYS or k in AUX_KEYS]
    for axis in axes:
        direction = EXPECTED_DIRECTION.get(axis)
        if direction is None:
            metrics.unchecked_axes.append(axis)
            continue
        am = AxisMetrics(direction=direction)
        groups: dict[tuple[float, ...], list[dict[str, Any]]] = {}
        for r in ok:
            key = tuple(r[k] for k in inputs if k != axis)
            groups.setdefault(key, []).append(r)
        for members in groups.values():
            members.sort(key=lambda r: r[axis])
            for prev, cur in zip(members, members[1:]):
                for out in OUTPUTS:
                    verdict = _consistent(float(prev[out]), float(cur[out]), direction, axis)
                    if verdict is None:
                        am.skipped += 1
                        continue
                    am.pairs += 1
                    if not verdict:
                        am.violations[out] += 1
                        metrics.violations.append({
                            "axis": axis, "output": out,
                            "from": {axis: prev[axis], out: prev[out]},
                            "to": {axis: cur[axis], out: cur[out]},
                        })
        metrics.by_axis[axis] = am
    return metrics


def format_metrics_report(metrics: SweepMetrics) -> str:
    lines = [
        "=" * 60,
        "SWEEP MONOTONICITY REPORT",
        "=" * 60,
        "",
        "## Overview",
        f"  Cells: {metrics.total_cells}",
        f"  Solved: {metrics.successful}",
        f"  Failed: {metrics.failed}",
        f"  Violations: {metrics.total_violations}",
        "",
    ]
    if metrics.by_regime:
        lines.append("## By Regime")
        for regime, count in metrics.by_regime.items():
            lines.append(f"  {regime}: {count}")
        lines.append("")

    if metrics.by_axis:
        lines.append("## By Axis")
        for axis, am in metrics.by_axis.items():
            trend = "increasing" if am.direction > 0 else "decreasing"
            lines.append(f"  {axis} (expected {trend}):")
            lines.append(f"    Pairs checked: {am.pairs} (skipped {am.skipped})")
            for out, n in am.violations.items():
                lines.append(f"    {out} violations: {n}")
        lines.append("")

    if metrics.unchecked_axes:
        lines.append("## Unchecked Axes")
        lines.append(f"  {', '.join(metrics.unchecked_axes)}: no expected direction")
        lines.append("")

    if metrics.violations:
        lines.append("## Violations")
        for v in metrics.violations[:20]:
            lines.append(f"  {v['axis']} / {v['output']}: {v['from']} -> {v['to']}")
        if len(metrics.violations) > 20:
            lines.append(f"  ... {len(metrics.violations) - 20} more")
        lines.append("")

    if metrics.error_types:
        lines.append("## Errors")
        for kind, count in sorted(metrics.error_types.items(), key=lambda x: -x[1]):
            lines.append(f"  {kind}: {count}")
        lines.append("")

    lines.append("=" * 60)
    return "\n".join(lines)

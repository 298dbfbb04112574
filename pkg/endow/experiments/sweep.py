"""Comparative-statics sweeps and region maps over parameter grids."""

import itertools
import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from endow.config import settings
from endow.errors import BracketFailure, EndowError, InvalidParams
from endow.export import write_csv, write_json, write_jsonl
from endow.experiments.metrics import SweepMetrics, calculate_metrics
from endow.model.params import (
    AUX_KEYS,
    MARKET_KEYS,
    Regime,
    aux_from_b,
    aux_mode_params,
    classify_regime,
    derive_aux_params,
    market_from_mapping,
)
from endow.solver.ode import ToleranceOptions, find_b3_crit, illposed_threshold
from endow.solver.policy import build_policy, certainty_equivalent

logger = logging.getLogger(__name__)

T = TypeVar("T")
U = TypeVar("U")


def parse_grid(text: str) -> dict[str, list[float]]:
    """Parse `key=start:stop:num` or `key=v1,v2,...` axes separated by `;`.

    A bare `key=v` fixes the value.
    """
    grid: dict[str, list[float]] = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        key, sep, body = part.partition("=")
        key = key.strip()
        if not sep or not key:
            raise InvalidParams(f"bad grid axis {part!r}; expected key=start:stop:num")
        try:
            if ":" in body:
                start, stop, num = body.split(":")
                n = int(num)
                if n < 1:
                    raise ValueError("num must be positive")
                values = np.linspace(float(start), float(stop), n).tolist()
            else:
                values = [float(v) for v in body.split(",")]
        except ValueError as e:
            raise InvalidParams(f"bad grid axis {part!r}: {e}") from e
        grid[key] = values
    if not grid:
        raise InvalidParams("empty grid")
    return grid


def grid_cells(grid: dict[str, list[float]], base: dict[str, float] | None = None
               ) -> list[dict[str, float]]:
    """Cartesian product of the axes over `base`, first axis slowest."""
    base = base or {}
    keys = list(grid)
    return [{**base, **dict(zip(keys, combo))}
            for combo in itertools.product(*(grid[k] for k in keys))]


def _map(fn: Callable[[T], U], items: Sequence[T], parallel: int) -> list[U]:
    """Apply fn in order, on a thread pool when parallel > 1."""
    workers = min(parallel, settings.threads, max(len(items), 1))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sweep_mode(keys: Sequence[str]) -> str:
    """'market' when the cell keys are market parameters, else 'aux'."""
    if set(keys) <= set(MARKET_KEYS):
        return "market"
    if set(keys) <= set(AUX_KEYS):
        return "aux"
    raise InvalidParams(f"cannot mix market and aux keys: {sorted(keys)}")


def run_cell(values: dict[str, float], *, crit_lookup: Any = None) -> dict[str, Any]:
    """q*, z* and p(x0, y0, theta0) for one parameter set."""
    row: dict[str, Any] = dict(values)
    try:
        if sweep_mode(list(values)) == "market":
            mp = market_from_mapping(values)
            ap = derive_aux_params(mp)
        else:
            mp, ap = aux_mode_params(values)
        report = classify_regime(ap, mp.R, crit_lookup=crit_lookup, with_qstar=False)
        row["regime"] = report.regime.value
        if report.regime is Regime.ILL_POSED:
            row.update(qstar=1.0, zstar=math.inf, p=math.inf)
        else:
            pol = build_policy(mp, ap, report, crit_lookup=crit_lookup)
            row.update(
                regime=pol.regime.value,
                qstar=pol.qstar,
                zstar=pol.zstar,
                p=certainty_equivalent(pol, mp.x0, mp.y0, mp.theta0),
            )
        row["success"] = True
    except EndowError as e:
        logger.warning("cell %s failed: %s", values, e)
        row.update(regime=None, qstar=math.nan, zstar=math.nan, p=math.nan, success=False,
                   error=f"{type(e).__name__}: {e}")
    return row


def run_sweep(
    grid: dict[str, list[float]],
    base: dict[str, float] | None = None,
    *,
    output_dir: Path | None = None,
    parallel: int = 1,
    crit_lookup: Any = None,
) -> tuple[list[dict[str, Any]], SweepMetrics]:
    """Run every cell, check monotonicity along each swept axis and write the outputs."""
    cells = grid_cells(grid, base)
    logger.info("sweeping %d cells over %s", len(cells), ", ".join(grid))
    rows = _map(lambda v: run_cell(v, crit_lookup=crit_lookup), cells, parallel)

    axes = [k for k, v in grid.items() if len(v) > 1]
    metrics = calculate_metrics(rows, axes)

    if output_dir is not None:
        header = [*cells[0].keys(), "regime", "qstar", "zstar", "p"]
        write_csv(output_dir / "sweep.csv", rows, header=header)
        write_jsonl(output_dir / "rows.jsonl", rows)
        write_json(output_dir / "summary.json", {
            "cells": len(rows),
            "successful": metrics.successful,
            "failed": metrics.failed,
            "violations": metrics.total_violations,
            "axes": axes,
            "timestamp": datetime.now().isoformat(),
        })
    return rows, metrics


def region_rows(
    b1: float,
    R: float,
    b2_values: Sequence[float],
    b3_values: Sequence[float],
    *,
    b4: float | None = None,
    parallel: int = 1,
    crit_lookup: Any = None,
) -> list[dict[str, Any]]:
    """Regime of every (b2, b3) cell for fixed (b1, R).

    b3_crit is computed once per b2 column. Each row carries the critical b3 and the
    infinite-value frontier b1/(1-R) + b2 R (inf when R > 1).
    """
    opts = ToleranceOptions.from_settings()
    lookup = crit_lookup or (lambda a, b, r, t: find_b3_crit(a, b, r, t, opts=opts))

    def column_crit(b2: float) -> float:
        try:
            return float(lookup(b1, b2, R, opts.b3crit_tol))
        except EndowError as e:
            logger.warning("b3_crit failed at b2=%g: %s", b2, e)
            return math.nan

    crits = _map(column_crit, list(b2_values), parallel)
    rows: list[dict[str, Any]] = []
    for b2, crit in zip(b2_values, crits):
        frontier = illposed_threshold(b1, b2, R)

        def fixed(a: float, b: float, r: float, t: float, _c: float = crit) -> float:
            if math.isnan(_c):
                raise BracketFailure(f"no critical b3 at b2={b}")
            return _c

        for b3 in b3_values:
            try:
                ap = aux_from_b(b1, b2, b3, R, b4)
                regime = classify_regime(ap, R, crit_lookup=fixed, with_qstar=False).regime.value
            except EndowError as e:
                regime = f"error: {type(e).__name__}"
            rows.append({"b2": b2, "b3": b3, "regime": regime, "b3_crit": crit,
                         "illposed_b3": frontier})
    logger.info("region map: %d cells (b1=%g, R=%g)", len(rows), b1, R)
    return rows


def run_regions(
    b1: float,
    R: float,
    grid: dict[str, list[float]],
    *,
    output_dir: Path | None = None,
    parallel: int = 1,
    crit_lookup: Any = None,
) -> list[dict[str, Any]]:
    """Region map over the b2 and b3 axes of `grid`; writes regions.csv."""
    if "b2" not in grid or "b3" not in grid:
        raise InvalidParams("region grid needs both b2 and b3 axes")
    b4 = grid["b4"][0] if "b4" in grid else None
    rows = region_rows(b1, R, grid["b2"], grid["b3"], b4=b4, parallel=parallel,
                       crit_lookup=crit_lookup)
    if output_dir is not None:
        write_csv(output_dir / "regions.csv", rows,
                  header=["b2", "b3", "regime", "b3_crit", "illposed_b3"])
        counts: dict[str, int] = {}
        for r in rows:
            counts[r["regime"]] = counts.get(r["regime"], 0) + 1
        write_json(output_dir / "summary.json", {"b1": b1, "R": R, "cells": len(rows),
                                                 "by_regime": counts})
    return rows

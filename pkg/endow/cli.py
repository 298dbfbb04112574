"""Command-line interface for endow."""

import json
import math
from collections.abc import Iterator
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import typer
from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from endow.config import settings, setup_logging
from endow.errors import DegenerateMerton, EndowError, InvalidParams, StepRejection

app = typer.Typer(help="endow: consumption, investment and sales with an endowed asset")
console = Console()

PAIRS_HELP = "key=value pairs: aux parameters with --aux, market overrides otherwise"


class ExportFormat(str, Enum):
    csv = "csv"
    json = "json"


def exit_code(e: EndowError) -> int:
    if isinstance(e, InvalidParams):
        return 2
    if isinstance(e, DegenerateMerton):
        return 3
    if isinstance(e, StepRejection):
        return 5
    return 1


@contextmanager
def _errors() -> Iterator[None]:
    try:
        yield
    except EndowError as e:
        console.print(f"[red]Error ({type(e).__name__}): {e}[/red]")
        raise typer.Exit(exit_code(e)) from e


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.10g}" if math.isfinite(v) else str(v)
    return "-" if v is None else str(v)


def _base_values(params: Optional[Path], preset: Optional[str], aux: bool,
                 pairs: list[str]) -> dict[str, float]:
    """Raw parameter mapping from a file, a preset or aux pairs (pairs override)."""
    from endow.model.params import load_presets, parse_pairs

    overrides = parse_pairs(pairs)
    if aux:
        return overrides
    if preset:
        for p in load_presets():
            if p.get("name") == preset:
                block = p.get("market") or p.get("aux") or {}
                return {**{k: float(v) for k, v in block.items()}, **overrides}
        raise InvalidParams(f"preset {preset!r} not found")
    if params:
        try:
            data = json.loads(params.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidParams(f"cannot read parameter file {params}: {e}") from e
        if not isinstance(data, dict):
            raise InvalidParams(f"{params}: expected a JSON object")
        return {**data, **overrides}
    raise InvalidParams("give --params FILE, --preset NAME or --aux k=v ...")


def _resolve(params: Optional[Path], preset: Optional[str], aux: bool,
             pairs: list[str]) -> tuple[Any, Any]:
    from endow.model.params import (
        AUX_KEYS,
        aux_mode_params,
        derive_aux_params,
        market_from_mapping,
    )

    values = _base_values(params, preset, aux, pairs)
    if aux or set(values) <= set(AUX_KEYS):
        return aux_mode_params(values)
    mp = market_from_mapping(values)
    return mp, derive_aux_params(mp)


def _check_b1_R(b1: float, R: float) -> None:
    if not R > 0 or R == 1:
        raise InvalidParams(f"R must be positive and different from 1, got {R}")
    if not b1 > 0:
        raise DegenerateMerton(f"b1 = {b1} <= 0: no finite frictionless value")


def _crit_lookup() -> Any:
    if not settings.cache_enabled:
        return None
    from endow.cache import cached_b3_crit

    return cached_b3_crit


def _out_dir(out: Optional[Path], kind: str) -> Path:
    from endow.experiments.run_one import default_output_dir

    return out or default_output_dir(kind)


def _print_mapping(title: str, data: dict[str, Any]) -> None:
    table = Table(title=title)
    table.add_column("Key", style="cyan")
    table.add_column("Value", style="green")
    for k, v in data.items():
        if isinstance(v, (dict, list)):
            continue
        table.add_row(k, _fmt(v))
    console.print(table)


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="DEBUG/INFO/WARNING/ERROR"),
) -> None:
    setup_logging((log_level or settings.log_level).upper())


@app.command()
def classify(
    pairs: Optional[list[str]] = typer.Argument(None, help=PAIRS_HELP),
    params: Optional[Path] = typer.Option(None, "--params", help="JSON parameter file"),
    preset: Optional[str] = typer.Option(None, "--preset", help="Named preset"),
    aux: bool = typer.Option(False, "--aux", help="Pairs are b1, b2, b3, R (b4, x0, y0, theta0)"),
) -> None:
    """Tag the parameters with their regime."""
    from endow.model.params import classify_regime

    with _errors():
        mp, ap = _resolve(params, preset, aux, pairs or [])
        report = classify_regime(ap, mp.R, crit_lookup=_crit_lookup())

    parts = [report.regime.value]
    if report.qstar is not None:
        parts.append(f"qstar={_fmt(report.qstar)}")
        parts.append(f"zstar={_fmt(report.zstar)}")
    if report.b3_crit is not None:
        parts.append(f"b3_crit={_fmt(report.b3_crit)}")
    console.print(", ".join(parts))
    console.print(f"[dim]{report.notes}[/dim]")


@app.command()
def solve(
    pairs: Optional[list[str]] = typer.Argument(None, help=PAIRS_HELP),
    params: Optional[Path] = typer.Option(None, "--params", help="JSON parameter file"),
    preset: Optional[str] = typer.Option(None, "--preset", help="Named preset"),
    aux: bool = typer.Option(False, "--aux", help="Pairs are b1, b2, b3, R (b4, x0, y0, theta0)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    fmt: ExportFormat = typer.Option(ExportFormat.csv, "--format", help="Policy table format"),
    grid: Optional[str] = typer.Option(None, "--grid", help="z grid, e.g. 'z=0:3:61'"),
) -> None:
    """Build the policy and export g, its derivatives and the feedback rates."""
    from endow.experiments.run_one import run_single
    from endow.experiments.sweep import parse_grid

    with _errors():
        mp, ap = _resolve(params, preset, aux, pairs or [])
        zgrid = parse_grid(grid)["z"] if grid else None
        result = run_single(mp, ap, output_dir=_out_dir(out, "solve"), fmt=fmt.value,
                            verify=False, crit_lookup=_crit_lookup(), zgrid=zgrid)
    _print_mapping("Policy summary", result["summary"])
    for path in result["artifacts"]:
        console.print(f"Saved: {path}")


@app.command()
def b3crit(
    b1: float = typer.Option(..., "--b1"),
    b2: float = typer.Option(..., "--b2"),
    R: float = typer.Option(..., "--R"),
    tol: float = typer.Option(settings.b3crit_tol, "--tol", help="Bisection tolerance"),
) -> None:
    """Critical b3 separating finite and infinite critical ratios."""
    from endow.cache import cached_b3_crit
    from endow.solver.ode import ToleranceOptions, find_b3_crit

    with _errors():
        _check_b1_R(b1, R)
        if b2 < 1:
            raise InvalidParams(f"b2 must be at least 1, got {b2}")
        if settings.cache_enabled:
            crit = cached_b3_crit(b1, b2, R, tol)
        else:
            crit = find_b3_crit(b1, b2, R, tol, opts=ToleranceOptions.from_settings())
    console.print(f"b3_crit = {_fmt(crit)}")


@app.command()
def sweep(
    pairs: Optional[list[str]] = typer.Argument(None, help=PAIRS_HELP),
    grid: str = typer.Option(..., "--grid", help="Axes, e.g. 'b3=0.1:0.6:6;b1=0.5,1'"),
    params: Optional[Path] = typer.Option(None, "--params", help="JSON parameter file"),
    preset: Optional[str] = typer.Option(None, "--preset", help="Named preset"),
    aux: bool = typer.Option(False, "--aux", help="Pairs are b1, b2, b3, R (b4, x0, y0, theta0)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    parallel: int = typer.Option(1, "--parallel", "-p", help="Parallel cells"),
) -> None:
    """Comparative statics of q* and p with monotonicity checks."""
    from endow.experiments.metrics import format_metrics_report
    from endow.experiments.sweep import parse_grid, run_sweep

    with _errors():
        base = _base_values(params, preset, aux, pairs or [])
        axes = parse_grid(grid)
        output_dir = _out_dir(out, "sweep")
        with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"),
                      console=console) as progress:
            task = progress.add_task("Sweeping...", total=None)
            rows, metrics = run_sweep(axes, base, output_dir=output_dir, parallel=parallel,
                                     crit_lookup=_crit_lookup())
            progress.remove_task(task)

    console.print(format_metrics_report(metrics))
    console.print(f"Results saved to: {output_dir}")
    if metrics.total_violations or metrics.failed:
        raise typer.Exit(4)


@app.command()
def simulate(
    pairs: Optional[list[str]] = typer.Argument(None, help=PAIRS_HELP),
    params: Optional[Path] = typer.Option(None, "--params", help="JSON parameter file"),
    preset: Optional[str] = typer.Option(None, "--preset", help="Named preset"),
    aux: bool = typer.Option(False, "--aux", help="Pairs are b1, b2, b3, R (b4, x0, y0, theta0)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    seed: int = typer.Option(settings.seed, "--seed", help="Root seed"),
    dt: float = typer.Option(settings.dt, "--dt", help="Time step"),
    horizon: Optional[float] = typer.Option(None, "--horizon", help="Truncation horizon"),
    npaths: int = typer.Option(settings.npaths, "--npaths", help="Number of paths"),
    regime_check: bool = typer.Option(False, "--regime-check",
                                      help="Fail unless the estimate matches V within 3 s.e."),
    refine: bool = typer.Option(False, "--refine",
                                help="Fail unless halving dt moves the estimate < 1 s.e."),
) -> None:
    """Simulate the controlled system and estimate the discounted utility."""
    from endow.experiments.run_one import run_single
    from endow.sim.paths import SimConfig

    with _errors():
        mp, ap = _resolve(params, preset, aux, pairs or [])
        try:
            cfg = SimConfig(dt=dt, horizon=horizon, npaths=npaths, seed=seed)
        except ValueError as e:
            raise InvalidParams(str(e)) from e
        output_dir = _out_dir(out, "simulate")
        with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"),
                      console=console) as progress:
            task = progress.add_task(f"Simulating {npaths} paths...", total=None)
            result = run_single(mp, ap, output_dir=output_dir, verify=False, sim_cfg=cfg,
                                regime_check=regime_check, refine=refine,
                                crit_lookup=_crit_lookup())
            progress.remove_task(task)

    _print_mapping("Simulation", result.get("simulation", {}))
    console.print(f"Results saved to: {output_dir}")
    if not result["sim_ok"]:
        console.print("[bold red]FAILED[/bold red] - simulation check")
        raise typer.Exit(5)


@app.command()
def verify(
    pairs: Optional[list[str]] = typer.Argument(None, help=PAIRS_HELP),
    params: Optional[Path] = typer.Option(None, "--params", help="JSON parameter file"),
    preset: Optional[str] = typer.Option(None, "--preset", help="Named preset"),
    aux: bool = typer.Option(False, "--aux", help="Pairs are b1, b2, b3, R (b4, x0, y0, theta0)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    fmt: ExportFormat = typer.Option(ExportFormat.csv, "--format", help="Policy table format"),
) -> None:
    """Check HJB residuals, shape properties and smooth fit of the policy."""
    from endow.experiments.run_one import run_single

    with _errors():
        mp, ap = _resolve(params, preset, aux, pairs or [])
        output_dir = _out_dir(out, "verify")
        result = run_single(mp, ap, output_dir=output_dir, fmt=fmt.value, verify=True,
                            crit_lookup=_crit_lookup())

    _print_mapping("Policy summary", result["summary"])
    checks = result.get("verification")
    if checks is None:
        console.print("[yellow]Value is infinite: nothing to verify[/yellow]")
        return
    for name in ("hjb", "shape"):
        _print_mapping(name.upper(), checks[name])
    if checks["smooth_fit"]:
        _print_mapping("Smooth fit (relative gaps)", checks["smooth_fit"])
    console.print(f"Results saved to: {output_dir}")
    if result["verify_ok"]:
        console.print("[bold green]PASS[/bold green]")
    else:
        console.print(f"[bold red]FAILED[/bold red] - {checks['hjb']['error'] or ''} "
                      f"{checks['shape']['error'] or ''}")
        raise typer.Exit(4)


@app.command()
def regions(
    b1: float = typer.Option(..., "--b1"),
    R: float = typer.Option(..., "--R"),
    grid: str = typer.Option("b2=1:5:9;b3=-0.5:3:15", "--grid", help="b2 and b3 axes"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    parallel: int = typer.Option(1, "--parallel", "-p", help="Parallel b2 columns"),
) -> None:
    """Region map in the (b2, b3) plane for fixed b1 and R."""
    from endow.experiments.sweep import parse_grid, run_regions

    with _errors():
        _check_b1_R(b1, R)
        output_dir = _out_dir(out, "regions")
        rows = run_regions(b1, R, parse_grid(grid), output_dir=output_dir, parallel=parallel,
                           crit_lookup=_crit_lookup())

    counts: dict[str, int] = {}
    for r in rows:
        counts[r["regime"]] = counts.get(r["regime"], 0) + 1
    table = Table(title=f"Regions (b1={b1:g}, R={R:g})")
    table.add_column("Regime", style="cyan")
    table.add_column("Cells", justify="right")
    for regime, n in counts.items():
        table.add_row(regime, str(n))
    console.print(table)
    console.print(f"Results saved to: {output_dir}")


@app.command()
def presets() -> None:
    """List the packaged parameter presets."""
    from endow.model.params import load_presets

    table = Table(title="Presets")
    table.add_column("Name", style="cyan")
    table.add_column("Mode", style="green")
    table.add_column("Description")
    for p in load_presets():
        table.add_row(p.get("name", "unknown"), "market" if "market" in p else "aux",
                      p.get("description", ""))
    console.print(table)


@app.command()
def version() -> None:
    """Show version information."""
    from endow import __version__

    console.print(f"endow version {__version__}")


if __name__ == "__main__":
    app()

"""Solve, verify and simulate a single parameter set."""

import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Literal

from endow.config import settings
from endow.errors import StepRejection
from endow.export import write_csv, write_json
from endow.model.params import (
    AuxParams,
    MarketParams,
    Regime,
    RegimeReport,
    classify_regime,
    derive_aux_params,
)
from endow.sim.montecarlo import refinement_check, summarize
from endow.sim.paths import SimConfig, demo_illposed, simulate
from endow.solver.policy import Policy, build_policy, certainty_equivalent, value
from endow.solver.verify import default_zgrid, smooth_fit_gaps, verify_hjb, verify_shape

logger = logging.getLogger(__name__)

Format = Literal["csv", "json"]


def default_output_dir(kind: str) -> Path:
    return Path(settings.output_dir) / kind / datetime.now().strftime("%Y%m%d_%H%M%S")


def solve_summary(pol: Policy | None, report: RegimeReport, mp: MarketParams) -> dict[str, Any]:
    """Regime data plus V and p at (x0, y0, theta0)."""
    if pol is None:
        return {
            "regime": report.regime.value,
            "b3_crit": report.b3_crit,
            "qstar": 1.0,
            "zstar": math.inf,
            "n_qstar": None,
            "g0": None,
            "value": math.inf,
            "p": math.inf,
        }
    return {
        **pol.summary(),
        "value": value(pol, mp.x0, mp.y0, mp.theta0),
        "p": certainty_equivalent(pol, mp.x0, mp.y0, mp.theta0),
    }


def solve_one(
    mp: MarketParams,
    ap: AuxParams | None = None,
    *,
    crit_lookup: Any = None,
) -> tuple[Policy | None, RegimeReport]:
    """Classify and, unless the value is infinite, build the policy."""
    ap = ap or derive_aux_params(mp)
    report = classify_regime(ap, mp.R, crit_lookup=crit_lookup, with_qstar=False)
    if report.regime is Regime.ILL_POSED:
        return None, report
    pol = build_policy(mp, ap, report, crit_lookup=crit_lookup)
    return pol, pol.report


def export_policy(pol: Policy, output_dir: Path, fmt: Format = "csv",
                  zgrid: Any = None) -> list[Path]:
    z = default_zgrid(pol) if zgrid is None else zgrid
    rows = pol.export_rows(z)
    if fmt == "json":
        return [write_json(output_dir / "policy.json", rows)]
    return [write_csv(output_dir / "policy.csv", rows)]


def run_verification(pol: Policy, output_dir: Path | None = None,
                     zgrid: Any = None) -> dict[str, Any]:
    """All verifier suites; writes residuals.json when output_dir is given."""
    hjb = verify_hjb(pol, zgrid)
    shape = verify_shape(pol, zgrid)
    gaps = smooth_fit_gaps(pol)
    result = {
        "success": hjb.success and shape.success,
        "hjb": {**hjb.to_dict(), "max_rel_hjb": hjb.max_rel_hjb, "min_rel_M": hjb.min_rel_M,
                "max_abs_rel_M_sale": hjb.max_abs_rel_M_sale,
                "max_rel_sale_residual": hjb.max_rel_sale_residual, "x_zero_M": hjb.x_zero_M},
        "shape": {**shape.to_dict(), "max_hessian": shape.max_hessian,
                  "hessian_at_boundary": shape.hessian_at_boundary,
                  "max_portfolio_ratio": shape.max_portfolio_ratio,
                  "max_consumption_gap": shape.max_consumption_gap},
        "smooth_fit": gaps,
    }
    if output_dir is not None:
        write_json(output_dir / "residuals.json", result)
    return result


def run_single(
    mp: MarketParams,
    ap: AuxParams | None = None,
    *,
    output_dir: Path | None = None,
    fmt: Format = "csv",
    verify: bool = True,
    sim_cfg: SimConfig | None = None,
    regime_check: bool = False,
    refine: bool = False,
    crit_lookup: Any = None,
    zgrid: Any = None,
) -> dict[str, Any]:
    """Full pipeline for one parameter set.

    Returns a dict with `summary`, `verification`, `simulation`, the flags
    `verify_ok` / `sim_ok` and the list of written `artifacts`.
    """
    ap = ap or derive_aux_params(mp)
    output_dir = output_dir or default_output_dir("runs")
    output_dir.mkdir(parents=True, exist_ok=True)
    artifacts: list[Path] = []

    pol, report = solve_one(mp, ap, crit_lookup=crit_lookup)
    summary = solve_summary(pol, report, mp)
    result: dict[str, Any] = {"summary": summary, "verify_ok": True, "sim_ok": True}

    if pol is not None:
        artifacts += export_policy(pol, output_dir, fmt, zgrid)
        if verify:
            result["verification"] = run_verification(pol, output_dir, zgrid)
            artifacts.append(output_dir / "residuals.json")
            result["verify_ok"] = result["verification"]["success"]

    if sim_cfg is not None:
        try:
            if pol is None:
                growth = demo_illposed(mp, ap, sim_cfg)
                result["simulation"] = growth.to_dict()
                artifacts.append(write_json(output_dir / "illposed.json", growth.to_dict()))
            else:
                path = simulate(pol, mp, sim_cfg)
                mc = summarize(pol, mp, path)
                result["simulation"] = {
                    **mc.to_dict(),
                    "max_boundary_excess": path.max_boundary_excess,
                    "max_complementarity": path.max_complementarity,
                    "min_X": path.min_X,
                    "max_theta_increase": path.max_theta_increase,
                    "degeneracies": path.degeneracies,
                }
                if path.series:
                    artifacts.append(write_csv(
                        output_dir / "path.csv", path.to_rows(0),
                        header=["t", "Y", "Theta", "X", "Z", "C", "Pi", "L"],
                    ))
                artifacts.append(write_json(output_dir / "mc_summary.json", mc.to_dict()))
                if regime_check:
                    result["sim_ok"] = mc.agrees(3.0)
                    if not result["sim_ok"]:
                        logger.warning("Monte Carlo estimate off by %.2f standard errors",
                                       mc.z_score)
                if refine:
                    check = refinement_check(pol, mp, sim_cfg)
                    result["refinement"] = check.to_dict()
                    artifacts.append(write_json(output_dir / "refinement.json", check.to_dict()))
                    result["sim_ok"] = result["sim_ok"] and check.success
        except StepRejection as e:
            logger.error("simulation failed: %s", e)
            result["sim_ok"] = False
            result["simulation"] = {"error": str(e)}

    result["artifacts"] = [str(p) for p in artifacts]
    result["success"] = bool(result["verify_ok"] and result["sim_ok"])
    write_json(output_dir / "summary.json", {**summary, "success": result["success"]})
    return result


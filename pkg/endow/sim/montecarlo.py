"""Monte Carlo estimates of the expected discounted utility of the optimal controls."""

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from endow.model.params import MarketParams
from endow.reports import CheckResult
from endow.sim.paths import SimConfig, SimPath, decay_rate, default_horizon, simulate
from endow.solver.policy import Policy, value

logger = logging.getLogger(__name__)


@dataclass
class MonteCarloSummary:
    estimate: float
    stderr: float
    npaths: int
    dt: float
    T: float
    analytic_value: float
    tail_bound: float  # mean discounted utility rate at T over the decay rate

    @property
    def z_score(self) -> float:
        if not self.stderr or not math.isfinite(self.stderr):
            return math.nan
        return (self.estimate - self.analytic_value) / self.stderr

    def agrees(self, nsigma: float = 3.0, rel: float = 0.0) -> bool:
        """Estimate within nsigma standard errors (plus rel*|V| and the tail) of V."""
        slack = nsigma * self.stderr + rel * abs(self.analytic_value) + abs(self.tail_bound)
        return abs(self.estimate - self.analytic_value) <= slack

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "npaths": self.npaths,
            "dt": self.dt,
            "T": self.T,
            "analytic_value": self.analytic_value,
            "z_score": self.z_score,
            "tail_bound": self.tail_bound,
        }


def summarize(pol: Policy, mp: MarketParams, path: SimPath) -> MonteCarloSummary:
    return MonteCarloSummary(
        estimate=path.estimate,
        stderr=path.stderr,
        npaths=path.npaths,
        dt=path.dt,
        T=path.horizon,
        analytic_value=value(pol, mp.x0, mp.y0, mp.theta0),
        tail_bound=float(np.mean(path.terminal)) / decay_rate(pol),
    )


def estimate_utility(pol: Policy, mp: MarketParams, cfg: SimConfig | None = None,
                     *, tol: float = 1e-4) -> MonteCarloSummary:
    """Mean truncated utility over cfg.npaths paths, compared with V(x0, y0, theta0)."""
    cfg = cfg or SimConfig()
    if cfg.horizon is None:
        cfg = cfg.model_copy(update={"horizon": default_horizon(pol, tol)})
    path = simulate(pol, mp, cfg.model_copy(update={"record": 0}))
    summary = summarize(pol, mp, path)
    logger.info("utility estimate %.6g +- %.2g vs value %.6g (z=%.2f)", summary.estimate,
                summary.stderr, summary.analytic_value, summary.z_score)
    return summary


def refinement_check(pol: Policy, mp: MarketParams, cfg: SimConfig | None = None,
                     *, tol: float = 1e-4) -> CheckResult:
    """Halve dt on the same Brownian paths and compare the two estimates.

    The coarse run sums two fine increments per step, so the paired difference isolates
    the discretisation error.
    """
    cfg = cfg or SimConfig()
    if cfg.horizon is None:
        cfg = cfg.model_copy(update={"horizon": default_horizon(pol, tol)})
    coarse = simulate(pol, mp, cfg.model_copy(update={"record": 0, "substeps": 2}))
    fine = simulate(pol, mp, cfg.model_copy(update={"record": 0, "substeps": 1,
                                                    "dt": cfg.dt / 2.0}))
    shift = fine.estimate - coarse.estimate
    stderr = fine.stderr
    ratio = abs(shift) / stderr if stderr and math.isfinite(stderr) else math.inf
    if coarse.halvings or fine.halvings:
        # the runs no longer share increments
        logger.warning("step halvings during the refinement check; paths are not coupled")
    ok = ratio < 1.0
    return CheckResult(
        summary=f"dt {cfg.dt:g} -> {cfg.dt / 2:g}: estimate moved {shift:.3g} "
                f"({ratio:.2f} standard errors)",
        details={
            "coarse": coarse.estimate,
            "fine": fine.estimate,
            "shift": shift,
            "stderr": stderr,
            "shift_in_stderr": ratio,
        },
        success=ok,
        error=None if ok else "estimate not converged in dt",
    )

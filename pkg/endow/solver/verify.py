"""Numerical checks of a constructed policy: HJB residuals, shape and smooth fit."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from endow.errors import RegimeMismatch
from endow.model.params import MarketParams, Regime
from endow.reports import CheckResult
from endow.solver.policy import Policy

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]

HJB_TOL = 1e-6
M_TOL = 1e-9
HESSIAN_TOL = 1e-9
HESSIAN_BOUNDARY_TOL = 1e-8
IDENTITY_TOL = 1e-8


def hjb_terms(g: Array, G1: Array, G2: Array, mp: MarketParams) -> Array:
    """The six terms of (L - beta) applied to x^(1-R) g(z)/(1-R), at x = 1.

    Rows: optimised consumption, interest, endowed drift, endowed volatility, optimised
    hedge, discounting.
    """
    R = mp.R
    lam = (mp.mu - mp.r) / mp.sigma
    A = g - G1 / (1.0 - R)  # x^R V_x
    D = -R * g + (2.0 * R * G1 + G2) / (1.0 - R)  # x^(1+R) V_xx
    E = -(R * G1 + G2) / (1.0 - R)  # x^R y V_xy
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.vstack([
            R / (1.0 - R) * A ** ((R - 1.0) / R),
            mp.r * A,
            mp.alpha * G1 / (1.0 - R),
            0.5 * mp.eta**2 * G2 / (1.0 - R),
            -((mp.eta * mp.rho * E + lam * A) ** 2) / (2.0 * D),
            -mp.beta * g / (1.0 - R),
        ])


def hjb_residual(g: ArrayLike, G1: ArrayLike, G2: ArrayLike,
                 mp: MarketParams) -> tuple[Array, Array]:
    """(L - beta) G at x = 1 and its scale |beta G|.

    Where beta G vanishes the scale falls back to the largest absolute term.
    """
    terms = hjb_terms(
        np.atleast_1d(np.asarray(g, dtype=float)),
        np.atleast_1d(np.asarray(G1, dtype=float)),
        np.atleast_1d(np.asarray(G2, dtype=float)),
        mp,
    )
    scale = np.abs(terms[-1])
    flat = scale == 0
    if flat.any():
        scale[flat] = np.abs(terms[:, flat]).max(axis=0)
    return terms.sum(axis=0), scale


def inverse_ratio_sale_gap(pol: Policy) -> float:
    """M G at x = 0 in units of G, read off the top of the integrated branch.

    With k = x/(y theta) = 1/z this is z M G/|G| at z_top; the closed-form branch
    beyond it has M G = 0 identically, so the value tends to 0 as z_top grows.
    """
    if pol.regime is not Regime.NO_FINITE_RATIO:
        raise RegimeMismatch(f"x = 0 sale condition needs no finite ratio, got {pol.regime.value}")
    q, z = pol.q_top, pol.z_top
    # z g'/g = (1-R) q on the integrated branch
    return q - (1.0 - q) * z


def closed_branch_residual(pol: Policy, z: ArrayLike) -> Array:
    """(L - beta) G on the closed-form branch, from m at the boundary and at z/(1+z)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    ap, R = pol.aux, pol.R
    s = z / (1.0 + z)

    def m(q: Array | float) -> Array | float:
        return (1.0 - R) * R / ap.b1 * q * q - ap.b3 * (1.0 - R) / ap.b1 * q + 1.0

    scale = pol.kappa * pol.n_star ** (-R) * (1.0 + z) ** (1.0 - R)
    out: Array = scale * ap.b1 / (ap.b4 * (1.0 - R)) * (m(pol.qstar) - m(s))
    return out


def default_zgrid(pol: Policy, npts: int = 50) -> Array:
    """A grid covering the no-sale region and part of the sale region."""
    if pol.regime is Regime.SELL_ALL:
        return np.linspace(0.0, 5.0, npts)
    if pol.regime is Regime.FINITE_RATIO:
        inside = np.linspace(0.0, pol.zstar, npts)
        return np.concatenate([inside, pol.zstar * np.linspace(1.05, 3.0, max(npts // 5, 2))])
    return np.concatenate([[0.0], np.geomspace(1e-3, 1e3, npts - 1)])


@dataclass
class ResidualReport(CheckResult):
    """HJB residuals on a z grid."""

    max_rel_hjb: float = 0.0  # no-sale region
    min_rel_M: float = 0.0  # no-sale region, z > 0
    max_abs_rel_M_sale: float = 0.0
    max_rel_sale_residual: float = -math.inf  # should be <= 0
    max_closed_form_gap: float = 0.0
    x_zero_M: float = 0.0  # z M G/|G| at z_top without a finite ratio, the x = 0 limit


@dataclass
class ShapeReport(CheckResult):
    """Monotonicity, curvature and bound checks on a z grid."""

    violations: list[str] = field(default_factory=list)
    max_hessian: float = -math.inf
    hessian_at_boundary: float = 0.0
    max_portfolio_ratio: float = 0.0  # |sigma Pi G_x/G| over its bound
    max_consumption_gap: float = 0.0


def _nosale_mask(pol: Policy, z: Array) -> NDArray[np.bool_]:
    if pol.regime is Regime.SELL_ALL:
        return np.zeros(z.shape, dtype=bool)
    return z <= pol.z_top


def verify_hjb(pol: Policy, zgrid: ArrayLike | None = None, *, hjb_tol: float = HJB_TOL,
               m_tol: float = M_TOL) -> ResidualReport:
    """(L - beta) G = 0 and M G >= 0 without sales; M G = 0 and (L - beta) G <= 0 with.

    Residuals are relative to |beta G|. Without a finite ratio M G = 0 is also checked
    at x = 0.
    """
    z = np.sort(np.atleast_1d(np.asarray(
        default_zgrid(pol) if zgrid is None else zgrid, dtype=float)))
    g, G1, G2 = pol.shape(z)
    res, scale = hjb_residual(g, G1, G2, pol.market)
    with np.errstate(divide="ignore", invalid="ignore"):
        M = ((1.0 + z) * G1 / (z * (1.0 - pol.R)) - g) / np.abs(g)
    rel = np.abs(res) / scale
    rel_terms = np.abs(res) / np.abs(hjb_terms(g, G1, G2, pol.market)).max(axis=0)

    nosale = _nosale_mask(pol, z)
    sale = ~nosale
    positive = z > 0
    problems: list[str] = []

    max_rel = float(rel[nosale].max()) if nosale.any() else 0.0
    if max_rel > hjb_tol:
        problems.append(f"no-sale HJB residual {max_rel:.3g} > {hjb_tol:.1g}")
    inner = nosale & positive
    min_M = float(M[inner].min()) if inner.any() else 0.0
    if min_M < -m_tol:
        problems.append(f"M G = {min_M:.3g} < 0 without sales")

    max_M_sale = 0.0
    max_sale_res = -math.inf
    gap = 0.0
    closed = sale & positive
    if closed.any():
        max_M_sale = float(np.abs(M[closed]).max())
        if max_M_sale > m_tol:
            problems.append(f"|M G| = {max_M_sale:.3g} in the sale region")
        max_sale_res = float((res[closed] / scale[closed]).max())
        if max_sale_res > hjb_tol:
            problems.append(f"HJB residual {max_sale_res:.3g} > 0 in the sale region")
        expected = closed_branch_residual(pol, z[closed])
        gap = float((np.abs(res[closed] - expected) / scale[closed]).max())
        if gap > hjb_tol:
            problems.append(f"closed-form residual mismatch {gap:.3g}")
    if pol.regime is Regime.SELL_ALL and z[0] == 0 and rel[0] > hjb_tol:
        problems.append(f"HJB residual {rel[0]:.3g} at z = 0")
    x_zero = 0.0
    if pol.regime is Regime.NO_FINITE_RATIO:
        x_zero = inverse_ratio_sale_gap(pol)
        if abs(x_zero) > hjb_tol:
            problems.append(f"M G = {x_zero:.3g} at x = 0")

    summary = (
        f"{pol.regime.value}: max |HJB| {max_rel:.2e} (no-sale), min M {min_M:.2e}, "
        f"max |M| {max_M_sale:.2e} (sale), {z.size} points"
    )
    logger.info(summary)
    return ResidualReport(
        summary=summary,
        details={"zgrid": z.tolist(), "rel_residual": rel.tolist(),
                 "rel_residual_terms": rel_terms.tolist(), "M": M.tolist()},
        success=not problems,
        error="; ".join(problems) or None,
        max_rel_hjb=max_rel,
        min_rel_M=min_M,
        max_abs_rel_M_sale=max_M_sale,
        max_rel_sale_residual=max_sale_res,
        max_closed_form_gap=gap,
        x_zero_M=x_zero,
    )


def verify_shape(pol: Policy, zgrid: ArrayLike | None = None, *,
                 tol: float = HESSIAN_TOL) -> ShapeReport:
    """Curvature of g, the Hessian condition, bounds on w' and on the hedge, and C/x."""
    R = pol.R
    z = np.sort(np.atleast_1d(np.asarray(
        default_zgrid(pol) if zgrid is None else zgrid, dtype=float)))
    g, G1, G2 = pol.shape(z)
    violations: list[str] = []
    sign = 1.0 if R < 1 else -1.0

    # g increasing concave for R<1, decreasing convex for R>1, by differences of g alone
    dg = np.diff(g) * sign
    if np.any(dg < -tol * np.abs(g[1:])):
        violations.append("g is not monotone in the expected direction")
    slopes = np.diff(g) / np.diff(z)
    if np.any(np.diff(slopes) * sign > tol * np.abs(slopes[1:]).max()):
        violations.append("g has the wrong curvature")

    hess = ((1.0 - R) * g * G2 + R * G1**2) / g**2
    max_hess = float(hess.max())
    if max_hess > tol:
        violations.append(f"Hessian combination {max_hess:.3g} > 0")

    at_boundary = 0.0
    nosale = _nosale_mask(pol, z)
    if pol.regime is Regime.FINITE_RATIO:
        gb, G1b, G2b = pol.shape_q(pol.qstar)
        at_boundary = float(((1.0 - R) * gb * G2b + R * G1b**2)[0] / gb[0] ** 2)
        if abs(at_boundary) > HESSIAN_BOUNDARY_TOL:
            violations.append(f"Hessian combination {at_boundary:.3g} at z*")

    if pol.sol is not None and pol.tables is not None:
        q = pol.tables.qgrid
        q = q[(q > 0) & (q < pol.tables.q_top)]
        wp = (1.0 - R) * (q + 1.0 / pol.sol.log_N_prime(q))
        if np.any(wp <= (1.0 - R) - tol) or np.any(wp >= 1.0 - R * q + tol):
            violations.append("w' leaves (1-R, 1 - R W)")
        if pol.regime is Regime.FINITE_RATIO:
            qs = pol.qstar
            wps = float((1.0 - R) * (qs + 1.0 / pol.sol.log_N_prime(qs)[0]))
            if abs(wps - (1.0 - R * qs)) > IDENTITY_TOL:
                violations.append(f"w'(h*) = {wps:.12g} differs from 1 - R q*")

    max_pi = 0.0
    max_c = 0.0
    if nosale.any():
        lam, eta, rho = pol.aux.lam, pol.market.eta, pol.market.rho
        zn = z[nosale]
        bound = abs(1.0 - R) / R * (abs(lam) + abs(eta * rho * R - lam))
        a = G1[nosale] / g[nosale]
        lhs = np.abs(pol.pi_hat(zn) * ((1.0 - R) - a))
        if bound > 0:
            max_pi = float(lhs.max() / bound)
            if max_pi > 1.0 + 1e-9:
                violations.append(f"hedge exceeds its bound by a factor {max_pi:.6g}")
        base = g[nosale] - G1[nosale] / (1.0 - R)
        direct = base ** (-1.0 / R)
        max_c = float(np.max(np.abs(pol.c_over_x(zn) / direct - 1.0)))
        if max_c > IDENTITY_TOL:
            violations.append(f"C/x differs from its identity by {max_c:.3g}")

    summary = (
        f"{pol.regime.value}: max Hessian {max_hess:.2e}, hedge/bound {max_pi:.4f}, "
        f"{len(violations)} violation(s)"
    )
    logger.info(summary)
    return ShapeReport(
        summary=summary,
        details={"zgrid": z.tolist(), "hessian": hess.tolist()},
        success=not violations,
        error="; ".join(violations) or None,
        violations=violations,
        max_hessian=max_hess,
        hessian_at_boundary=at_boundary,
        max_portfolio_ratio=max_pi,
        max_consumption_gap=max_c,
    )


def _rel_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def smooth_fit_gaps(pol: Policy, h: float = 1e-4) -> dict[str, float]:
    """Relative jumps of g, g', g'' (and of the feedback rates) across z*.

    `g`, `gp`, `gpp` compare the two analytic branches at the boundary; `fd_gp` compares
    second-order one-sided difference quotients with step h*z*.
    """
    if pol.regime is not Regime.FINITE_RATIO:
        return {}
    R, zs = pol.R, pol.zstar
    gl, G1l, G2l = (float(v[0]) for v in pol.shape_q(pol.qstar))
    k = pol.kappa * pol.n_star ** (-R)
    gr = k * (1.0 + zs) ** (1.0 - R)
    G1r = k * (1.0 - R) * zs * (1.0 + zs) ** (-R)
    G2r = -R * k * (1.0 - R) * zs**2 * (1.0 + zs) ** (-R - 1.0)

    cl, pl = (float(v[0]) for v in pol.controls_q(pol.qstar))
    cr = pol.merton_consumption * pol.n_star * (1.0 + zs)
    pr = (pol.aux.lam - pol.market.eta * pol.market.rho * R * pol.qstar) * (1.0 + zs) / R

    step = h * zs
    left = pol.g(zs - step * np.arange(3))
    right = pol.g(zs + step * np.arange(3))
    fd_left = (3.0 * left[0] - 4.0 * left[1] + left[2]) / (2.0 * step)
    fd_right = (-3.0 * right[0] + 4.0 * right[1] - right[2]) / (2.0 * step)

    return {
        "g": _rel_gap(gl, gr),
        "gp": _rel_gap(G1l, G1r),
        "gpp": _rel_gap(G2l, G2r),
        "c_over_x": _rel_gap(cl, cr),
        "pi_over_x": _rel_gap(pl, pr),
        "fd_gp": _rel_gap(float(fd_left), float(fd_right)),
    }

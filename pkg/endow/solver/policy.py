"""Value-shape function g, value, certainty equivalent and feedback controls.

In the no-sale region every quantity is evaluated through q: z = exp(U(q) + shift),
g = kappa N(q), z g' = kappa (1-R) q N(q) and z^2 g'' = kappa (w' - 1)(1-R) q N(q) with
w' = (1-R)(q + 1/(ln N)'(q)). Beyond the boundary (or beyond the integrated table in
the no-finite-ratio case) g is the closed form kappa n*^(-R) (1+z)^(1-R).
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import PchipInterpolator

from endow.errors import (
    IllPosedValue,
    IntegrationFailure,
    InvalidParams,
    MonotonicityViolation,
    NonpositiveBase,
    RegimeMismatch,
    TailEstimateFailure,
)
from endow.model.params import (
    AuxParams,
    MarketParams,
    Regime,
    RegimeReport,
    classify_regime,
    derive_aux_params,
    realize_market,
)
from endow.solver.ode import (
    INTERIOR_CUTOFF,
    CoefficientSet,
    OdeSolution,
    Termination,
    ToleranceOptions,
    integrate_n,
)

logger = logging.getLogger(__name__)

# largest admissible truncated tail of the no-finite-ratio integral
TAIL_TOL = 1e-8

Array = NDArray[np.float64]


def _arr(z: ArrayLike) -> Array:
    return np.atleast_1d(np.asarray(z, dtype=float))


@dataclass
class TransformTables:
    """N on [0, q_top], its inverse W and w(s) = (1-R) s W(s)."""

    sol: OdeSolution
    qgrid: Array
    Ngrid: Array
    q_top: float
    hstar: float
    ustar: float  # ln z*; inf without a finite ratio
    _inverse: PchipInterpolator = field(repr=False)

    @property
    def R(self) -> float:
        return self.sol.cs.R

    @property
    def finite(self) -> bool:
        return math.isfinite(self.ustar)

    def N(self, q: ArrayLike) -> Array:
        q = _arr(q)
        R = self.R
        out: Array = self.sol.n(q) ** (-R) * (1.0 - q) ** (R - 1.0)
        return out

    def W(self, s: ArrayLike) -> Array:
        """Inverse of N: interpolated guess on ln N, then safeguarded Newton steps."""
        log_s = np.log(_arr(s))
        q = np.clip(self._inverse(log_s), 0.0, self.q_top)
        for _ in range(2):
            step = (np.log(self.N(q)) - log_s) / self.sol.log_N_prime(q)
            q = np.clip(q - step, 0.0, self.q_top)
        return q

    def w(self, s: ArrayLike) -> Array:
        s = _arr(s)
        out: Array = (1.0 - self.R) * s * self.W(s)
        return out

    def w_prime(self, s: ArrayLike) -> Array:
        q = self.W(s)
        out: Array = (1.0 - self.R) * (q + 1.0 / self.sol.log_N_prime(q))
        return out


def build_transforms(sol: OdeSolution, ap: AuxParams, R: float) -> TransformTables:
    """Tabulate N along the solution and build its monotone inverse W."""
    if not math.isclose(sol.cs.R, R) or not math.isclose(sol.cs.b3, ap.b3):
        raise InvalidParams("solution and parameters disagree on (b3, R)")
    if sol.qstar == 0.0:
        raise RegimeMismatch("no transform exists when everything is sold at once")

    finite = sol.terminated_by is Termination.CROSSED_M and sol.qstar < INTERIOR_CUTOFF
    q = sol.qgrid
    logN = -R * np.log(sol.nvals) + (R - 1.0) * np.log1p(-q)
    steps = np.diff(logN) * np.sign(1.0 - R)
    if not np.all(steps > 0):
        bad = int(np.flatnonzero(steps <= 0)[0])
        raise MonotonicityViolation(
            f"N is not strictly monotone near q={q[bad]:.10g} ({q.size} grid points)"
        )
    order = slice(None) if R < 1 else slice(None, None, -1)
    inverse = PchipInterpolator(logN[order], q[order], extrapolate=True)

    q_top = float(q[-1])
    ustar = math.log(sol.qstar / (1.0 - sol.qstar)) if finite else math.inf
    return TransformTables(
        sol=sol, qgrid=q, Ngrid=np.exp(logN), q_top=q_top, hstar=float(np.exp(logN[-1])),
        ustar=ustar, _inverse=inverse,
    )


@dataclass(frozen=True)
class FeedbackTable:
    """Feedback rates tabulated on an ascending state coordinate.

    For a finite ratio the coordinate is z and the rates are C/X and sigma*Pi/X. Without
    one it is k = X/(Y Theta) and the rates are C/(Y Theta) and sigma*Pi/(Y Theta);
    past the last row both grow linearly in k with `slopes_beyond`.
    """

    coord: Array
    c: Array
    pi: Array
    slopes_beyond: tuple[float, float] | None = None

    def at(self, s: Array) -> tuple[Array, Array]:
        c = np.interp(s, self.coord, self.c)
        pi = np.interp(s, self.coord, self.pi)
        if self.slopes_beyond is not None:
            past = s > self.coord[-1]
            if past.any():
                c = np.where(past, s * self.slopes_beyond[0], c)
                pi = np.where(past, s * self.slopes_beyond[1], pi)
        return c, pi


def _power_limit(coef: float, power: float) -> float:
    """lim_{z->0} coef * z**power."""
    if coef == 0 or power > 0:
        return 0.0
    if power == 0:
        return coef
    return math.copysign(math.inf, coef)


@dataclass
class Policy:
    """Value-shape function and feedback controls for one parameter set."""

    report: RegimeReport
    aux: AuxParams
    market: MarketParams
    R: float
    kappa: float
    zstar: float  # 0 when selling everything, inf without a finite ratio
    n_star: float  # n at the boundary: 1, n(q*) or n(1)
    z_top: float = 0.0  # end of the integrated no-sale branch
    sol: OdeSolution | None = None
    tables: TransformTables | None = None
    shift: float = 0.0  # u = U(q) + shift
    pi0: float = math.nan  # sigma*Pi/(y theta) at x = 0 without a finite ratio
    _u_inverse: PchipInterpolator | None = field(default=None, repr=False)

    @property
    def regime(self) -> Regime:
        return self.report.regime

    @property
    def qstar(self) -> float:
        if self.zstar == 0:
            return 0.0
        if math.isinf(self.zstar):
            return 1.0
        return self.zstar / (1.0 + self.zstar)

    @property
    def g0(self) -> float:
        return self.kappa

    @property
    def merton_consumption(self) -> float:
        """C/x at z = 0, b1/(b4 R)."""
        return float(self.kappa ** (-1.0 / self.R))

    # -- q <-> z ---------------------------------------------------------------

    def _need_sol(self) -> OdeSolution:
        if self.sol is None:
            raise RegimeMismatch("no integrated branch when everything is sold at once")
        return self.sol

    def z_of_q(self, q: ArrayLike) -> Array:
        sol = self._need_sol()
        with np.errstate(divide="ignore"):
            out: Array = np.exp(sol.U(q) + self.shift)
        return out

    def q_of_z(self, z: ArrayLike) -> Array:
        """Invert z = exp(U(q) + shift) on [0, z_top]."""
        sol = self._need_sol()
        assert self._u_inverse is not None
        R = self.R
        z = _arr(z)
        q = np.zeros_like(z)
        pos = z > 0
        if not pos.any():
            return q
        t = np.log(np.minimum(z[pos], self.z_top)) - self.shift
        out = np.empty_like(t)
        seed = t < 0
        # below q0 the seed n = 1 + slope q gives U in closed form
        out[seed] = sol.q0 * np.exp(t[seed] * (1.0 - R) / sol.log_slope0)
        if (~seed).any():
            target = t[~seed]
            guess = np.clip(self._u_inverse(target), sol.q0, self.q_top)
            for _ in range(2):
                dU = sol.log_N_prime(guess) / ((1.0 - R) * guess)
                guess = np.clip(guess - (sol.U(guess) - target) / dU, sol.q0, self.q_top)
            out[~seed] = guess
        q[pos] = out
        return q

    @property
    def q_top(self) -> float:
        return self._need_sol().q_end if self.tables is None else self.tables.q_top

    # -- shape in q --------------------------------------------------------------

    def shape_q(self, q: ArrayLike) -> tuple[Array, Array, Array]:
        """(g, z g', z^2 g'') on the no-sale branch at q."""
        sol = self._need_sol()
        R, k = self.R, self.kappa
        q = _arr(q)
        N = sol.n(q) ** (-R) * (1.0 - q) ** (R - 1.0)
        wp = (1.0 - R) * (q + 1.0 / sol.log_N_prime(q))
        w = (1.0 - R) * q * N
        return k * N, k * w, k * (wp - 1.0) * w

    def controls_q(self, q: ArrayLike) -> tuple[Array, Array]:
        """(C/x, sigma*Pi/x) on the no-sale branch at q."""
        sol = self._need_sol()
        R = self.R
        lam, eta, rho = self.aux.lam, self.market.eta, self.market.rho
        q = _arr(q)
        n = sol.n(q)
        if not np.all(np.isfinite(n)) or np.any(n <= 0):
            raise NonpositiveBase("g - z g'/(1-R) <= 0 on the no-sale branch")
        ratio = sol.F(q) / n
        D = (1.0 - R) - R * (1.0 - q) * ratio
        P = (1.0 - R) * q + R
        pi = (lam * D - eta * rho * (1.0 - R) * q * (1.0 - D)) / (
            R * (1.0 - q) * ((1.0 - R) - P * ratio)
        )
        c = self.merton_consumption * n / (1.0 - q)
        return c, pi

    # -- shape in z --------------------------------------------------------------

    def _split(self, z: Array) -> NDArray[np.bool_]:
        """Mask of points on the closed-form branch."""
        if self.sol is None:
            return np.ones(z.shape, dtype=bool)
        return z > self.z_top

    def shape(self, z: ArrayLike) -> tuple[Array, Array, Array]:
        """(g, z g', z^2 g'') at z."""
        z = _arr(z)
        if np.any(z < 0) or np.any(np.isnan(z)):
            raise InvalidParams("z must be non-negative")
        R = self.R
        g, G1, G2 = np.empty_like(z), np.empty_like(z), np.empty_like(z)
        closed = self._split(z)
        k = self.kappa * self.n_star ** (-R)
        zc = z[closed]
        g[closed] = k * (1.0 + zc) ** (1.0 - R)
        G1[closed] = k * (1.0 - R) * zc * (1.0 + zc) ** (-R)
        G2[closed] = -R * k * (1.0 - R) * zc**2 * (1.0 + zc) ** (-R - 1.0)
        if (~closed).any():
            g[~closed], G1[~closed], G2[~closed] = self.shape_q(self.q_of_z(z[~closed]))
        return g, G1, G2

    def g(self, z: ArrayLike) -> Array:
        return self.shape(z)[0]

    def zgp(self, z: ArrayLike) -> Array:
        """z g'(z)."""
        return self.shape(z)[1]

    def z2gpp(self, z: ArrayLike) -> Array:
        """z^2 g''(z)."""
        return self.shape(z)[2]

    def _origin_derivatives(self) -> tuple[float, float]:
        """(g'(0), g''(0)), possibly infinite."""
        R, k = self.R, self.kappa
        if self.sol is None:
            return k * (1.0 - R), -R * k * (1.0 - R)
        sol = self.sol
        # q ~ A z^e near the origin
        e = (1.0 - R) / sol.log_slope0
        A = sol.q0 * math.exp(-e * self.shift)
        return (
            _power_limit(k * (1.0 - R) * A, e - 1.0),
            _power_limit(k * (e - 1.0) * (1.0 - R) * A, e - 2.0),
        )

    def gp(self, z: ArrayLike) -> Array:
        z = _arr(z)
        G1 = self.zgp(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = G1 / z
        if (z == 0).any():
            out[z == 0] = self._origin_derivatives()[0]
        return out

    def gpp(self, z: ArrayLike) -> Array:
        z = _arr(z)
        G2 = self.z2gpp(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = G2 / (z * z)
        if (z == 0).any():
            out[z == 0] = self._origin_derivatives()[1]
        return out

    # -- feedback rates in z ------------------------------------------------------

    def c_over_x(self, z: ArrayLike) -> Array:
        """C/x = [g - z g'/(1-R)]^(-1/R), evaluated at the current (pre-sale) state."""
        z = _arr(z)
        out = np.empty_like(z)
        closed = self._split(z)
        out[closed] = self.merton_consumption * self.n_star * (1.0 + z[closed])
        if (~closed).any():
            out[~closed] = self.controls_q(self.q_of_z(z[~closed]))[0]
        return out

    def pi_hat(self, z: ArrayLike) -> Array:
        """sigma*Pi/x at the current (pre-sale) state."""
        z = _arr(z)
        R = self.R
        lam, eta, rho = self.aux.lam, self.market.eta, self.market.rho
        out = np.empty_like(z)
        closed = self._split(z)
        zc = z[closed]
        if self.regime is Regime.NO_FINITE_RATIO:
            out[closed] = self.pi0 * zc
        else:
            s = zc / (1.0 + zc)
            out[closed] = (lam - eta * rho * R * s) * (1.0 + zc) / R
        if (~closed).any():
            out[~closed] = self.controls_q(self.q_of_z(z[~closed]))[1]
        return out

    def psi(self, z: ArrayLike) -> Array:
        """Psi_g(z) = (sigma*Pi/x)/lambda; undefined when lambda = 0."""
        with np.errstate(divide="ignore", invalid="ignore"):
            out: Array = self.pi_hat(z) / self.aux.lam
        return out

    def pi_over_x(self, z: ArrayLike) -> Array:
        out: Array = self.pi_hat(z) / self.market.sigma
        return out

    def p_over_x(self, z: ArrayLike) -> Array:
        out: Array = (self.g(z) / self.kappa) ** (1.0 / (1.0 - self.R)) - 1.0
        return out

    # -- simulation tables --------------------------------------------------------

    def ratio_table(self, npts: int = 4001) -> FeedbackTable:
        """C/X and sigma*Pi/X against z on [0, z*]."""
        if self.regime is not Regime.FINITE_RATIO:
            raise RegimeMismatch(f"ratio table needs a finite ratio, got {self.regime.value}")
        qs = np.unique(np.concatenate([
            [0.0],
            np.geomspace(1e-10, self.qstar, npts // 2),
            np.linspace(0.0, self.qstar, npts - npts // 2),
        ]))
        z = self.z_of_q(qs)
        z[-1] = self.zstar
        c, pi = self.controls_q(qs)
        c[0], pi[0] = self.merton_consumption, self.aux.lam / self.R
        return FeedbackTable(coord=z, c=c, pi=pi)

    def inverse_ratio_table(self, npts: int = 4001) -> FeedbackTable:
        """C/(Y Theta) and sigma*Pi/(Y Theta) against k = X/(Y Theta)."""
        if self.regime is not Regime.NO_FINITE_RATIO:
            raise RegimeMismatch(f"inverse table needs no finite ratio, got {self.regime.value}")
        gap = 1.0 - self.q_top
        qs = np.unique(np.concatenate([
            np.geomspace(1e-10, 0.5, npts // 2),
            1.0 - np.geomspace(0.5, gap, npts - npts // 2),
        ]))
        k = 1.0 / self.z_of_q(qs)
        c, pi = self.controls_q(qs)
        order = np.argsort(k)
        coord = np.concatenate([[0.0], k[order]])
        a = np.concatenate([[self.merton_consumption * self.n_star], (c * k)[order]])
        b = np.concatenate([[self.pi0], (pi * k)[order]])
        return FeedbackTable(
            coord=coord, c=a, pi=b,
            slopes_beyond=(self.merton_consumption, self.aux.lam / self.R),
        )

    # -- export ----------------------------------------------------------------

    def export_rows(self, zgrid: ArrayLike) -> list[dict[str, float]]:
        z = _arr(zgrid)
        columns = {
            "z": z,
            "g": self.g(z),
            "gp": self.gp(z),
            "gpp": self.gpp(z),
            "C_over_x": self.c_over_x(z),
            "Pi_over_x": self.pi_over_x(z),
            "p_over_x": self.p_over_x(z),
        }
        return [{k: float(v[i]) for k, v in columns.items()} for i in range(z.size)]

    def summary(self) -> dict[str, Any]:
        return {
            "regime": self.regime.value,
            "b3_crit": self.report.b3_crit,
            "qstar": self.qstar,
            "zstar": self.zstar,
            "n_qstar": self.n_star,
            "g0": self.g0,
        }


def _market_for(ap: AuxParams, R: float, mp: MarketParams | None) -> MarketParams:
    return mp if mp is not None else realize_market(ap.b1, ap.b2, ap.b3, R, ap.b4)


def _u_inverse(sol: OdeSolution, q_top: float) -> PchipInterpolator:
    keep = (sol.qgrid > 0) & (sol.qgrid <= q_top)
    u, q = sol.uvals[keep], sol.qgrid[keep]
    if not np.all(np.isfinite(u)):
        raise IntegrationFailure("log-ratio coordinate is not finite along the solution")
    if not np.all(np.diff(u) > 0):
        raise IntegrationFailure("log-ratio coordinate is not increasing along the solution")
    return PchipInterpolator(u, q, extrapolate=True)


def build_sell_all(
    ap: AuxParams, R: float, mp: MarketParams | None = None, report: RegimeReport | None = None
) -> Policy:
    """Closed-form policy: sell the whole endowment at time 0."""
    return Policy(
        report=report or RegimeReport(Regime.SELL_ALL, qstar=0.0),
        aux=ap, market=_market_for(ap, R, mp), R=R, kappa=ap.kappa(R), zstar=0.0, n_star=1.0,
    )


def build_g_finite_ratio(
    tt: TransformTables,
    ap: AuxParams,
    R: float,
    mp: MarketParams | None = None,
    report: RegimeReport | None = None,
) -> Policy:
    """No-sale branch on [0, z*] glued to the closed form above z*."""
    if not tt.finite:
        raise RegimeMismatch("finite-ratio construction needs an interior crossing")
    sol = tt.sol
    zstar = math.exp(tt.ustar)
    # h(u*) = h*: pin U(q*) to ln z*
    shift = tt.ustar - float(sol.uvals[-1])
    report = report or RegimeReport(Regime.FINITE_RATIO, qstar=sol.qstar)
    logger.debug("finite ratio: q*=%.12g z*=%.12g shift=%.6g", sol.qstar, zstar, shift)
    return Policy(
        report=report, aux=ap, market=_market_for(ap, R, mp), R=R, kappa=ap.kappa(R),
        zstar=zstar, n_star=sol.n_qstar, z_top=zstar, sol=sol, tables=tt, shift=shift,
        _u_inverse=_u_inverse(sol, tt.q_top),
    )


def build_g_no_finite_ratio(
    sol: OdeSolution,
    tt: TransformTables,
    ap: AuxParams,
    R: float,
    mp: MarketParams | None = None,
    report: RegimeReport | None = None,
) -> Policy:
    """No-sale branch on all of [0, inf), anchored at q -> 1 through n(1)."""
    if sol.terminated_by is Termination.HIT_ZERO:
        raise IntegrationFailure("n reached zero before q = 1: the value at x = 0 is infinite")
    q_end = tt.q_top
    n1 = float(sol.n(q_end)[0])
    F1 = float(sol.F(q_end)[0])
    gap = 1.0 - q_end

    # int_{q_end}^1 (1-s)/s (ln N)'(s) ds = -(1-R) ln q_end - R int (1-s) n'/(s n) ds
    tail = R * gap * F1 / (q_end * n1) * gap
    if not math.isfinite(tail) or abs(tail) > TAIL_TOL:
        raise TailEstimateFailure(
            f"tail of the anchoring integral is {tail:.3g} at q={q_end:.12g} (limit {TAIL_TOL})"
        )
    integral = -(1.0 - R) * math.log(q_end) - 0.5 * tail
    anchor = -math.log(gap) - integral / (1.0 - R)
    shift = anchor - float(sol.U(q_end)[0])

    mp = _market_for(ap, R, mp)
    lam, eta, rho = ap.lam, mp.eta, mp.rho
    pi0 = (lam - eta * rho * R) / (R * (1.0 - F1 / ((1.0 - R) * n1)))

    report = report or RegimeReport(Regime.NO_FINITE_RATIO, qstar=1.0)
    logger.debug("no finite ratio: n(1)=%.12g tail=%.3g shift=%.6g", n1, tail, shift)
    return Policy(
        report=report, aux=ap, market=mp, R=R, kappa=ap.kappa(R),
        zstar=math.inf, n_star=n1, z_top=math.exp(float(sol.U(q_end)[0]) + shift), sol=sol,
        tables=tt, shift=shift, pi0=pi0, _u_inverse=_u_inverse(sol, q_end),
    )


def build_policy(
    mp: MarketParams,
    ap: AuxParams | None = None,
    report: RegimeReport | None = None,
    *,
    opts: ToleranceOptions | None = None,
    crit_lookup: Any = None,
    drop_upsilon: bool = False,
) -> Policy:
    """Classify (unless a report is given) and build the matching policy."""
    ap = ap or derive_aux_params(mp)
    R = mp.R
    opts = opts or ToleranceOptions.from_settings()
    report = report or classify_regime(ap, R, opts=opts, crit_lookup=crit_lookup,
                                       with_qstar=False)
    if report.regime is Regime.ILL_POSED:
        raise IllPosedValue("the value function is infinite for these parameters")
    if report.regime is Regime.SELL_ALL:
        return build_sell_all(ap, R, mp, report)

    sol = integrate_n(CoefficientSet(ap.b1, ap.b2, ap.b3, R, drop_upsilon), opts)
    tt = build_transforms(sol, ap, R)
    if tt.finite:
        if report.regime is not Regime.FINITE_RATIO:
            logger.warning("b3=%.8g tagged %s but n crosses m at q=%.10g; using the crossing",
                           ap.b3, report.regime.value, sol.qstar)
        report = dataclasses.replace(report, regime=Regime.FINITE_RATIO, qstar=sol.qstar)
        return build_g_finite_ratio(tt, ap, R, mp, report)
    if report.regime is not Regime.NO_FINITE_RATIO:
        logger.warning("b3=%.8g tagged %s but n does not cross m inside (0, 1)",
                       ap.b3, report.regime.value)
    report = dataclasses.replace(report, regime=Regime.NO_FINITE_RATIO, qstar=1.0)
    return build_g_no_finite_ratio(sol, tt, ap, R, mp, report)


def _check_state(x: float, y: float, theta: float) -> None:
    if x < 0 or y <= 0 or theta < 0 or x + y * theta <= 0:
        raise InvalidParams(f"inadmissible state (x={x}, y={y}, theta={theta})")


def _reject_illposed(pol: Policy) -> None:
    if pol.regime is Regime.ILL_POSED:
        raise IllPosedValue("the value function is infinite for these parameters")


def value(pol: Policy, x: float, y: float, theta: float) -> float:
    """V(x, y, theta) at t = 0."""
    _check_state(x, y, theta)
    _reject_illposed(pol)
    R = pol.R
    if pol.regime is Regime.SELL_ALL:
        return pol.kappa * (x + y * theta) ** (1.0 - R) / (1.0 - R)
    if x == 0:
        return (y * theta) ** (1.0 - R) / (1.0 - R) * pol.kappa * pol.n_star ** (-R)
    return x ** (1.0 - R) / (1.0 - R) * float(pol.g(y * theta / x)[0])


def certainty_equivalent(pol: Policy, x: float, y: float, theta: float) -> float:
    """Cash p with V(x + p, y, 0) = V(x, y, theta)."""
    _check_state(x, y, theta)
    _reject_illposed(pol)
    R = pol.R
    if pol.regime is Regime.SELL_ALL:
        return y * theta
    if x == 0:
        return y * theta * pol.n_star ** (-R / (1.0 - R))
    return x * float(pol.p_over_x(y * theta / x)[0])


def post_sale_state(pol: Policy, x: float, y: float, theta: float) -> tuple[float, float]:
    """(x, theta) after the time-0 lump sale, if the state lies in the sale region."""
    _check_state(x, y, theta)
    if pol.regime is Regime.SELL_ALL:
        return x + y * theta, 0.0
    if pol.regime is not Regime.FINITE_RATIO or theta == 0:
        return x, theta
    zs = pol.zstar
    if x == 0:
        keep = theta * zs / (1.0 + zs)
    else:
        z = y * theta / x
        if z <= zs:
            return x, theta
        keep = theta * zs / (1.0 + zs) * (1.0 + z) / z
    return x + y * (theta - keep), keep


def feedback_consumption(pol: Policy, x: float, y: float, theta: float) -> float:
    """Optimal consumption rate C(x, y, theta)."""
    _reject_illposed(pol)
    x, theta = post_sale_state(pol, x, y, theta)
    if x == 0:
        return y * theta * pol.merton_consumption * pol.n_star
    return x * float(pol.c_over_x(y * theta / x)[0])


def feedback_portfolio(pol: Policy, x: float, y: float, theta: float) -> float:
    """Optimal cash amount Pi(x, y, theta) in the hedging asset."""
    _reject_illposed(pol)
    x, theta = post_sale_state(pol, x, y, theta)
    if x == 0:
        return y * theta * pol.pi0 / pol.market.sigma
    return x * float(pol.pi_over_x(y * theta / x)[0])

"""First-order ODE for n(q), the crossing point q* and the threshold b3_crit.

n solves n'(q) = F(q, n) on (0, 1) from the singular start n(0) = 1. Alongside n we
integrate U(q) = int_{q0}^q (ln N)'(s) / ((1-R) s) ds, where N(q) = n^(-R) (1-q)^(R-1);
U is the log-ratio coordinate u = ln z up to an additive constant, which the policy
module fixes.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from endow.config import settings
from endow.errors import BracketFailure, DomainViolation, StiffnessFailure

logger = logging.getLogger(__name__)

# crossing counted as interior only below this q in the b3_crit predicate
INTERIOR_CUTOFF = 1.0 - 1e-6


class ToleranceOptions(BaseModel):
    """Integrator tolerances and cut-offs."""

    model_config = ConfigDict(frozen=True)

    rtol: float = Field(default=1e-10, gt=0)
    atol: float = Field(default=1e-12, gt=0)
    q0: float = Field(default=1e-6, gt=0, lt=0.5)
    q_cap: float = Field(default=1.0 - 1e-9, lt=1)
    zero_floor: float = Field(default=1e-12, ge=0)
    max_step: float = Field(default=1e-2, gt=0)
    b3crit_tol: float = Field(default=1e-6, gt=0)

    @classmethod
    def from_settings(cls) -> "ToleranceOptions":
        return cls(rtol=settings.rtol, atol=settings.atol, b3crit_tol=settings.b3crit_tol)


class Termination(str, Enum):
    CROSSED_M = "CrossedM"
    REACHED_ONE = "ReachedOne"
    HIT_ZERO = "HitZero"


def b3_upper(b1: float, R: float) -> float:
    """Upper bound of b3_crit: 2R for R>1, min(2R, R + b1/(1-R)) for R<1."""
    if R > 1:
        return 2.0 * R
    return min(2.0 * R, R + b1 / (1.0 - R))


def illposed_threshold(b1: float, b2: float, R: float) -> float:
    """b1/(1-R) + b2 R; at or above it the value is infinite (R<1 only)."""
    if R > 1:
        return math.inf
    return b1 / (1.0 - R) + b2 * R


@dataclass(frozen=True)
class CoefficientSet:
    """The curves m, l and the helper functions of the n-equation.

    m, ell, S, phi and E2 accept floats or arrays; upsilon and F are scalar, upsilon_v and
    F_v their array versions.
    `drop_upsilon` forces upsilon = 0, which is exact when b2 = 1 and n lies between
    m and l.
    """

    b1: float
    b2: float
    b3: float
    R: float
    drop_upsilon: bool = False

    @property
    def sign(self) -> float:
        """sgn(1 - R)."""
        return 1.0 if self.R < 1 else -1.0

    def P(self, q: Any) -> Any:
        return (1.0 - self.R) * q + self.R

    def m(self, q: Any) -> Any:
        b1, b3, R = self.b1, self.b3, self.R
        return (1.0 - R) * R / b1 * q * q - b3 * (1.0 - R) / b1 * q + 1.0

    def S(self, q: Any) -> Any:
        R = self.R
        return (1.0 - R) * q * (1.0 - q) + (self.b2 - 1.0) * R * (1.0 - R) * q / self.P(q)

    def ell(self, q: Any) -> Any:
        return self.m(q) + self.S(q) / self.b1

    def phi(self, q: Any, n: Any) -> Any:
        b1, b2, b3, R = self.b1, self.b2, self.b3, self.R
        return b1 * (n - 1.0) + (1.0 - R) * (b3 - 2.0 * R) * q + (2.0 - b2) * R * (1.0 - R)

    def E2(self, q: Any) -> Any:
        R = self.R
        return 4.0 * R * R * (1.0 - R) ** 2 * (self.b2 - 1.0) * (1.0 - q) ** 2

    def upsilon(self, q: float, n: float) -> float:
        if self.drop_upsilon:
            return 0.0
        phi = self.phi(q, n)
        e2 = self.E2(q)
        s = self.sign
        root = math.sqrt(phi * phi + e2)
        if s * phi > 0:
            # phi - s*root cancels; use the conjugate
            return -e2 / (phi + s * root)
        return phi - s * root

    def upsilon_v(self, q: NDArray[np.float64], n: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.drop_upsilon:
            return np.zeros(np.broadcast(q, n).shape)
        phi = self.phi(q, n)
        e2 = self.E2(q)
        s = self.sign
        root = np.sqrt(phi * phi + e2)
        stable = s * phi > 0
        conj = phi + s * root
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(stable, -e2 / np.where(stable, conj, 1.0), phi - s * root)

    def F_v(self, q: NDArray[np.float64], n: NDArray[np.float64]) -> NDArray[np.float64]:
        """Vectorised F."""
        b1, R = self.b1, self.R
        P = self.P(q)
        mq = self.m(q)
        num = 2.0 * b1 * P * (n - mq) - q * (self.upsilon_v(q, n) - self.upsilon_v(q, mq))
        den = 2.0 * R * (1.0 - q) * P * (self.S(q) - b1 * (n - mq))
        out: NDArray[np.float64] = -(1.0 - R) * n * num / den
        return out

    def Phi(self, chi: Any) -> Any:
        a, b, c = self.slope_quadratic()
        return (a * chi + b) * chi + c

    def slope_quadratic(self) -> tuple[float, float, float]:
        b1, b2, b3, R = self.b1, self.b2, self.b3, self.R
        return b1 * R, R * (1.0 - R) * (b3 - b2 - b1 / R), -b3 * (1.0 - R) ** 2

    def in_band(self, q: float, n: float) -> bool:
        return (1.0 - self.R) * (self.ell(q) - n) > 0

    def F(self, q: float, n: float) -> float:
        """n' in the form whose denominator b1(l - n) stays away from 0 near n = m."""
        b1, R = self.b1, self.R
        P = self.P(q)
        mq = self.m(q)
        num = 2.0 * b1 * P * (n - mq) - q * (self.upsilon(q, n) - self.upsilon(q, mq))
        den = 2.0 * R * (1.0 - q) * P * (self.S(q) - b1 * (n - mq))
        return -(1.0 - R) * n * num / den

    def forms(self, q: float, n: float) -> tuple[float, float, float]:
        """(F_A, F_B, F_C): three algebraically equal expressions for n'."""
        b1, R = self.b1, self.R
        P = self.P(q)
        gap = self.ell(q) - n
        ups = self.upsilon(q, n)
        f_a = n * (
            (1.0 - R) / (R * (1.0 - q))
            - (1.0 - R) ** 2 / (b1 * R) * q / gap
            + (1.0 - R) * q / (2.0 * b1 * R * (1.0 - q) * P) * ups / gap
        )
        # phi + s*sqrt(phi^2 + E^2) = 2 phi - upsilon
        den_b = 2.0 * (1.0 - R) * (1.0 - q) * P - 2.0 * self.phi(q, n) + ups
        f_b = (1.0 - R) * n / (R * (1.0 - q)) - 2.0 * (1.0 - R) ** 2 * q * n / R / den_b
        return f_a, f_b, self.F(q, n)

    def F_simplified(self, q: float, n: float) -> float:
        """n' with upsilon = 0 (the b2 = 1 equation)."""
        R = self.R
        return n * (
            (1.0 - R) / (R * (1.0 - q))
            - (1.0 - R) ** 2 * q / (self.b1 * R * (self.ell(q) - n))
        )


def n_prime(q: float, n: float, cs: CoefficientSet) -> float:
    """F(q, n) inside the admissible band."""
    if not 0.0 < q < 1.0:
        raise DomainViolation(f"q={q} outside (0, 1)")
    if not cs.in_band(q, n):
        raise DomainViolation(f"(q={q:.6g}, n={n:.6g}) outside (1-R)(l(q) - n) > 0")
    return cs.F(q, n)


def initial_slope(cs: CoefficientSet) -> float:
    """n'(0): smaller root of Phi for R<1, larger for R>1."""
    a, b, c = cs.slope_quadratic()
    disc = b * b - 4.0 * a * c
    if disc <= 1e-14 * max(1.0, b * b, abs(4.0 * a * c)):
        logger.warning("slope quadratic has a double root (disc=%.3g)", disc)
        disc = max(disc, 0.0)
    root = math.sqrt(disc)
    t = -0.5 * (b + math.copysign(root, b))
    r1 = t / a
    r2 = c / t if t != 0 else r1
    slope = min(r1, r2) if cs.R < 1 else max(r1, r2)

    # n starts inside the band: n'(0) < l'(0) for R<1, n'(0) > l'(0) for R>1
    ell_slope = (1.0 - cs.R) * (cs.b2 - cs.b3) / cs.b1
    if cs.sign * (ell_slope - slope) <= 0:
        logger.warning("initial slope %.6g violates its side condition (l'(0) = %.6g)",
                       slope, ell_slope)
    return slope


@dataclass(frozen=True)
class BandPoints:
    """First zeros of n, m and l on (0, 1], 1 when there is none."""

    q_n: float
    q_m: float
    q_ell: float


@dataclass
class OdeSolution:
    """Trajectory of n with the crossing point and dense evaluation."""

    cs: CoefficientSet
    qgrid: NDArray[np.float64]
    nvals: NDArray[np.float64]
    uvals: NDArray[np.float64]
    qstar: float
    n_qstar: float
    terminated_by: Termination
    slope0: float
    q0: float
    nfev: int = 0
    _dense: Any = field(default=None, repr=False)

    @property
    def q_end(self) -> float:
        return float(self.qgrid[-1])

    @property
    def n_one(self) -> float:
        """n(1), taken as the grid endpoint value."""
        return float(self.nvals[-1])

    @property
    def log_slope0(self) -> float:
        """(ln N)'(0)."""
        return (1.0 - self.cs.R) - self.cs.R * self.slope0

    def _state(self, q: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.asarray(self._dense(q))

    def n(self, q: ArrayLike) -> NDArray[np.float64]:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        out = 1.0 + self.slope0 * q
        if self._dense is not None:
            inside = q >= self.q0
            if inside.any():
                qq = np.minimum(q[inside], self.q_end)
                out[inside] = self._state(qq)[0]
        return out

    def U(self, q: ArrayLike) -> NDArray[np.float64]:
        """Integrated log-ratio coordinate; U(q0) = 0, -inf at q = 0."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.empty_like(q)
        below = q < self.q0
        with np.errstate(divide="ignore"):
            out[below] = self.log_slope0 / (1.0 - self.cs.R) * np.log(q[below] / self.q0)
        if (~below).any() and self._dense is not None:
            out[~below] = self._state(np.minimum(q[~below], self.q_end))[1]
        return out

    def F(self, q: ArrayLike) -> NDArray[np.float64]:
        """n'(q) along the solution."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        nq = self.n(q)
        out = np.full_like(q, self.slope0)
        inside = q >= self.q0
        if inside.any():
            out[inside] = self.cs.F_v(np.minimum(q[inside], self.q_end), nq[inside])
        return out

    def log_N_prime(self, q: ArrayLike) -> NDArray[np.float64]:
        """(ln N)'(q) = (1-R)/(1-q) - R n'/n."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        R = self.cs.R
        return (1.0 - R) / (1.0 - q) - R * self.F(q) / self.n(q)

    def band_points(self) -> BandPoints:
        cs = self.cs
        q_n = self.q_end if self.terminated_by is Termination.HIT_ZERO else 1.0

        # m is quadratic: (1-R)R/b1 q^2 - b3(1-R)/b1 q + 1
        a = (1.0 - cs.R) * cs.R / cs.b1
        b = -cs.b3 * (1.0 - cs.R) / cs.b1
        roots = np.roots([a, b, 1.0])
        real = sorted(float(r.real) for r in roots if abs(r.imag) < 1e-14 and 0 < r.real <= 1)
        q_m = real[0] if real else 1.0

        grid = np.linspace(1e-9, 1.0, 4001)
        vals = cs.ell(grid)
        crossing = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
        if crossing.size:
            i = int(crossing[0])
            q_ell = float(brentq(cs.ell, grid[i], grid[i + 1], xtol=1e-14))
        else:
            q_ell = 1.0
        return BandPoints(q_n=q_n, q_m=q_m, q_ell=q_ell)

    def to_rows(self) -> list[dict[str, float]]:
        """Debug table q, n, m, ell on the stored grid."""
        return [
            {"q": float(q), "n": float(n), "m": float(self.cs.m(q)), "ell": float(self.cs.ell(q))}
            for q, n in zip(self.qgrid, self.nvals)
        ]


def _immediate(cs: CoefficientSet) -> OdeSolution:
    zero = np.zeros(1)
    return OdeSolution(
        cs=cs, qgrid=zero, nvals=np.ones(1), uvals=zero.copy(), qstar=0.0, n_qstar=1.0,
        terminated_by=Termination.CROSSED_M, slope0=0.0, q0=0.0,
    )


def integrate_n(cs: CoefficientSet, opts: ToleranceOptions | None = None) -> OdeSolution:
    """Integrate n from q0 toward 1, stopping at the crossing with m, at n = 0 or near 1."""
    if cs.b3 <= 0:
        return _immediate(cs)
    opts = opts or ToleranceOptions.from_settings()
    R = cs.R
    slope = initial_slope(cs)
    q0 = opts.q0
    y0 = [1.0 + q0 * slope, 0.0]

    def rhs(q: float, y: NDArray[np.float64]) -> list[float]:
        n = y[0]
        f = cs.F(q, n)
        dlog_n = (1.0 - R) / (1.0 - q) - R * f / n
        return [f, dlog_n / ((1.0 - R) * q)]

    def crossed(q: float, y: NDArray[np.float64]) -> float:
        return (1.0 - R) * (y[0] - cs.m(q))

    def hit_zero(q: float, y: NDArray[np.float64]) -> float:
        return y[0] - opts.zero_floor

    crossed.terminal = True  # type: ignore[attr-defined]
    crossed.direction = -1  # type: ignore[attr-defined]
    hit_zero.terminal = True  # type: ignore[attr-defined]
    hit_zero.direction = -1  # type: ignore[attr-defined]

    res = solve_ivp(
        rhs, (q0, opts.q_cap), y0, method="RK45", rtol=opts.rtol, atol=opts.atol,
        dense_output=True, events=(crossed, hit_zero), max_step=opts.max_step,
        first_step=q0 * 1e-2,
    )
    if res.status == -1:
        q_reached = float(res.t[-1])
        raise StiffnessFailure(f"n-equation stalled at q={q_reached:.10g}: {res.message}",
                               q_reached)

    qgrid = np.concatenate([[0.0], res.t])
    nvals = np.concatenate([[1.0], res.y[0]])
    uvals = np.concatenate([[-np.inf], res.y[1]])

    if res.status == 1 and len(res.t_events[0]):
        qstar = float(res.t_events[0][0])
        n_qstar = float(res.y_events[0][0][0])
        how = Termination.CROSSED_M
    elif res.status == 1 and len(res.t_events[1]):
        # zero is absorbing for n; q* = 1 in that case
        qstar, n_qstar, how = 1.0, 0.0, Termination.HIT_ZERO
    else:
        qstar, n_qstar, how = 1.0, float(res.y[0][-1]), Termination.REACHED_ONE

    logger.debug("n-equation: %s at q=%.12g (n=%.12g, %d steps, %d evals)", how.value,
                 qgrid[-1], nvals[-1], res.t.size, res.nfev)
    return OdeSolution(
        cs=cs, qgrid=qgrid, nvals=nvals, uvals=uvals, qstar=qstar, n_qstar=n_qstar,
        terminated_by=how, slope0=slope, q0=q0, nfev=int(res.nfev), _dense=res.sol,
    )


def _has_interior_crossing(b1: float, b2: float, b3: float, R: float,
                           opts: ToleranceOptions) -> bool:
    sol = integrate_n(CoefficientSet(b1, b2, b3, R), opts)
    return sol.terminated_by is Termination.CROSSED_M and sol.qstar < INTERIOR_CUTOFF


def find_b3_crit(
    b1: float,
    b2: float,
    R: float,
    tol: float = 1e-6,
    opts: ToleranceOptions | None = None,
) -> float:
    """Bisection for the b3 at which the crossing point leaves (0, 1)."""
    opts = opts or ToleranceOptions.from_settings()
    # b3_crit <= b3_upper always; at b2 = 1 the two coincide and n touches m at q = 1
    # there, so the upper end is taken as non-crossing without integrating
    lo, hi = R, b3_upper(b1, R)
    if not _has_interior_crossing(b1, b2, lo, R, opts):
        raise BracketFailure(
            f"no interior crossing at b3 = R = {lo:.6g} (b1={b1}, b2={b2}, R={R})"
        )
    steps = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _has_interior_crossing(b1, b2, mid, R, opts):
            lo = mid
        else:
            hi = mid
        steps += 1
        logger.debug("b3_crit bracket [%.10f, %.10f]", lo, hi)
    crit = 0.5 * (lo + hi)
    logger.info("b3_crit(b1=%.6g, b2=%.6g, R=%.6g) = %.8f after %d steps", b1, b2, R, crit, steps)
    return crit

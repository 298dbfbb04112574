"""Path engines for the optimally controlled system.

Each regime has a stepper that advances a chunk of paths on a shared time grid. The
ratio processes are advanced by Euler-Maruyama and projected back onto their domain;
the projected amount is the local time L that drives the sales. The reflecting level
is moved inward by BOUNDARY_SHIFT local standard deviations, which removes the
sqrt(dt) lag of discretely monitored reflection. Y always takes exact log-normal steps.
"""

import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator

from endow.config import settings
from endow.errors import InvalidParams, RegimeMismatch, StepRejection
from endow.model.params import AuxParams, MarketParams, Regime
from endow.sim.rng import BrownianDriver, chunk_sizes, make_streams
from endow.solver.ode import illposed_threshold
from endow.solver.policy import FeedbackTable, Policy, post_sale_state

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]

# ratios at or below this are treated as degenerate when recovering X from Z
DEGENERATE_RATIO = 1e-14

# expected overshoot of a Gaussian random walk over a level, per sigma sqrt(dt)
BOUNDARY_SHIFT = 0.5826

FIELDS = ("Y", "Theta", "X", "Z", "C", "Pi", "L")


class Scheme(str, Enum):
    REFLECTED_EULER = "ReflectedEuler"


class SimConfig(BaseModel):
    """Time grid, sample size and seeding of one simulation run."""

    model_config = ConfigDict(frozen=True)

    dt: float = Field(default_factory=lambda: settings.dt, gt=0)
    horizon: float | None = Field(default=None, gt=0)  # None: chosen from the decay rate
    npaths: int = Field(default_factory=lambda: settings.npaths, ge=1)
    seed: int = Field(default_factory=lambda: settings.seed, ge=0)
    scheme: Scheme = Scheme.REFLECTED_EULER
    chunk_size: int = Field(default_factory=lambda: settings.chunk_size, ge=1)
    record: int = Field(default=1, ge=0)  # paths kept as full time series
    substeps: int = Field(default=1, ge=1)  # Brownian sub-increments summed per step
    zero_noise: bool = False
    max_halvings: int = Field(default=8, ge=0)

    @model_validator(mode="after")
    def _check_grid(self) -> "SimConfig":
        if self.horizon is not None and self.horizon < self.dt:
            raise ValueError(f"horizon {self.horizon} shorter than dt {self.dt}")
        return self


@dataclass
class SimPath:
    """Recorded paths plus per-path utilities and pathwise diagnostics.

    Arrays in `series` have shape (steps + 1, recorded paths). In the no-finite-ratio
    case the Z column holds K = X/(Y Theta).
    """

    regime: Regime
    t: Array
    series: dict[str, Array]
    utility: Array  # truncated discounted utility per path
    terminal: Array  # discounted utility rate at the horizon per path
    dt: float
    horizon: float
    max_boundary_excess: float = 0.0
    max_complementarity: float = 0.0
    min_X: float = math.inf
    max_theta_increase: float = 0.0
    min_C: float = math.inf
    degeneracies: int = 0
    halvings: int = 0
    local_time_at_boundary_only: bool = True

    @property
    def npaths(self) -> int:
        return int(self.utility.size)

    @property
    def estimate(self) -> float:
        return float(np.mean(self.utility))

    @property
    def stderr(self) -> float:
        if self.utility.size < 2:
            return math.nan
        return float(np.std(self.utility, ddof=1) / math.sqrt(self.utility.size))

    def __getattr__(self, name: str) -> Array:
        # Y, Theta, X, ... as attributes
        series = self.__dict__.get("series", {})
        if name in series:
            return series[name]
        raise AttributeError(name)

    def to_rows(self, path: int = 0) -> list[dict[str, float]]:
        """Time series of one recorded path, columns t,Y,Theta,X,Z,C,Pi,L."""
        if not self.series or path >= self.series["X"].shape[1]:
            raise IndexError(f"path {path} was not recorded")
        return [
            {"t": float(self.t[i]), **{k: float(self.series[k][i, path]) for k in FIELDS}}
            for i in range(self.t.size)
        ]


@dataclass
class _State:
    Y: Array
    Theta: Array
    X: Array
    Z: Array
    C: Array
    Pi: Array
    L: Array


class _Stepper:
    """Advances one chunk of paths; `advance` returns (distance to boundary, dL)."""

    degeneracies: int = 0

    def __init__(self, mp: MarketParams):
        self.mp = mp

    def start(self, size: int) -> _State:
        raise NotImplementedError

    def advance(self, s: _State, dt: float, dB1: Array, dB2: Array) -> tuple[Array, Array]:
        raise NotImplementedError

    def _move_price(self, s: _State, dt: float, dB2: Array) -> None:
        mp = self.mp
        s.Y = s.Y * np.exp((mp.alpha - 0.5 * mp.eta**2) * dt + mp.eta * dB2)


class _MertonStepper(_Stepper):
    """Exact geometric Brownian wealth with Merton controls after a full sale."""

    def __init__(self, mp: MarketParams, ap: AuxParams, wealth: float):
        super().__init__(mp)
        R = mp.R
        self.lam = ap.lam
        self.c0 = ap.b1 / (ap.b4 * R)
        self.wealth = wealth
        self.drift = self.lam**2 / R + mp.r - self.c0 - self.lam**2 / (2.0 * R * R)

    def _controls(self, s: _State) -> None:
        s.C = self.c0 * s.X
        s.Pi = self.lam / (self.mp.sigma * self.mp.R) * s.X

    def start(self, size: int) -> _State:
        zeros = np.zeros(size)
        s = _State(Y=np.full(size, self.mp.y0), Theta=zeros.copy(), X=np.full(size, self.wealth),
                   Z=zeros.copy(), C=zeros.copy(), Pi=zeros.copy(), L=zeros.copy())
        self._controls(s)
        return s

    def advance(self, s: _State, dt: float, dB1: Array, dB2: Array) -> tuple[Array, Array]:
        s.X = s.X * np.exp(self.drift * dt + self.lam / self.mp.R * dB1)
        self._move_price(s, dt, dB2)
        self._controls(s)
        zeros = np.zeros_like(s.X)
        return zeros, zeros


class _RatioStepper(_Stepper):
    """Z = Y Theta / X reflected downward at z*."""

    def __init__(self, pol: Policy, mp: MarketParams, table: FeedbackTable):
        super().__init__(mp)
        self.pol = pol
        self.table = table
        self.zstar = pol.zstar
        self.lam = pol.aux.lam
        self.zeta = pol.aux.zeta
        _, pi_star = table.at(np.array([pol.zstar]))
        p = float(pi_star[0])
        # volatility of Z at the boundary
        self.vol_star = pol.zstar * math.sqrt(
            max(mp.eta**2 - 2.0 * mp.rho * mp.eta * p + p * p, 0.0))
        x, theta = post_sale_state(pol, mp.x0, mp.y0, mp.theta0)
        self.x_start = x
        self.theta_start = theta
        self.degeneracies = 0

    def barrier(self, dt: float) -> float:
        """Reflecting level used with step dt; tends to z* as dt -> 0."""
        return max(self.zstar - BOUNDARY_SHIFT * self.vol_star * math.sqrt(dt), 0.5 * self.zstar)

    def _controls(self, s: _State) -> None:
        c, pi = self.table.at(s.Z)
        s.C = c * s.X
        s.Pi = pi * s.X / self.mp.sigma

    def start(self, size: int) -> _State:
        mp = self.mp
        X = np.full(size, self.x_start)
        Theta = np.full(size, self.theta_start)
        Y = np.full(size, mp.y0)
        Z = np.minimum(Y * Theta / X, self.zstar)
        zeros = np.zeros(size)
        s = _State(Y=Y, Theta=Theta, X=X, Z=Z, C=zeros.copy(), Pi=zeros.copy(), L=zeros.copy())
        self._controls(s)
        return s

    def advance(self, s: _State, dt: float, dB1: Array, dB2: Array) -> tuple[Array, Array]:
        mp = self.mp
        eta, rho = mp.eta, mp.rho
        c, pi = self.table.at(s.Z)
        drift = self.zeta * eta + c - self.lam * pi + pi * pi - eta * rho * pi
        Z_pre = s.Z + s.Z * (drift * dt + eta * dB2 - pi * dB1)
        if np.any(Z_pre < 0):
            raise StepRejection(f"ratio became negative ({float(Z_pre.min()):.3g}) with dt={dt}")
        zb = self.barrier(dt)
        dL = np.maximum(Z_pre - zb, 0.0)
        Z_prev = s.Z
        s.Z = np.minimum(Z_pre, zb)
        s.L = s.L + dL
        s.Theta = self.theta_start * np.exp(-s.L / (zb * (1.0 + zb)))
        self._move_price(s, dt, dB2)
        tiny = s.Z <= DEGENERATE_RATIO
        if tiny.any():
            self.degeneracies += int(tiny.sum())
            logger.warning("ratio at %d path(s) below %.0e; carrying the previous ratio",
                           int(tiny.sum()), DEGENERATE_RATIO)
        s.X = s.Y * s.Theta / np.where(tiny, np.maximum(Z_prev, DEGENERATE_RATIO), s.Z)
        self._controls(s)
        return zb - s.Z, dL


class _InverseRatioStepper(_Stepper):
    """K = X / (Y Theta) reflected upward at 0."""

    def __init__(self, pol: Policy, mp: MarketParams, table: FeedbackTable):
        super().__init__(mp)
        self.table = table
        self.lam = pol.aux.lam
        self.zeta = pol.aux.zeta
        _, b0 = table.at(np.zeros(1))
        # volatility of K at 0
        self.vol_zero = abs(float(b0[0]))

    def barrier(self, dt: float) -> float:
        return BOUNDARY_SHIFT * self.vol_zero * math.sqrt(dt)

    def _controls(self, s: _State) -> None:
        a, b = self.table.at(s.Z)
        base = s.Y * s.Theta
        s.X = base * s.Z
        s.C = base * a
        s.Pi = base * b / self.mp.sigma

    def start(self, size: int) -> _State:
        mp = self.mp
        zeros = np.zeros(size)
        s = _State(Y=np.full(size, mp.y0), Theta=np.full(size, mp.theta0),
                   X=np.full(size, mp.x0), Z=np.full(size, mp.x0 / (mp.y0 * mp.theta0)),
                   C=zeros.copy(), Pi=zeros.copy(), L=zeros.copy())
        self._controls(s)
        return s

    def advance(self, s: _State, dt: float, dB1: Array, dB2: Array) -> tuple[Array, Array]:
        mp = self.mp
        eta, rho = mp.eta, mp.rho
        K = s.Z
        a, b = self.table.at(K)
        drift = (eta - self.zeta) * eta * K + (self.lam - eta * rho) * b - a
        K_pre = K + drift * dt + b * dB1 - eta * K * dB2
        kb = self.barrier(dt)
        dL = np.maximum(kb - K_pre, 0.0)
        s.Z = np.maximum(K_pre, kb)
        s.L = s.L + dL
        s.Theta = mp.theta0 * np.exp(-s.L / (1.0 + kb))
        self._move_price(s, dt, dB2)
        self._controls(s)
        return s.Z - kb, dL


@dataclass
class _ChunkOut:
    utility: Array
    terminal: Array
    series: dict[str, Array] = field(default_factory=dict)
    max_excess: float = -math.inf
    max_comp: float = 0.0
    min_X: float = math.inf
    max_dtheta: float = 0.0
    min_C: float = math.inf
    degeneracies: int = 0
    boundary_only: bool = True


def _run_chunk(make: Callable[[], _Stepper], mp: MarketParams, cfg: SimConfig, dt: float,
               nsteps: int, chunk: int, size: int, record: int) -> _ChunkOut:
    streams = None if cfg.zero_noise else make_streams(cfg.seed, chunk)
    driver = BrownianDriver(streams, mp.rho, dt, size, substeps=cfg.substeps)
    stepper = make()
    s = stepper.start(size)
    R, beta = mp.R, mp.beta

    series = {k: np.empty((nsteps + 1, record)) for k in FIELDS} if record else {}

    def keep(i: int) -> None:
        for k in series:
            series[k][i] = getattr(s, k)[:record]

    keep(0)
    f_prev = s.C ** (1.0 - R) / (1.0 - R)
    utility = np.zeros(size)
    out = _ChunkOut(utility=utility, terminal=f_prev, min_X=float(s.X.min()),
                    min_C=float(s.C.min()))
    for i in range(1, nsteps + 1):
        dB1, dB2 = driver.step()
        theta_prev = s.Theta
        dist, dL = stepper.advance(s, dt, dB1, dB2)
        f = math.exp(-beta * i * dt) * s.C ** (1.0 - R) / (1.0 - R)
        utility += 0.5 * dt * (f_prev + f)
        f_prev = f
        out.max_excess = max(out.max_excess, float((-dist).max()))
        out.max_comp = max(out.max_comp, float(np.abs(dist * dL).max()))
        out.min_X = min(out.min_X, float(s.X.min()))
        out.min_C = min(out.min_C, float(s.C.min()))
        out.max_dtheta = max(out.max_dtheta, float((s.Theta - theta_prev).max()))
        if np.any((dL > 0) & (dist != 0)):
            out.boundary_only = False
        if series:
            keep(i)
    out.terminal = f_prev
    out.series = series
    out.degeneracies = stepper.degeneracies
    return out


def _run(make: Callable[[], _Stepper], regime: Regime, mp: MarketParams, cfg: SimConfig,
         horizon: float, dt: float, halvings: int) -> SimPath:
    nsteps = max(1, int(round(horizon / dt)))
    plan = list(chunk_sizes(cfg.npaths, cfg.chunk_size))
    records = []
    left = cfg.record
    for _, size in plan:
        records.append(min(left, size))
        left -= records[-1]

    def job(k: int) -> _ChunkOut:
        chunk, size = plan[k]
        return _run_chunk(make, mp, cfg, dt, nsteps, chunk, size, records[k])

    workers = min(settings.threads, len(plan))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(job, range(len(plan))))
    else:
        outs = [job(k) for k in range(len(plan))]

    series = {}
    if cfg.record:
        series = {k: np.concatenate([o.series[k] for o in outs if o.series], axis=1)
                  for k in FIELDS}
    path = SimPath(
        regime=regime,
        t=np.arange(nsteps + 1) * dt,
        series=series,
        utility=np.concatenate([o.utility for o in outs]),
        terminal=np.concatenate([o.terminal for o in outs]),
        dt=dt,
        horizon=nsteps * dt,
        max_boundary_excess=max(o.max_excess for o in outs),
        max_complementarity=max(o.max_comp for o in outs),
        min_X=min(o.min_X for o in outs),
        max_theta_increase=max(o.max_dtheta for o in outs),
        min_C=min(o.min_C for o in outs),
        degeneracies=sum(o.degeneracies for o in outs),
        halvings=halvings,
        local_time_at_boundary_only=all(o.boundary_only for o in outs),
    )
    logger.info("%s: %d paths x %d steps (dt=%g), utility %.6g +- %.2g", regime.value,
                path.npaths, nsteps, dt, path.estimate, path.stderr)
    return path


def _with_retry(make: Callable[[], _Stepper], regime: Regime, mp: MarketParams,
                cfg: SimConfig, horizon: float) -> SimPath:
    dt = cfg.dt
    for attempt in range(cfg.max_halvings + 1):
        try:
            return _run(make, regime, mp, cfg, horizon, dt, attempt)
        except StepRejection:
            if attempt == cfg.max_halvings:
                raise
            logger.warning("step rejected at dt=%g, retrying with dt=%g", dt, dt / 2)
            dt /= 2.0
    raise AssertionError("unreachable")


def decay_rate(pol: Policy) -> float:
    """Exponential rate at which the discounted utility rate decays."""
    return pol.merton_consumption * min(pol.n_star, 1.0)


def default_horizon(pol: Policy, tol: float = 1e-4) -> float:
    return math.log(1.0 / tol) / decay_rate(pol)


def simulate_regime1(mp: MarketParams, ap: AuxParams, cfg: SimConfig) -> SimPath:
    """Sell everything at t = 0, then follow Merton: exact log-normal wealth."""
    if ap.b3 > 0:
        raise RegimeMismatch(f"b3 = {ap.b3:.6g} > 0: selling everything is not optimal")
    horizon = cfg.horizon or math.log(1e4) * ap.b4 * mp.R / ap.b1
    return _with_retry(lambda: _MertonStepper(mp, ap, mp.wealth), Regime.SELL_ALL, mp, cfg,
                       horizon)


def simulate_regime2(pol: Policy, mp: MarketParams, cfg: SimConfig) -> SimPath:
    """Reflected ratio at z* with the time-0 lump sale when z0 > z*."""
    if pol.regime is not Regime.FINITE_RATIO:
        raise RegimeMismatch(f"expected a finite critical ratio, got {pol.regime.value}")
    horizon = cfg.horizon or default_horizon(pol)
    if mp.theta0 == 0:
        return _with_retry(lambda: _MertonStepper(mp, pol.aux, mp.x0), pol.regime, mp, cfg,
                           horizon)
    table = pol.ratio_table()
    return _with_retry(lambda: _RatioStepper(pol, mp, table), pol.regime, mp, cfg, horizon)


def simulate_regime3(pol: Policy, mp: MarketParams, cfg: SimConfig) -> SimPath:
    """Reflected inverse ratio at 0; sales only when cash is exhausted."""
    if pol.regime is not Regime.NO_FINITE_RATIO:
        raise RegimeMismatch(f"expected no finite critical ratio, got {pol.regime.value}")
    horizon = cfg.horizon or default_horizon(pol)
    if mp.theta0 == 0:
        return _with_retry(lambda: _MertonStepper(mp, pol.aux, mp.x0), pol.regime, mp, cfg,
                           horizon)
    table = pol.inverse_ratio_table()
    return _with_retry(lambda: _InverseRatioStepper(pol, mp, table), pol.regime, mp, cfg,
                       horizon)


def simulate(pol: Policy, mp: MarketParams, cfg: SimConfig) -> SimPath:
    """Dispatch on the policy's regime."""
    if pol.regime is Regime.SELL_ALL:
        return simulate_regime1(mp, pol.aux, cfg)
    if pol.regime is Regime.FINITE_RATIO:
        return simulate_regime2(pol, mp, cfg)
    return simulate_regime3(pol, mp, cfg)


@dataclass
class UtilityGrowthReport:
    """Truncated utility of the explicit divergent strategy at growing horizons."""

    horizons: list[float]
    mc_utility: list[float]
    mc_stderr: list[float]
    closed_form: list[float]
    exponent: float
    exhausted_paths: int
    npaths: int
    min_theta_increase: float = 0.0  # max step increase of Theta, should be <= 0

    @property
    def increasing(self) -> bool:
        return all(b > a for a, b in zip(self.closed_form, self.closed_form[1:]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "horizons": self.horizons,
            "mc_utility": self.mc_utility,
            "mc_stderr": self.mc_stderr,
            "closed_form": self.closed_form,
            "exponent": self.exponent,
            "exhausted_paths": self.exhausted_paths,
            "npaths": self.npaths,
            "increasing": self.increasing,
        }


def illposed_exponent(mp: MarketParams, ap: AuxParams) -> float:
    """zeta eta (1-R) - eta^2 R (1-R)/2 + r(1-R) - beta; >= 0 when the value is infinite."""
    R, eta = mp.R, mp.eta
    return ap.zeta * eta * (1.0 - R) - 0.5 * eta**2 * R * (1.0 - R) + mp.r * (1.0 - R) - mp.beta


def illposed_closed_form(mp: MarketParams, ap: AuxParams, horizon: float) -> float:
    """Expected truncated utility of C = lambda eta X up to `horizon`."""
    R = mp.R
    k = illposed_exponent(mp, ap)
    lead = (ap.lam * mp.eta * mp.x0) ** (1.0 - R) / (1.0 - R)
    if abs(k) * horizon < 1e-12:
        return lead * horizon
    return lead * math.expm1(k * horizon) / k


def demo_illposed(mp: MarketParams, ap: AuxParams, cfg: SimConfig,
                  horizon: float = 10.0) -> UtilityGrowthReport:
    """Simulate C = lambda eta X, Pi = (eta/sigma) X with sales at rate zeta eta X/Y."""
    R = mp.R
    if not (R < 1 and ap.b3 >= illposed_threshold(ap.b1, ap.b2, R)):
        raise RegimeMismatch("the divergent strategy applies only when the value is infinite")
    if mp.x0 <= 0:
        raise InvalidParams("the divergent strategy needs x0 > 0")
    if ap.lam == 0:
        logger.warning("lambda = 0: the strategy consumes nothing")

    T = cfg.horizon or horizon
    horizons = [T, 2.0 * T, 4.0 * T]
    dt = cfg.dt
    nsteps = int(round(horizons[-1] / dt))
    marks = [int(round(h / dt)) for h in horizons]
    eta, zeta = mp.eta, ap.zeta
    util_parts: list[Array] = []
    exhausted = 0
    max_dtheta = 0.0

    for chunk, size in chunk_sizes(cfg.npaths, cfg.chunk_size):
        streams = None if cfg.zero_noise else make_streams(cfg.seed, chunk)
        driver = BrownianDriver(streams, mp.rho, dt, size, substeps=cfg.substeps)
        X = np.full(size, mp.x0)
        Y = np.full(size, mp.y0)
        Theta = np.full(size, mp.theta0)
        active = Theta > 0
        f_prev = (ap.lam * eta * X) ** (1.0 - R) / (1.0 - R)
        acc = np.zeros(size)
        snapshots = np.empty((len(marks), size))
        for i in range(1, nsteps + 1):
            dB1, dB2 = driver.step()
            sale = np.where(active, zeta * eta * X / Y * dt, 0.0)
            X = X * np.exp((np.where(active, zeta * eta, 0.0) + mp.r - 0.5 * eta**2) * dt
                           + eta * dB1)
            Y = Y * np.exp((mp.alpha - 0.5 * eta**2) * dt + eta * dB2)
            new_theta = np.maximum(Theta - sale, 0.0)
            max_dtheta = max(max_dtheta, float((new_theta - Theta).max()))
            Theta = new_theta
            active = Theta > 0
            f = math.exp(-mp.beta * i * dt) * (ap.lam * eta * X) ** (1.0 - R) / (1.0 - R)
            acc += 0.5 * dt * (f_prev + f)
            f_prev = f
            for j, m in enumerate(marks):
                if i == m:
                    snapshots[j] = acc
        exhausted += int((~active).sum())
        util_parts.append(snapshots)

    util = np.concatenate(util_parts, axis=1)
    n = util.shape[1]
    report = UtilityGrowthReport(
        horizons=horizons,
        mc_utility=[float(u.mean()) for u in util],
        mc_stderr=[float(u.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan for u in util],
        closed_form=[illposed_closed_form(mp, ap, h) for h in horizons],
        exponent=illposed_exponent(mp, ap),
        exhausted_paths=exhausted,
        npaths=n,
        min_theta_increase=max_dtheta,
    )
    if exhausted:
        logger.warning("%d of %d paths sold out their endowment", exhausted, n)
    return report

"""Market parameters, auxiliary parameters and regime classification."""

import json
import logging
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from endow.errors import DegenerateMerton, InvalidParams
from endow.solver.ode import (
    CoefficientSet,
    Termination,
    ToleranceOptions,
    b3_upper,
    find_b3_crit,
    illposed_threshold,
    integrate_n,
)

logger = logging.getLogger(__name__)

MARKET_KEYS = ("r", "beta", "mu", "sigma", "alpha", "eta", "rho", "R", "x0", "y0", "theta0")
AUX_KEYS = ("b1", "b2", "b3", "b4", "R", "x0", "y0", "theta0")


class MarketParams(BaseModel):
    """Raw model constants and the initial state."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    r: float
    beta: float
    mu: float
    sigma: float = Field(gt=0)
    alpha: float
    eta: float = Field(gt=0)
    rho: float = Field(gt=-1, lt=1)
    R: float = Field(gt=0)
    x0: float = Field(ge=0)
    y0: float = Field(gt=0)
    theta0: float = Field(ge=0)

    @model_validator(mode="after")
    def _check_state(self) -> "MarketParams":
        if self.R == 1:
            raise ValueError("R = 1 (logarithmic utility) is not supported")
        if self.x0 + self.y0 * self.theta0 <= 0:
            raise ValueError("initial total wealth x0 + y0*theta0 must be positive")
        return self

    @property
    def wealth(self) -> float:
        return self.x0 + self.y0 * self.theta0


class AuxParams(BaseModel):
    """Derived parameters; the optimisation depends on the market only through these."""

    model_config = ConfigDict(frozen=True)

    b1: float
    b2: float
    b3: float
    b4: float
    lam: float  # hedge Sharpe ratio
    zeta: float  # endowed Sharpe ratio

    @property
    def wellposed(self) -> bool:
        return self.b1 > 0

    def kappa(self, R: float) -> float:
        """g(0) = (b1/(b4 R))^(-R)."""
        return float((self.b1 / (self.b4 * R)) ** (-R))


class Regime(str, Enum):
    """The four parameter regimes."""

    SELL_ALL = "SellAll"
    FINITE_RATIO = "FiniteRatio"
    NO_FINITE_RATIO = "NoFiniteRatio"
    ILL_POSED = "IllPosed"

    @property
    def number(self) -> int:
        return list(Regime).index(self) + 1


@dataclass(frozen=True)
class RegimeReport:
    """Regime tag with the threshold and crossing point that support it."""

    regime: Regime
    b3_crit: float | None = None
    qstar: float | None = None
    notes: str = ""

    @property
    def zstar(self) -> float:
        if self.qstar is None:
            return math.nan
        if self.qstar >= 1.0:
            return math.inf
        return self.qstar / (1.0 - self.qstar)

    def to_dict(self) -> dict[str, Any]:
        return {
            "regime": self.regime.value,
            "b3_crit": self.b3_crit,
            "qstar": self.qstar,
            "zstar": self.zstar,
            "notes": self.notes,
        }


def _check_market(mp: MarketParams) -> None:
    if not mp.sigma > 0:
        raise InvalidParams(f"sigma must be positive, got {mp.sigma}")
    if not mp.eta > 0:
        raise InvalidParams(f"eta must be positive, got {mp.eta}")
    if not abs(mp.rho) < 1:
        raise InvalidParams(f"|rho| must be below 1, got {mp.rho}")
    if not mp.R > 0 or mp.R == 1:
        raise InvalidParams(f"R must be positive and different from 1, got {mp.R}")


def derive_aux_params(mp: MarketParams) -> AuxParams:
    """Compute b1..b4, lambda and zeta from the market constants."""
    _check_market(mp)
    R, eta, rho = mp.R, mp.eta, mp.rho
    lam = (mp.mu - mp.r) / mp.sigma
    zeta = (mp.alpha - mp.r) / eta
    one_m_rho2 = 1.0 - rho * rho

    b1 = 2.0 / (eta**2 * one_m_rho2) * (
        mp.beta - mp.r * (1.0 - R) - lam**2 * (1.0 - R) / (2.0 * R)
    )
    b2 = (lam**2 - 2.0 * R * eta * rho * lam + eta**2 * R**2) / (eta**2 * R**2 * one_m_rho2)
    b3 = 2.0 * (zeta - lam * rho) / (eta * one_m_rho2)
    b4 = 2.0 / (eta**2 * one_m_rho2)
    return AuxParams(b1=b1, b2=b2, b3=b3, b4=b4, lam=lam, zeta=zeta)


def b2_identity(lam: float, eta: float, rho: float, R: float) -> float:
    """b2 through the sum-of-squares form 1 + (lambda/(eta R) - rho)^2/(1 - rho^2)."""
    return 1.0 + (lam / (eta * R) - rho) ** 2 / (1.0 - rho * rho)


def validate_wellposed(ap: AuxParams, R: float | None = None) -> None:
    if not ap.b1 > 0:
        raise DegenerateMerton(
            f"b1 = {ap.b1:.6g} <= 0: the frictionless value is "
            f"{'infinite' if (R is None or R < 1) else 'identically -inf'}"
        )


def merton_fraction(ap: AuxParams, R: float) -> float:
    return ap.b3 / (2.0 * R)


def classify_regime(
    ap: AuxParams,
    R: float,
    *,
    tol: float | None = None,
    opts: ToleranceOptions | None = None,
    crit_lookup: Callable[[float, float, float, float], float] | None = None,
    with_qstar: bool = True,
) -> RegimeReport:
    """Tag the parameter set with one of the four regimes.

    `crit_lookup(b1, b2, R, tol)` replaces the bisection (the CLI injects a cached
    version). With `with_qstar` the crossing point is integrated for FiniteRatio.
    """
    validate_wellposed(ap, R)
    opts = opts or ToleranceOptions.from_settings()
    tol = tol if tol is not None else opts.b3crit_tol
    lookup = crit_lookup or (lambda b1, b2, r, t: find_b3_crit(b1, b2, r, t, opts=opts))

    if ap.b3 <= 0:
        return RegimeReport(Regime.SELL_ALL, qstar=0.0, notes="b3 <= 0: sell everything at t=0")

    threshold = illposed_threshold(ap.b1, ap.b2, R)
    if R < 1 and ap.b3 >= threshold:
        return RegimeReport(
            Regime.ILL_POSED,
            qstar=1.0,
            notes=f"b3 >= b1/(1-R) + b2 R = {threshold:.6g}: value function is infinite",
        )

    b3_crit: float | None = None
    if ap.b3 <= R:
        regime = Regime.FINITE_RATIO
        notes = "b3 <= R < b3_crit"
    else:
        b3_crit = lookup(ap.b1, ap.b2, R, tol)
        regime = Regime.FINITE_RATIO if ap.b3 < b3_crit else Regime.NO_FINITE_RATIO
        notes = f"b3_crit in (R, {b3_upper(ap.b1, R):.6g}]"

    qstar: float | None = 1.0 if regime is Regime.NO_FINITE_RATIO else None
    if regime is Regime.FINITE_RATIO and with_qstar:
        sol = integrate_n(CoefficientSet(ap.b1, ap.b2, ap.b3, R), opts)
        if sol.terminated_by is not Termination.CROSSED_M:
            # b3 sits within tol of b3_crit
            logger.warning("b3=%.6g classified FiniteRatio but n did not cross m", ap.b3)
        qstar = sol.qstar

    logger.info("regime %s (b1=%.6g, b2=%.6g, b3=%.6g, R=%.6g)", regime.value, ap.b1, ap.b2,
                ap.b3, R)
    return RegimeReport(regime, b3_crit=b3_crit, qstar=qstar, notes=notes)


def realize_market(
    b1: float,
    b2: float,
    b3: float,
    R: float,
    b4: float | None = None,
    x0: float = 1.0,
    y0: float = 1.0,
    theta0: float = 1.0,
) -> MarketParams:
    """A market (rho=0, r=0, sigma=1) whose derived parameters are (b1, b2, b3, b4)."""
    b4 = b1 / R if b4 is None else b4
    if not b4 > 0:
        raise InvalidParams(f"b4 must be positive, got {b4}")
    if b2 < 1:
        raise InvalidParams(f"b2 must be at least 1, got {b2}")
    eta = math.sqrt(2.0 / b4)
    lam = eta * R * math.sqrt(b2 - 1.0)
    zeta = b3 * eta / 2.0
    beta = b1 / b4 + lam**2 * (1.0 - R) / (2.0 * R)
    try:
        return MarketParams(
            r=0.0, beta=beta, mu=lam, sigma=1.0, alpha=zeta * eta, eta=eta, rho=0.0, R=R,
            x0=x0, y0=y0, theta0=theta0,
        )
    except ValidationError as e:
        raise InvalidParams(str(e)) from e


def aux_from_b(b1: float, b2: float, b3: float, R: float, b4: float | None = None) -> AuxParams:
    """AuxParams with the b's exactly as given (lambda, zeta from the realised market)."""
    mp = realize_market(b1, b2, b3, R, b4)
    return AuxParams(
        b1=b1, b2=b2, b3=b3, b4=b1 / R if b4 is None else b4,
        lam=(mp.mu - mp.r) / mp.sigma, zeta=(mp.alpha - mp.r) / mp.eta,
    )


def parse_pairs(pairs: Iterable[str]) -> dict[str, float]:
    """Parse `key=value` tokens into floats."""
    out: dict[str, float] = {}
    for token in pairs:
        key, sep, value = token.partition("=")
        if not sep or not key:
            raise InvalidParams(f"expected key=value, got {token!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError as e:
            raise InvalidParams(f"not a number for {key}: {value!r}") from e
    return out


def market_from_mapping(data: dict[str, Any]) -> MarketParams:
    try:
        return MarketParams.model_validate(data)
    except ValidationError as e:
        raise InvalidParams(str(e)) from e


def load_market_params(path: Path, overrides: dict[str, float] | None = None) -> MarketParams:
    """Load a JSON parameter file with exactly the MarketParams keys."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidParams(f"cannot read parameter file {path}: {e}") from e
    if not isinstance(data, dict):
        raise InvalidParams(f"{path}: expected a JSON object")
    if overrides:
        unknown = set(overrides) - set(MARKET_KEYS)
        if unknown:
            raise InvalidParams(f"unknown override keys: {sorted(unknown)}")
        data = {**data, **overrides}
    return market_from_mapping(data)


def aux_mode_params(values: dict[str, float]) -> tuple[MarketParams, AuxParams]:
    """Resolve `--aux` input (b1, b2, b3, R, optional b4, x0, y0, theta0)."""
    unknown = set(values) - set(AUX_KEYS)
    if unknown:
        raise InvalidParams(f"unknown aux keys: {sorted(unknown)}")
    missing = {"b1", "b2", "b3", "R"} - set(values)
    if missing:
        raise InvalidParams(f"missing aux keys: {sorted(missing)}")
    R = values["R"]
    if not R > 0 or R == 1:
        raise InvalidParams(f"R must be positive and different from 1, got {R}")
    if not values["b1"] > 0:
        raise DegenerateMerton(f"b1 = {values['b1']:.6g} <= 0: no finite frictionless value")
    b4 = values.get("b4")
    mp = realize_market(
        values["b1"], values["b2"], values["b3"], R, b4,
        x0=values.get("x0", 1.0), y0=values.get("y0", 1.0), theta0=values.get("theta0", 1.0),
    )
    ap = aux_from_b(values["b1"], values["b2"], values["b3"], R, b4)
    return mp, ap


def presets_path() -> Path:
    return Path(__file__).parent.parent / "datasets" / "presets.yaml"


def load_presets() -> list[dict[str, Any]]:
    with open(presets_path()) as f:
        return list(yaml.safe_load(f) or [])


def load_preset(name: str) -> tuple[MarketParams, AuxParams]:
    """Load a named parameter set from the packaged presets."""
    for preset in load_presets():
        if preset.get("name") != name:
            continue
        if "market" in preset:
            mp = market_from_mapping(preset["market"])
            return mp, derive_aux_params(mp)
        if "aux" in preset:
            return aux_mode_params({k: float(v) for k, v in preset["aux"].items()})
        raise InvalidParams(f"preset {name!r} has neither a market nor an aux block")
    raise InvalidParams(f"preset {name!r} not found in {presets_path().name}")

"""Market and auxiliary parameter models."""

from endow.model.params import (
    AuxParams,
    MarketParams,
    Regime,
    RegimeReport,
    aux_from_b,
    aux_mode_params,
    classify_regime,
    derive_aux_params,
    load_market_params,
    load_preset,
    realize_market,
    validate_wellposed,
)

__all__ = [
    "AuxParams",
    "MarketParams",
    "Regime",
    "RegimeReport",
    "aux_from_b",
    "aux_mode_params",
    "classify_regime",
    "derive_aux_params",
    "load_market_params",
    "load_preset",
    "realize_market",
    "validate_wellposed",
]

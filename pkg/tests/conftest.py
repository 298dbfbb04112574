"""Shared fixtures: one policy per regime, built once per session."""

import pytest

from endow.config import settings
from endow.model.params import aux_mode_params
from endow.solver.ode import b3_upper
from endow.solver.policy import Policy, build_policy


def upper_bound_lookup(b1: float, b2: float, R: float, tol: float) -> float:
    """Stand-in for the bisection: b3_crit never exceeds this bound."""
    return b3_upper(b1, R)


def make_policy(**aux: float) -> tuple[Policy, object]:
    mp, ap = aux_mode_params(aux)
    return build_policy(mp, ap, crit_lookup=upper_bound_lookup), mp


@pytest.fixture(autouse=True)
def _isolated_settings(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "cache_enabled", False)
    monkeypatch.setattr(settings, "output_dir", str(tmp_path / "outputs"))
    monkeypatch.setattr(settings, "cache_dir", str(tmp_path / "cache"))
    monkeypatch.setattr(settings, "threads", 1)


@pytest.fixture(scope="session")
def sell_all():
    return make_policy(b1=1.0, b2=1.0, b3=-0.2, R=0.5)


@pytest.fixture(scope="session")
def finite():
    return make_policy(b1=1.0, b2=1.0, b3=0.4, R=0.5)


@pytest.fixture(scope="session")
def finite_hedged():
    return make_policy(b1=1.0, b2=1.5, b3=0.4, R=0.5)


@pytest.fixture(scope="session")
def finite_averse():
    return make_policy(b1=1.0, b2=1.5, b3=1.5, R=2.0)


@pytest.fixture(scope="session")
def no_finite():
    return make_policy(b1=1.0, b2=1.3, b3=1.5, R=0.5)

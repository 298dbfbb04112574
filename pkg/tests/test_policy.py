"""Tests for the value-shape function, the value and the feedback controls."""

import math

import numpy as np
import pytest

from endow.errors import IllPosedValue, InvalidParams, RegimeMismatch
from endow.model.params import Regime, aux_mode_params
from endow.solver.policy import (
    build_policy,
    certainty_equivalent,
    feedback_consumption,
    feedback_portfolio,
    post_sale_state,
    value,
)
from endow.solver.verify import smooth_fit_gaps

from .conftest import make_policy, upper_bound_lookup


# -- selling everything ---------------------------------------------------------

def test_sell_all_closed_form(sell_all):
    pol, _ = sell_all
    assert pol.regime is Regime.SELL_ALL
    assert pol.kappa == pytest.approx(1.0)
    assert value(pol, 1.0, 1.0, 2.0) == pytest.approx(3.0**0.5 / 0.5, rel=1e-12)
    assert certainty_equivalent(pol, 1.0, 2.0, 3.0) == 6.0
    assert post_sale_state(pol, 1.0, 2.0, 3.0) == (7.0, 0.0)


@pytest.mark.parametrize("b4,R", [(4.0, 0.5), (0.7, 0.3), (2.5, 3.0)])
def test_sell_all_value_uses_kappa(b4, R):
    pol, _ = make_policy(b1=1.0, b2=1.0, b3=-0.5, b4=b4, R=R)
    kappa = (1.0 / (b4 * R)) ** (-R)
    assert pol.kappa == pytest.approx(kappa, rel=1e-14)
    rng = np.random.default_rng(3)
    for x, y, theta in rng.uniform(0.1, 5.0, size=(20, 3)):
        expected = kappa * (x + y * theta) ** (1 - R) / (1 - R)
        assert value(pol, x, y, theta) == pytest.approx(expected, rel=1e-12)
    z = np.linspace(0.0, 4.0, 9)
    assert np.allclose(pol.g(z), kappa * (1 + z) ** (1 - R), rtol=1e-14)


def test_sell_all_controls_are_merton():
    pol, mp = make_policy(b1=1.0, b2=2.0, b3=-0.2, R=0.5)
    wealth = 1.0 + 2.0 * 3.0
    assert feedback_consumption(pol, 1.0, 2.0, 3.0) == pytest.approx(
        wealth * pol.merton_consumption)
    assert feedback_portfolio(pol, 1.0, 2.0, 3.0) == pytest.approx(
        wealth * pol.aux.lam / (pol.R * mp.sigma))


# -- finite ratio -----------------------------------------------------------------

@pytest.mark.parametrize("name", ["finite", "finite_hedged", "finite_averse"])
def test_boundary_identities(name, request):
    pol, _ = request.getfixturevalue(name)
    assert pol.regime is Regime.FINITE_RATIO
    R, b3 = pol.R, pol.aux.b3
    assert b3 / (2 * R) < pol.qstar < 1
    assert pol.zstar == pytest.approx(pol.qstar / (1 - pol.qstar), rel=1e-12)
    tt = pol.tables
    assert pol.n_star ** (-R) == pytest.approx(tt.hstar * (1 - pol.qstar) ** (1 - R), rel=1e-10)


@pytest.mark.parametrize("name", ["finite", "finite_hedged", "finite_averse"])
def test_smooth_fit_at_boundary(name, request):
    pol, _ = request.getfixturevalue(name)
    gaps = smooth_fit_gaps(pol)
    assert gaps["g"] < 1e-10
    assert gaps["gp"] < 1e-10
    assert gaps["gpp"] < 1e-6
    assert gaps["c_over_x"] < 1e-10


def test_origin_values(finite_hedged):
    pol, _ = finite_hedged
    assert pol.g(0.0)[0] == pytest.approx(pol.kappa, rel=1e-14)
    assert pol.c_over_x(0.0)[0] == pytest.approx(pol.merton_consumption, rel=1e-12)
    assert pol.pi_hat(0.0)[0] == pytest.approx(pol.aux.lam / pol.R, rel=1e-10)
    assert value(pol, 1.0, 1.0, 0.0) == pytest.approx(pol.kappa / (1 - pol.R))
    assert certainty_equivalent(pol, 1.0, 1.0, 0.0) == 0.0


def test_g_is_increasing_and_continuous(finite):
    pol, _ = finite
    z = np.linspace(0.0, 2.0 * pol.zstar, 201)
    g = pol.g(z)
    assert np.all(np.diff(g) > 0)
    eps = 1e-9 * pol.zstar
    left, right = pol.g([pol.zstar - eps, pol.zstar + eps])
    assert left == pytest.approx(right, rel=1e-7)


def test_q_and_z_coordinates_invert(finite_hedged):
    pol, _ = finite_hedged
    q = np.linspace(0.01, pol.qstar, 25)
    assert np.allclose(pol.q_of_z(pol.z_of_q(q)), q, rtol=1e-8)
    assert pol.z_of_q(pol.qstar)[0] == pytest.approx(pol.zstar, rel=1e-8)


def test_lump_sale_lands_on_boundary(finite_hedged):
    pol, _ = finite_hedged
    y, theta = 1.0, 10.0 * pol.zstar
    x_new, theta_new = post_sale_state(pol, 1.0, y, theta)
    assert theta_new < theta
    assert x_new + y * theta_new == pytest.approx(1.0 + y * theta, rel=1e-14)
    assert y * theta_new / x_new == pytest.approx(pol.zstar, rel=1e-12)
    # inside the no-sale region nothing moves
    assert post_sale_state(pol, 1.0, 1.0, 0.5 * pol.zstar) == (1.0, 0.5 * pol.zstar)


def test_value_without_cash_matches_limit(finite):
    pol, _ = finite
    at_zero = value(pol, 0.0, 1.0, 2.0)
    assert value(pol, 1e-12, 1.0, 2.0) == pytest.approx(at_zero, rel=1e-9)
    # selling everything is always available, so p is at least the market value
    assert 2.0 - 1e-9 <= certainty_equivalent(pol, 0.0, 1.0, 2.0) < math.inf


def test_certainty_equivalent_at_least_market_value(finite_hedged):
    pol, _ = finite_hedged
    for theta in (0.1, 0.5, 1.0, 5.0):
        p = certainty_equivalent(pol, 1.0, 1.0, theta)
        assert theta - 1e-12 <= p < math.inf


# -- scaling and the lump sale -----------------------------------------------------------

@pytest.mark.parametrize("name", ["sell_all", "finite", "finite_averse", "no_finite"])
@pytest.mark.parametrize("k", [0.3, 2.0, 7.0])
def test_value_is_homogeneous_in_cash_and_shares(name, k, request):
    pol, _ = request.getfixturevalue(name)
    R = pol.R
    for x, y, theta in [(1.0, 1.0, 0.5), (0.7, 2.0, 3.0), (2.0, 0.5, 40.0), (0.0, 1.5, 2.0)]:
        v = value(pol, x, y, theta)
        assert value(pol, k * x, y, k * theta) == pytest.approx(k ** (1 - R) * v, rel=1e-10)
        p = certainty_equivalent(pol, x, y, theta)
        assert certainty_equivalent(pol, k * x, y, k * theta) == pytest.approx(k * p, rel=1e-10)


@pytest.mark.parametrize("x", [1.0, 0.0])
def test_value_unchanged_by_lump_sale(finite_hedged, x):
    pol, _ = finite_hedged
    y, theta = 1.0, 10.0 * pol.zstar
    x_new, theta_new = post_sale_state(pol, x, y, theta)
    assert theta_new < theta
    assert value(pol, x_new, y, theta_new) == pytest.approx(value(pol, x, y, theta), rel=1e-8)


@pytest.mark.parametrize("name", ["finite_hedged", "finite_averse", "no_finite"])
@pytest.mark.parametrize("theta", [0.5, 1.0, 5.0])
def test_certainty_equivalent_exceeds_market_value(name, theta, request):
    pol, _ = request.getfixturevalue(name)
    assert pol.aux.b3 > 0
    assert certainty_equivalent(pol, 1.0, 1.0, theta) > theta + 1e-9


def test_drop_upsilon_is_exact_for_unit_b2(finite):
    pol, mp = finite
    other = build_policy(mp, pol.aux, crit_lookup=upper_bound_lookup, drop_upsilon=True)
    z = np.linspace(0.0, 1.5 * pol.zstar, 31)
    assert other.zstar == pytest.approx(pol.zstar, rel=1e-8)
    assert np.allclose(other.g(z), pol.g(z), rtol=1e-8)


def test_export_rows(finite):
    pol, _ = finite
    rows = pol.export_rows([0.0, pol.zstar, 2 * pol.zstar])
    assert list(rows[0]) == ["z", "g", "gp", "gpp", "C_over_x", "Pi_over_x", "p_over_x"]
    assert rows[0]["p_over_x"] == 0.0


def test_ratio_table_spans_no_sale_region(finite_hedged):
    pol, _ = finite_hedged
    table = pol.ratio_table(401)
    assert table.coord[0] == 0.0
    assert table.coord[-1] == pol.zstar
    assert np.all(np.diff(table.coord) >= 0)
    with pytest.raises(RegimeMismatch):
        pol.inverse_ratio_table()


def test_rejects_negative_ratio(finite):
    pol, _ = finite
    with pytest.raises(InvalidParams):
        pol.g(-1.0)
    with pytest.raises(InvalidParams):
        value(pol, -1.0, 1.0, 1.0)


# -- no finite ratio ---------------------------------------------------------------

def test_no_finite_ratio_policy(no_finite):
    pol, _ = no_finite
    assert pol.regime is Regime.NO_FINITE_RATIO
    assert math.isinf(pol.zstar)
    assert pol.qstar == 1.0
    assert math.isfinite(pol.pi0)
    assert 0 < pol.n_star
    expected = pol.kappa * pol.n_star ** (-pol.R) / (1 - pol.R)
    assert value(pol, 0.0, 1.0, 1.0) == pytest.approx(expected, rel=1e-12)
    # nothing is ever sold
    assert post_sale_state(pol, 1.0, 1.0, 1e6) == (1.0, 1e6)


def test_no_finite_ratio_branches_join(no_finite):
    pol, _ = no_finite
    zt = pol.z_top
    left, right = pol.g([zt * (1 - 1e-6), zt * (1 + 1e-6)])
    assert left == pytest.approx(right, rel=1e-4)
    z = np.geomspace(1e-3, 1e3, 40)
    assert np.all(np.diff(pol.g(z)) > 0)


def test_inverse_ratio_table(no_finite):
    pol, _ = no_finite
    table = pol.inverse_ratio_table(401)
    assert table.coord[0] == 0.0
    assert table.pi[0] == pol.pi0
    assert np.all(np.diff(table.coord) >= 0)
    big = np.array([2.0 * table.coord[-1]])
    c, _ = table.at(big)
    assert c[0] == pytest.approx(big[0] * pol.merton_consumption)


# -- ill-posed -----------------------------------------------------------------------

def test_illposed_has_no_policy():
    mp, ap = aux_mode_params({"b1": 1.0, "b2": 1.0, "b3": 2.6, "R": 0.5})
    with pytest.raises(IllPosedValue):
        build_policy(mp, ap, crit_lookup=upper_bound_lookup)

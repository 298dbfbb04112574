"""Tests for the HJB residual and shape verifiers."""

import numpy as np
import pytest

from endow.errors import RegimeMismatch
from endow.solver.verify import (
    closed_branch_residual,
    default_zgrid,
    hjb_residual,
    hjb_terms,
    inverse_ratio_sale_gap,
    smooth_fit_gaps,
    verify_hjb,
    verify_shape,
)

from .conftest import make_policy


@pytest.mark.parametrize("name", ["sell_all", "finite", "finite_hedged", "finite_averse",
                                  "no_finite"])
def test_policies_pass_hjb(name, request):
    pol, _ = request.getfixturevalue(name)
    report = verify_hjb(pol)
    assert report.success, report.error
    assert report.max_rel_hjb <= 1e-6
    assert report.min_rel_M >= -1e-9


@pytest.mark.parametrize("name", ["finite", "finite_hedged", "finite_averse", "no_finite"])
def test_policies_pass_shape(name, request):
    pol, _ = request.getfixturevalue(name)
    report = verify_shape(pol)
    assert report.success, report.error
    assert report.max_hessian <= 1e-9


def test_sell_all_residual_matches_closed_form():
    pol, mp = make_policy(b1=1.0, b2=1.4, b3=-0.3, R=0.5)
    z = np.linspace(0.0, 5.0, 21)
    res, scale = hjb_residual(*pol.shape(z), mp)
    s = z / (1 + z)
    ap, R = pol.aux, pol.R
    expected = pol.kappa * (1 + z) ** (1 - R) * (ap.b3 * s - R * s**2) / ap.b4
    assert np.allclose(res, expected, atol=1e-10 * scale.max())
    assert np.all(res <= 1e-12)
    assert res[0] == pytest.approx(0.0, abs=1e-12)


def test_closed_branch_residual_vanishes_at_boundary(finite_hedged):
    pol, _ = finite_hedged
    assert closed_branch_residual(pol, pol.zstar)[0] == pytest.approx(0.0, abs=1e-12)
    beyond = closed_branch_residual(pol, pol.zstar * np.array([1.5, 3.0, 10.0]))
    assert np.all(beyond < 0)


def test_default_grid_reaches_sale_region(finite):
    pol, _ = finite
    z = default_zgrid(pol)
    assert z[0] == 0.0
    assert z.max() > pol.zstar
    assert pol.zstar in z


def test_smooth_fit_only_for_finite_ratio(sell_all, no_finite, finite):
    assert smooth_fit_gaps(sell_all[0]) == {}
    assert smooth_fit_gaps(no_finite[0]) == {}
    assert smooth_fit_gaps(finite[0])["fd_gp"] < 1e-4


def test_report_serialises(finite):
    pol, _ = finite
    report = verify_hjb(pol, [0.0, 0.5 * pol.zstar, 2 * pol.zstar])
    data = report.to_dict()
    assert data["success"] is True
    assert len(data["details"]["zgrid"]) == 3
    assert report.to_text().startswith("FiniteRatio")


@pytest.mark.parametrize("name", ["finite", "finite_averse", "no_finite"])
def test_residual_is_relative_to_discount_term(name, request):
    pol, mp = request.getfixturevalue(name)
    z = default_zgrid(pol)
    g, G1, G2 = pol.shape(z)
    res, scale = hjb_residual(g, G1, G2, mp)
    assert np.allclose(scale, np.abs(mp.beta * g / (1 - pol.R)), rtol=1e-14)
    assert np.allclose(res, hjb_terms(g, G1, G2, mp).sum(axis=0), rtol=1e-14)
    report = verify_hjb(pol, z)
    inside = z <= pol.z_top
    assert report.max_rel_hjb == pytest.approx(float((np.abs(res) / scale)[inside].max()))
    # the discount term never exceeds the largest term
    rel_terms = np.array(report.details["rel_residual_terms"])
    assert np.all(rel_terms <= np.array(report.details["rel_residual"]) * (1 + 1e-12))


def test_sale_condition_holds_at_x_zero(no_finite):
    pol, _ = no_finite
    gap = inverse_ratio_sale_gap(pol)
    assert abs(gap) <= 1e-6
    assert verify_hjb(pol).x_zero_M == gap
    g, G1, _ = pol.shape(pol.z_top)
    direct = (1 + pol.z_top) * G1[0] / ((1 - pol.R) * g[0]) - pol.z_top
    assert direct == pytest.approx(gap, abs=1e-5)
    # M G vanishes identically on the closed-form branch
    z = pol.z_top * np.array([2.0, 1e3])
    g, G1, _ = pol.shape(z)
    assert np.allclose((1 + z) * G1 / ((1 - pol.R) * g), z, rtol=1e-12)


def test_x_zero_sale_gap_fails_report(no_finite, monkeypatch):
    import endow.solver.verify as verify_mod

    pol, _ = no_finite
    monkeypatch.setattr(verify_mod, "inverse_ratio_sale_gap", lambda p: 1e-3)
    report = verify_hjb(pol)
    assert not report.success
    assert "at x = 0" in report.error


def test_x_zero_sale_gap_needs_no_finite_ratio(finite):
    with pytest.raises(RegimeMismatch):
        inverse_ratio_sale_gap(finite[0])
    assert verify_hjb(finite[0]).x_zero_M == 0.0

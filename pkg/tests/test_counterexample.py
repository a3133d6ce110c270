import cmath
import math

import numpy as np
from pytest import approx, mark, raises

from ktrates.errors import DomainError, SearchFailure, UsageError
from ktrates.lab.counterexample import (
    AlphaGeometry,
    ThetaGrid,
    c_transform,
    choose_params,
    constant_element,
    d_closed_form,
    d_transform,
    direct_transform,
    k_alpha,
    k_alpha_array,
    l_transform,
    limsup_witness,
    negative_binomial_profile,
    params_for_ell,
    region_membership,
    roots_of_unity_closed,
    roots_of_unity_sum,
    simple_sequence,
    theta_grid_spec,
    unit_element,
    verify_construction,
    x_alpha_norm,
)
from ktrates.lab.numerics_utils import wrap_phase

GEOM = AlphaGeometry(3.0)


def same(a, b, tol=1e-8):
    return abs(a.log_mag - b.log_mag) <= tol and abs(wrap_phase(a.phase - b.phase)) <= tol


def test_geometry():
    with raises(UsageError):
        AlphaGeometry(2.0)
    assert GEOM.beta_range == (3.0 / 32.0, 3.0 / 16.0)
    assert k_alpha(GEOM, -1.0) == approx(0.5)
    assert k_alpha(GEOM, 1.0) == 0.0
    with raises(DomainError):
        k_alpha(GEOM, 0)


@mark.parametrize("lam region".split(), (
    (0, "Omega"),
    (0.5, "Omega"),
    (1.0, "Omega"),
    (1.5, "Theta"),
    (-0.9, "Theta"),
    (-0.4, "Omega"),
    (1.9j, "Theta"),
    (3.0, "outside"),
))
def test_region_membership(lam, region):
    assert region_membership(GEOM, lam) == region


def disc_points():
    radii = np.linspace(0.05, 1.99, 40)
    phis = np.linspace(-math.pi, math.pi, 73)
    return (radii[:, None] * np.exp(1j * phis[None, :])).ravel()


def test_regions_partition_the_disc_of_radius_two():
    lams = disc_points()
    boundary = 1.0 - k_alpha_array(GEOM, lams)
    for lam, rho in zip(lams, boundary):
        region = region_membership(GEOM, lam)
        assert region in ("Omega", "Theta")
        assert (region == "Omega") == (abs(lam) <= rho)
    assert {region_membership(GEOM, lam) for lam in ThetaGrid().points(GEOM)} == {"Theta"}


def test_k_alpha_and_regions_are_conjugation_invariant():
    for lam in disc_points():
        assert k_alpha(GEOM, lam.conjugate()) == approx(k_alpha(GEOM, lam), rel=1e-12, abs=1e-15)
        assert region_membership(GEOM, lam.conjugate()) == region_membership(GEOM, lam)


def test_choose_params_finds_admissible_set():
    params = choose_params(GEOM, 10)
    assert params.admissible
    assert params.theta ** -1.0 > 2 * 3.0 / params.beta + 1
    assert params.ell > 40000
    assert params.n1 == 2 * params.ell - 4
    assert params.B_ell == approx(2 * params.ell * math.log2(params.ell))
    assert abs(params.lambda0) == approx(0.5)
    assert params.rounding_error <= 1e-3


def test_choose_params_failures():
    with raises(UsageError):
        choose_params(GEOM, 0)
    with raises(SearchFailure) as e:
        choose_params(GEOM, 10, theta_floor=0.1)
    assert e.value.diagnostics["failures"]["theta_power"] > 0


def test_params_for_ell_desk_scale():
    params = params_for_ell(GEOM, 50)
    assert params.ell == 50
    assert params.ell_exact == approx(50.0, rel=1e-8)
    assert 0.1 < params.theta < 0.25
    assert params.n0 == 95 and params.n1 == 96
    assert not params.admissible
    with raises(UsageError):
        params_for_ell(GEOM, 2)


@mark.parametrize("ell", (10, 20, 30))
def test_reduced_sums_match_the_dirac_sum(ell):
    params = params_for_ell(GEOM, ell)
    assert same(d_transform(params, params.n1), direct_transform(params, "D", params.n1))
    assert same(c_transform(params, 1.5), direct_transform(params, "C", 1.5))
    for k in (ell - 1, 2 * ell - 1, 3 * ell):
        assert same(l_transform(params, k), direct_transform(params, "L", k))


@mark.parametrize("ell", (6, 10, 20))
def test_d_is_a_difference_of_moments(ell):
    params = params_for_ell(GEOM, ell)
    for n in (ell - 3, ell, 2 * ell - 4, 3 * ell, 5 * ell + 1):
        expected = l_transform(params, n + 1).to_complex() - l_transform(params, n + 2).to_complex()
        assert d_transform(params, n).to_complex() == approx(expected, rel=1e-8)


@mark.parametrize("ell", (10, 50, 400))
def test_d_closed_form(ell):
    params = params_for_ell(GEOM, ell)
    assert d_transform(params, params.n1).log_mag == approx(d_closed_form(params), abs=1e-9, rel=1e-10)


def test_transform_edge_cases():
    params = params_for_ell(GEOM, 10)
    with raises(DomainError):
        c_transform(params, 0.5)
    with raises(UsageError):
        l_transform(params, 0)
    with raises(UsageError):
        d_transform(params, -1)
    with raises(UsageError):
        direct_transform(params, "Q", 1)
    assert l_transform(params, 3).is_zero
    assert d_transform(params, 2).is_zero


@mark.parametrize("lam", (1.5, -1.2, 0.5 + 1j, 0.3j))
def test_roots_of_unity_identity(lam):
    for ell in (3, 7, 16):
        for j in range(1, ell + 1):
            assert roots_of_unity_sum(ell, j, lam) == approx(roots_of_unity_closed(ell, j, lam), rel=1e-10)


@mark.parametrize("ell", (5, 20, 60))
def test_negative_binomial_profile(ell):
    profile = negative_binomial_profile(ell, 30 * ell)
    assert np.all(np.isneginf(profile[: ell - 1]))
    assert int(np.argmax(profile)) + 1 in (2 * ell - 2, 2 * ell - 1)
    assert np.sum(np.exp(profile)) == approx(1.0, rel=1e-9)


def test_simple_sequence():
    ell = 10
    params = params_for_ell(GEOM, ell)
    ks = np.arange(1, 401)
    entries = [simple_sequence(params, int(k))[0] for k in ks]
    mags = np.array([e.log_mag for e in entries])
    assert all(e.is_zero for e in entries[: ell - 2])
    assert int(ks[np.argmax(mags)]) in (2 * ell - 3, 2 * ell - 2)

    lam = 1.5
    partial = sum(e.to_complex() * lam ** -int(k) for e, k in zip(entries, ks))
    _, closed = simple_sequence(params, 1)
    assert partial == approx(closed(lam).to_complex(), rel=1e-10)
    with raises(UsageError):
        simple_sequence(params, 0)


def test_x_alpha_norm_of_basic_elements():
    grid = ThetaGrid()
    assert grid.points(GEOM).size > 0
    sup_norm, alpha_norm, total = x_alpha_norm(unit_element(), GEOM, grid)
    assert sup_norm == 1.0
    assert 0.99 <= alpha_norm <= 1.0
    assert total == approx(sup_norm + alpha_norm)
    sup_norm, alpha_norm, _ = x_alpha_norm(constant_element(), GEOM, grid)
    assert sup_norm == 1.0 and alpha_norm > 0


def test_theta_grid_must_reach_the_collar():
    params = params_for_ell(GEOM, 50)
    spec = theta_grid_spec(params)
    assert spec.min_depth == approx(params.theta ** 3 / 10.0)
    assert spec.refined().radii == 2 * spec.radii
    with raises(UsageError):
        theta_grid_spec(params, min_depth=1.0)
    with raises(UsageError):
        verify_construction(params, ThetaGrid(min_depth=1.0))


def check_lemma(ell):
    params = params_for_ell(GEOM, ell)
    report = verify_construction(params)
    assert 0 < report.C1_hat < math.inf
    assert 0 < report.C2_hat < math.inf
    assert report.C3_hat > 0
    assert report.closed_form_gap <= 1e-8 * max(1.0, abs(report.log_D_n1))
    assert report.k_max == math.ceil(10 * params.B_ell)
    row = report.to_row()
    assert row["admissible"] == 0 and row["ell"] == ell


def test_verify_construction():
    check_lemma(50)


@mark.slow
@mark.parametrize("ell", (100, 200))
def test_verify_construction_larger_ell(ell):
    check_lemma(ell)


def test_limsup_witness_rows():
    frame = limsup_witness(GEOM, [10, 20])
    assert list(frame["safety"]) == [0, 1, 0, 1]
    assert list(frame["ell"]) == [8, 8, 13, 13]
    assert list(frame["n1"]) == [12, 12, 22, 22]
    assert np.all(frame["admissible"] == 0)
    assert np.all(frame["scaled"] > 0)
    plain, doubled = frame.iloc[0], frame.iloc[1]
    assert doubled["x_norm"] == approx(2 * plain["x_norm"])
    assert doubled["scaled"] == approx(plain["scaled"] / 2)
    with raises(UsageError):
        limsup_witness(GEOM, [20, 10])


@mark.slow
def test_limsup_witness_is_stable_under_refinement():
    grid = ThetaGrid(min_depth=1.0, min_angle=1.0)
    frame = limsup_witness(GEOM, [10, 100, 1000], grid)
    refined = limsup_witness(GEOM, [10, 100, 1000], grid.refined())
    base = frame["safety"] == 0
    assert (frame.loc[base, "scaled"] > 0).all()
    drift = np.abs(refined.loc[base, "scaled"].to_numpy() / frame.loc[base, "scaled"].to_numpy() - 1.0)
    assert drift.max() <= 0.1

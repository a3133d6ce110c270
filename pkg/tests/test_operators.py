import math

import numpy as np
from hypothesis import given, settings
from hypothesis.strategies import floats, integers
from pytest import approx, mark, raises

from ktrates.errors import DomainError, ResourceError, UsageError
from ktrates.lab import operators
from ktrates.lab.operators import (
    AnnulusGrid,
    BlockQ,
    DecayCurve,
    ResolventCurve,
    block_q,
    build_registered_operator,
    decay_curve,
    deficiency_norm,
    frac_resolvent_sup,
    matrix_norm,
    moment_constant,
    parse_complex,
    power_bound,
    power_norm,
    q_power_bound,
    q_power_norm,
    resolvent_curve,
    resolvent_norm,
    sample_ns,
    spectral_norm,
    spectrum_description,
    spectrum_distance,
    stolz_angles,
    theta_grid,
    toeplitz_blowup_constant,
    truncation_oracle,
)


@mark.parametrize("name params".split(), (
    ("no_such_operator", {}),
    ("identity", {"alpha": "2"}),
    ("identity", {"space": "l3"}),
    ("stolz_diagonal", {"alpha": "0.5"}),
    ("stolz_diagonal", {"alpha": "two"}),
    ("custom_diagonal", {}),
    ("custom_shift_poly", {"coefficients": "0, 0"}),
))
def test_bad_operator_requests(name, params):
    with raises(UsageError):
        build_registered_operator(name, params)


def test_default_spaces():
    assert build_registered_operator("toeplitz_quarter").space == "l1"
    assert build_registered_operator("ritt_diagonal").space == "l2"
    assert build_registered_operator("stolz_diagonal", {"space": "linf"}).space == "linf"


def test_parse_complex():
    assert parse_complex("1+2i") == 1 + 2j
    assert parse_complex(" -0.5 ") == -0.5
    with raises(UsageError):
        parse_complex("abc")


@given(integers(min_value=0, max_value=200))
def test_identity_is_degenerate(n):
    op = build_registered_operator("identity")
    assert deficiency_norm(op, n) == 0.0
    assert power_norm(op, n) == 1.0


def test_identity_resolvent():
    op = build_registered_operator("identity")
    assert resolvent_norm(op, 2.0) == approx(1.0)
    assert resolvent_norm(op, 1j) == approx(1.0 / math.sqrt(2.0))


@given(integers(min_value=0, max_value=60))
def test_single_point_closed_form(n):
    op = build_registered_operator("single_point", {"lambda0": "0.5"})
    assert deficiency_norm(op, n) == approx(0.5 ** (n + 1), rel=1e-12)
    assert deficiency_norm(op, n, 2.0) == approx(0.5 ** (n + 2), rel=1e-12)


def test_custom_diagonal_takes_the_largest_entry():
    op = build_registered_operator("custom_diagonal", {"eigenvalues": "0.5, -0.5"})
    assert deficiency_norm(op, 3) == approx(0.125 * 1.5)
    assert power_norm(op, 3) == approx(0.125)


def test_resolvent_in_spectrum_raises():
    with raises(DomainError):
        resolvent_norm(build_registered_operator("single_point", {"lambda0": "0.5"}), 0.5)
    with raises(DomainError):
        resolvent_norm(build_registered_operator("toeplitz_quarter"), 0.5)


def test_spectrum_distance_single_point():
    op = build_registered_operator("single_point", {"lambda0": "0.5"})
    assert spectrum_distance(op, 2.0) == approx(1.5)


def test_toeplitz_deficiency_at_zero_and_power_bound():
    op = build_registered_operator("toeplitz_quarter")
    assert deficiency_norm(op, 0) == approx(1.5)
    for n in (1, 7, 100):
        assert power_norm(op, n) == approx(1.0, rel=1e-12)


def test_toeplitz_decay_law():
    op = build_registered_operator("toeplitz_quarter")
    n = 2048
    scaled = deficiency_norm(op, n) * math.sqrt(math.pi * n) / 2.0
    assert 0.95 <= scaled <= 1.05


@mark.slow
def test_toeplitz_decay_law_large_n():
    op = build_registered_operator("toeplitz_quarter")
    n = 16384
    scaled = deficiency_norm(op, n) * math.sqrt(math.pi * n) / 2.0
    assert 0.98 <= scaled <= 1.02


def test_toeplitz_resolvent_on_the_real_axis():
    # every coefficient of 1/(lambda - p(z)) is positive for lambda > 1
    for space in ("l1", "l2"):
        op = build_registered_operator("toeplitz_quarter", {"space": space})
        assert resolvent_norm(op, 1.5) == approx(2.0, rel=1e-9)


def test_toeplitz_blowup_constant_near_one():
    op = build_registered_operator("toeplitz_quarter")
    out = toeplitz_blowup_constant(op, [1e-2, 1e-3])
    assert out["real_axis"] == approx(1.0, rel=0.02)
    assert 0 < out["unit_circle"] < math.inf
    with raises(UsageError):
        toeplitz_blowup_constant(build_registered_operator("custom_shift_poly", {"coefficients": "0, 1"}), [0.1])


def test_pure_shift():
    op = build_registered_operator("custom_shift_poly", {"coefficients": "0, 1, 0, 0"})
    assert op.degree == 1
    assert power_norm(op, 5) == approx(1.0)
    assert deficiency_norm(op, 5) == approx(2.0)


def test_shift_fractional_alpha_is_rejected():
    with raises(UsageError):
        deficiency_norm(build_registered_operator("toeplitz_quarter"), 3, 0.5)


def test_ritt_rate():
    op = build_registered_operator("ritt_diagonal")
    for n in (1000, 10000):
        assert 0.33 <= n * deficiency_norm(op, n) <= 0.40


def test_stolz_spectrum_and_power_bound():
    op = build_registered_operator("stolz_diagonal", {"alpha": "2"})
    desc = spectrum_description(op)
    assert desc.contains_one
    assert desc.peripheral_subset_of_one
    assert power_bound(op, 1000) == approx(1.0)
    assert stolz_angles(np.array([2]))[0] == approx(math.pi / 4)


def test_toeplitz_spectrum_description():
    desc = spectrum_description(build_registered_operator("toeplitz_quarter"))
    assert desc.kind == "symbol-region"
    assert desc.contains_one
    assert desc.peripheral_subset_of_one
    assert desc.boundary(np.array([0.0]))[0] == approx(1.0)


def test_truncation_limits():
    op = build_registered_operator("toeplitz_quarter")
    with raises(ResourceError):
        truncation_oracle(op, 0)
    with raises(ResourceError):
        truncation_oracle(op, 5000)
    with raises(UsageError):
        truncation_oracle(block_q(op, 1.0), 8)


@mark.parametrize("name params".split(), (
    ("toeplitz_quarter", {}),
    ("stolz_diagonal", {"alpha": "2"}),
    ("ritt_diagonal", {}),
))
def test_truncation_agrees_with_analytic_norms(name, params):
    op = build_registered_operator(name, params)
    trunc = truncation_oracle(op, 128)
    for n in (1, 4, 16):
        assert deficiency_norm(trunc, n) == approx(deficiency_norm(op, n), rel=1e-8)


def test_spectral_norm_matches_svd():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((20, 20))
    assert spectral_norm(A) == approx(np.linalg.norm(A, 2), rel=1e-8)
    assert spectral_norm(np.diag([0.5, -3.0, 2.0])) == 3.0


def test_matrix_norms_on_l1_and_linf():
    A = np.array([[1.0, -2.0], [3.0, 4.0]])
    assert matrix_norm(A, "l1") == 6.0
    assert matrix_norm(A, "linf") == 7.0


@given(integers(min_value=1, max_value=10 ** 6))
@settings(max_examples=50)
def test_sample_ns_shape(n_max):
    ns = sample_ns(n_max)
    assert ns[0] == 0 and ns[-1] == n_max
    assert np.all(np.diff(ns) > 0)
    assert np.array_equal(ns[: min(n_max, 64) + 1], np.arange(min(n_max, 64) + 1))


def test_curve_validation():
    with raises(UsageError):
        DecayCurve(1.0, np.array([1, 1]), np.array([0.5, 0.4]), np.array([True, True]))
    with raises(UsageError):
        DecayCurve(1.0, np.array([1, 2]), np.array([0.5, np.nan]), np.array([True, True]))
    with raises(UsageError):
        ResolventCurve(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    with raises(UsageError):
        ResolventCurve(np.array([0.5, 4.0]), np.array([1.0, 1.0]))


def test_decay_and_resolvent_curves():
    op = build_registered_operator("stolz_diagonal", {"alpha": "2"})
    ns = sample_ns(500)
    decay = decay_curve(op, ns, max_workers=2)
    assert decay.ns.size == ns.size
    assert np.all(decay.values >= 0)
    assert list(decay.to_frame().columns) == ["n", "value", "exact"]

    thetas = theta_grid(op, 1e-3, points=50)
    assert thetas[0] >= 1e-3 and thetas[-1] <= math.pi
    assert np.any(np.isclose(thetas, math.pi / 4))
    res = resolvent_curve(op, thetas, max_workers=2)
    assert list(res.to_frame().columns) == ["theta", "value"]
    assert np.all(res.values > 0)


@given(floats(min_value=0.05, max_value=0.95))
@settings(max_examples=20, deadline=None)
def test_frac_resolvent_sup_single_point(r):
    op = build_registered_operator("single_point", {"lambda0": str(r)})
    assert frac_resolvent_sup(op, 1.0, AnnulusGrid(radii=8, angles=64)) == approx(1.0, rel=1e-4)


def test_frac_resolvent_sup_needs_supported_model():
    with raises(UsageError):
        frac_resolvent_sup(build_registered_operator("toeplitz_quarter"), 1.0)
    with raises(UsageError):
        frac_resolvent_sup(build_registered_operator("identity"), 0.5)


def test_block_q_power_norms():
    with raises(UsageError):
        BlockQ(build_registered_operator("identity"), 0.5)
    identity = build_registered_operator("identity")
    assert q_power_norm(identity, 1.0, 10) == 1.0
    half = build_registered_operator("single_point", {"lambda0": "0.5"})
    assert q_power_norm(half, 1.0, 2) == approx(0.25 * (1 + 2 * 0.5))
    out = q_power_bound(half, 1.0, [0, 1, 2, 3])
    assert out["power_bounded"]
    assert power_norm(block_q(half, 1.0), 2) == approx(0.5)


def test_moment_constant_is_finite():
    op = build_registered_operator("stolz_diagonal", {"alpha": "2"})
    C, ratios = moment_constant(op, 2.0, [1, 4, 16, 64])
    assert 0 < C < math.inf
    assert ratios.size == 4


def test_block_q_power_flags_uncertified_tail(monkeypatch):
    monkeypatch.setattr(operators, "DIAGONAL_SCAN_CAP", 1 << 15)
    ritt = build_registered_operator("ritt_diagonal")
    # (1 - 1/k)^n (1 + n/k) stays below the limit value 1, which the tail bound never reaches
    out = q_power_bound(ritt, 1.0, [10])
    assert not out["certified"]
    assert out["sup"] == approx(1.0)
    assert out["power_bounded"]

    stolz = build_registered_operator("stolz_diagonal", {"alpha": "2"})
    out = q_power_bound(stolz, 2.0, [1, 10, 100, 1000])
    assert out["certified"]
    assert out["sup"] >= 1.0


REGISTERED_CASES = (
    ("identity", {}),
    ("toeplitz_quarter", {}),
    ("factorial_diagonal", {}),
    ("ritt_diagonal", {}),
    ("stolz_diagonal", {"alpha": "2"}),
    ("single_point", {"lambda0": "0.5"}),
)


def off_axis_points(radii):
    phases = (np.arange(12) + 0.5) * math.pi / 6
    return [r * complex(math.cos(p), math.sin(p)) for r in radii for p in phases]


@mark.parametrize("name params".split(), REGISTERED_CASES)
def test_powers_are_submultiplicative(name, params):
    op = build_registered_operator(name, params)
    rng = np.random.default_rng(0)
    for m, n in rng.integers(0, 200, size=(8, 2)):
        assert power_norm(op, m + n) <= power_norm(op, m) * power_norm(op, n) * (1 + 1e-9) + 1e-12


@mark.parametrize("name params".split(), REGISTERED_CASES)
def test_outer_resolvent_bound(name, params):
    op = build_registered_operator(name, params)
    M_hat = power_bound(op, 4096)
    for lam in off_axis_points((1.5, 2.0, 3.0)):
        assert resolvent_norm(op, lam) <= M_hat / (abs(lam) - 1) * (1 + 1e-9)


@mark.parametrize("name params".split(), REGISTERED_CASES)
def test_resolvent_dominates_inverse_spectral_distance(name, params):
    op = build_registered_operator(name, params)
    checked = 0
    for lam in off_axis_points((0.5, 0.9, 1.05, 2.0)):
        dist = spectrum_distance(op, lam)
        if dist <= 1e-6:
            continue
        assert resolvent_norm(op, lam) >= 1.0 / dist - 1e-9
        checked += 1
    assert checked >= 12

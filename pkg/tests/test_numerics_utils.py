import cmath
import math

import numpy as np
from hypothesis import given
from hypothesis.strategies import floats, integers
from pytest import approx, mark, raises

from ktrates.errors import RangeError, UsageError
from ktrates.lab.numerics_utils import (
    LogComplex,
    MonotoneTable,
    invert_monotone,
    log_binomial,
    log_binomial_array,
    log_sum_polar,
    logc_combine,
    logc_power,
    logc_product,
    logc_sum,
    wrap_phase,
)

moduli = floats(min_value=1e-6, max_value=1e6)
phases = floats(min_value=-math.pi, max_value=math.pi)


def polar(r, t):
    return r * cmath.exp(1j * t)


@given(moduli, phases)
def test_log_complex_round_trip(r, t):
    z = polar(r, t)
    back = LogComplex.from_complex(z).to_complex()
    assert abs(back - z) <= 1e-12 * abs(z)


@given(moduli, phases, moduli, phases)
def test_log_complex_arithmetic_matches_complex(r1, t1, r2, t2):
    a, b = polar(r1, t1), polar(r2, t2)
    la, lb = LogComplex.from_complex(a), LogComplex.from_complex(b)
    scale = abs(a) + abs(b)
    assert abs((la * lb).to_complex() - a * b) <= 1e-11 * abs(a * b)
    assert abs((la / lb).to_complex() - a / b) <= 1e-11 * abs(a / b)
    assert abs((la + lb).to_complex() - (a + b)) <= 1e-11 * scale
    assert abs((la - lb).to_complex() - (a - b)) <= 1e-11 * scale


def test_zero_pins_phase():
    z = LogComplex(-math.inf, 1.3)
    assert z.is_zero
    assert z.phase == 0.0
    assert z.to_complex() == 0j


@mark.parametrize("log_mag phase".split(), ((math.nan, 0.0), (0.0, math.nan), (math.inf, 0.0)))
def test_bad_components_are_rejected(log_mag, phase):
    with raises(UsageError):
        LogComplex(log_mag, phase)


def test_exact_cancellation_is_zero():
    two = LogComplex.from_complex(2.0)
    assert (two - two).is_zero


def test_products_do_not_overflow():
    big = LogComplex(1000.0, 0.5)
    product = big * big
    assert product.log_mag == approx(2000.0)
    assert product.phase == approx(1.0)


def test_power_edge_cases():
    z = LogComplex(0.3, 0.2)
    assert logc_power(z, 0) == LogComplex.one()
    assert logc_power(LogComplex.zero(), 5).is_zero
    assert logc_power(z, 3).log_mag == approx(0.9)
    with raises(UsageError):
        logc_power(z, -1)


def test_product_matches_power():
    z = LogComplex(0.3, 0.2)
    product, power = logc_product([z, z, z]), logc_power(z, 3)
    assert product.log_mag == approx(power.log_mag, rel=1e-15)
    assert product.phase == approx(power.phase, rel=1e-15)
    assert logc_product([z, LogComplex.zero()]).is_zero


def test_combine_rejects_unknown_kind_and_empty_input():
    with raises(UsageError):
        logc_combine([LogComplex.one()], "quotient")
    with raises(UsageError):
        logc_sum([])


def test_log_sum_polar_matches_complex_sum():
    rng = np.random.default_rng(3)
    mags = rng.uniform(-5, 5, size=(4, 7))
    angles = rng.uniform(-math.pi, math.pi, size=(4, 7))
    out_mag, out_phase = log_sum_polar(mags, angles)
    expected = np.sum(np.exp(mags + 1j * angles), axis=-1)
    assert np.allclose(np.exp(out_mag + 1j * out_phase), expected, rtol=1e-12)


def test_log_sum_polar_all_zero():
    mag, phase = log_sum_polar(np.array([-np.inf, -np.inf]), np.array([0.0, 1.0]))
    assert np.isneginf(mag)
    assert phase == 0.0


@given(integers(min_value=0, max_value=300), integers(min_value=0, max_value=300))
def test_log_binomial_matches_exact(n, k):
    if k > n:
        with raises(UsageError):
            log_binomial(n, k)
        return
    assert log_binomial(n, k) == approx(math.log(math.comb(n, k)), rel=1e-10, abs=1e-9)


def test_log_binomial_pascal_recurrence():
    for n in range(2, 201):
        for k in range(1, n):
            step = np.logaddexp(log_binomial(n - 1, k - 1), log_binomial(n - 1, k))
            assert abs(log_binomial(n, k) - step) <= 1e-9


def test_log_binomial_rejects_negative():
    with raises(UsageError):
        log_binomial(-1, 0)


def test_log_binomial_array_out_of_range_is_minus_inf():
    out = log_binomial_array(5, np.array([-1, 0, 2, 6]))
    assert np.isneginf(out[0]) and np.isneginf(out[3])
    assert out[1] == approx(0.0, abs=1e-12)
    assert out[2] == approx(math.log(10.0))


@given(floats(min_value=-100.0, max_value=100.0))
def test_wrap_phase_range(t):
    p = wrap_phase(t)
    assert -math.pi < p <= math.pi
    assert math.cos(p) == approx(math.cos(t), abs=1e-9)


def test_wrap_phase_maps_minus_pi_to_pi():
    assert wrap_phase(-math.pi) == math.pi


def test_monotone_table_right_inverse_on_flats():
    table = MonotoneTable(np.array([1.0, 2.0, 3.0, 4.0]), np.array([4.0, 2.0, 2.0, 1.0]))
    assert table.inverse(2.0) == 3.0
    assert table.inverse(3.0) == approx(1.5)
    assert table(2.5) == approx(2.0)


def test_monotone_table_increasing_inverse():
    table = MonotoneTable(np.array([0.0, 1.0, 2.0]), np.array([0.0, 10.0, 20.0]), "increasing")
    assert table.inverse(15.0) == approx(1.5)


def test_monotone_table_range_and_shape_errors():
    table = MonotoneTable(np.array([1.0, 2.0]), np.array([2.0, 1.0]))
    with raises(RangeError):
        table.inverse(5.0)
    with raises(UsageError):
        MonotoneTable(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    with raises(UsageError):
        MonotoneTable(np.array([2.0, 1.0]), np.array([2.0, 1.0]))


def test_invert_monotone_callable():
    assert invert_monotone(lambda x: x ** 3, 8.0, bracket=(0.0, 5.0)) == approx(2.0, rel=1e-10)
    assert invert_monotone(lambda x: 1.0 / x, 4.0, bracket=(0.1, 1.0)) == approx(0.25, rel=1e-10)
    with raises(UsageError):
        invert_monotone(lambda x: x, 1.0)
    with raises(RangeError):
        invert_monotone(lambda x: x, 10.0, bracket=(0.0, 1.0))

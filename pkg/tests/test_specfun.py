import math

import mpmath
import numpy as np
import pytest
from hypothesis import example, given, strategies as st

from kimura_spde import specfun as sf
from kimura_spde.errors import DomainError

# e^{-x} I_order(x) at 40 digits (mpmath.besseli)
IVE_ORACLE = {
    (0.0, 0.5): 0.64503527044915006811,
    (0.0, 5.0): 0.18354081260932835307,
    (0.0, 29.9): 0.073269219046001907707,
    (0.0, 30.1): 0.073023294131060941854,
    (0.0, 100.0): 0.039944379299096682648,
    (0.0, 1e4): 0.0039894726746047321064,
    (1.0, 0.5): 0.15642080318487169714,
    (1.0, 5.0): 0.16397226694454235693,
    (1.0, 29.9): 0.072033374911868787814,
    (1.0, 30.1): 0.071799854351014333186,
    (1.0, 100.0): 0.039744153025130252674,
    (1.0, 1e4): 0.0039892731959836622645,
    (0.5, 0.5): 0.35663583483745893528,
    (0.5, 5.0): 0.17840431170432102234,
    (0.5, 100.0): 0.039894228040143267794,
}

# e^{-x} x^k 2F2[3/2, 1; 2, 3](x) at 40 digits (mpmath.hyp2f2)
ENERGY_2F2_ORACLE = {
    (0.1, 0): 0.92793799553869955259,
    (0.1, 2): 0.0092793799553869973288,
    (3.0, 0): 0.13147620435382496553,
    (3.0, 1): 0.39442861306147489658,
    (3.0, 2): 1.1832858391844246897,
    (50.0, 2): 0.32413204562878727881,
    (300.0, 0): 1.4513532675880933793e-6,
    (300.0, 1): 0.0004354059802764280138,
    (300.0, 2): 0.13062179408292840414,
}

ENERGY_SPEC = sf.hypergeometric([1.5, 1.0], [2.0, 3.0])
ONE_F_ONE_12 = sf.hypergeometric([1.0], [2.0])


@pytest.mark.parametrize("order,x", sorted(IVE_ORACLE))
def test_bessel_scaled_matches_extended_precision(order, x):
    assert sf.bessel_i_scaled(order, x) == pytest.approx(IVE_ORACLE[order, x], rel=1e-13)


@pytest.mark.parametrize("order,x", sorted(IVE_ORACLE))
def test_bessel_array_agrees_with_scalar(order, x):
    arr = sf.bessel_i_scaled_array(order, np.array([x]))
    assert arr[0] == pytest.approx(sf.bessel_i_scaled(order, x), rel=1e-13)


def test_bessel_at_zero():
    assert sf.bessel_i_scaled(0.0, 0.0) == 1.0
    assert sf.bessel_i_scaled(1.0, 0.0) == 0.0


def test_bessel_large_argument_leading_terms():
    approx = (2 * math.pi * 100) ** -0.5 * (1 + 1 / 800)
    assert sf.bessel_i_scaled(0.0, 100.0) == pytest.approx(approx, rel=1e-5)


def test_bessel_domain_errors():
    with pytest.raises(DomainError):
        sf.bessel_i_scaled(-1.0, 1.0)
    with pytest.raises(DomainError):
        sf.bessel_i_scaled(0.0, -1.0)
    with pytest.raises(DomainError):
        sf.bessel_i_scaled(0.0, math.nan)


def test_bessel_ordering_on_log_grid():
    x = np.geomspace(1e-6, 1e6, 400)
    i0 = sf.bessel_i_scaled_array(0.0, x)
    i1 = sf.bessel_i_scaled_array(1.0, x)
    assert np.all(i0 > 0) and np.all(i0 <= 1)
    assert np.all(i1 < i0)
    assert np.all(np.diff(i0) < 0)


@given(st.floats(1e-6, 1e6))
def test_bessel_scaled_bounds(x):
    i0 = sf.bessel_i_scaled(0.0, x)
    assert 0.0 < i0 <= 1.0
    assert sf.bessel_i_scaled(1.0, x) < i0


@given(st.floats(0.0, 4.0), st.floats(1e-3, 500.0))
def test_bessel_real_order_against_mpmath(order, x):
    mpmath.mp.dps = 30
    exact = float(mpmath.besseli(order, x) * mpmath.exp(-x))
    assert sf.bessel_i_scaled(order, x) == pytest.approx(exact, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("order", [0.0, 0.5, 1.0])
def test_series_and_asymptotic_branches_overlap(order):
    ctl = sf.BESSEL_CONTROL
    for x in np.geomspace(18.0, 300.0, 25):
        series = sf._ive_series(order, x, ctl)
        asym = sf._ive_asymptotic(order, x, ctl)
        # series roundoff grows like x * eps from the e^x-sized partial sums
        assert abs(series / asym - 1.0) <= 10 * ctl.rel_tol * max(1.0, x / ctl.asymptotic_switch)


@pytest.mark.parametrize("x", [0.0, 1.0, 10.0])
def test_bessel_derivative_identity(x):
    assert sf.bessel_i_prime_identity_check(x, 1e-5) <= 1e-6


@given(st.floats(0.0, 200.0))
@example(5e-324)
@example(2.225073858507203e-309)
def test_bessel_derivative_identity_everywhere(x):
    assert sf.bessel_i_prime_identity_check(x, 1e-5) <= 1e-6


@pytest.mark.parametrize("order", [0.0, 0.5, 1.0])
def test_bessel_scaled_at_denormal_arguments(order):
    for x in (5e-324, 2.225073858507203e-309, 1e-300):
        expected = float(mpmath.besseli(order, x) * mpmath.exp(-x))
        assert sf.bessel_i_scaled(order, x) == pytest.approx(expected, rel=1e-12, abs=1e-320)


def test_one_f_one_closed_form_at_two():
    assert sf.pfq(ONE_F_ONE_12, 2.0) == pytest.approx((math.e ** 2 - 1) / 2, rel=1e-14)
    assert sf.pfq(ONE_F_ONE_12, 2.0) == pytest.approx(3.194528, abs=1e-6)


def test_one_f_one_near_zero():
    assert sf.pfq(ONE_F_ONE_12, 1e-300) == 1.0
    assert sf.pfq(ONE_F_ONE_12, 0.0) == 1.0


@given(st.floats(1e-8, 50.0))
def test_one_f_one_exponential_identity(x):
    assert sf.pfq(ONE_F_ONE_12, x) == pytest.approx(math.expm1(x) / x, rel=1e-10)


def test_one_f_one_incomplete_gamma_example():
    spec = sf.hypergeometric([1.0], [3.0])
    expected = 2 * math.e * (sf.gamma_fn(2) - sf.incomplete_gamma_upper(2, 1.0))
    assert sf.pfq(spec, 1.0) == pytest.approx(expected, rel=1e-12)
    assert sf.pfq(spec, 1.0) == pytest.approx(1.4365636569180904707, rel=1e-14)


@given(st.integers(1, 6), st.floats(1e-6, 30.0))
def test_incomplete_gamma_identity(a, z):
    # 1F1[1; a+1](z) = a e^z z^-a (Gamma(a) - Gamma(a, z)); the lower gamma comes from mpmath
    mpmath.mp.dps = 30
    lower = mpmath.gammainc(a, 0, z)
    expected = float(a * mpmath.exp(z) * mpmath.mpf(z) ** -a * lower)
    assert sf.pfq(sf.hypergeometric([1.0], [a + 1.0]), z) == pytest.approx(expected, rel=1e-8)


@given(st.integers(1, 6), st.floats(1.0, 30.0))
def test_incomplete_gamma_identity_with_own_gamma(a, z):
    lower = sf.gamma_fn(a) - sf.incomplete_gamma_upper(a, z)
    expected = a * math.exp(z) * z ** -a * lower
    assert sf.pfq(sf.hypergeometric([1.0], [a + 1.0]), z) == pytest.approx(expected, rel=1e-8)


@pytest.mark.parametrize("x,k", sorted(ENERGY_2F2_ORACLE))
def test_pfq_scaled_matches_extended_precision(x, k):
    assert sf.pfq_scaled(ENERGY_SPEC, x, k) == pytest.approx(ENERGY_2F2_ORACLE[x, k], rel=1e-12)


def test_pfq_scaled_at_zero():
    assert sf.pfq_scaled(ENERGY_SPEC, 0.0, 1.0) == 0.0
    assert sf.pfq_scaled(ENERGY_SPEC, 0.0, 0.0) == 1.0


def test_pfq_scaled_rejects_unbounded_weight():
    with pytest.raises(DomainError):
        sf.pfq_scaled(ENERGY_SPEC, 1.0, 3.0)
    with pytest.raises(DomainError):
        sf.pfq_scaled(sf.hypergeometric([1.0], [2.0, 3.0]), 1.0)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_energy_2f2_uniform_bound(k):
    x = np.geomspace(1.0, 1e4, 241)
    vals = np.array([sf.pfq_scaled(ENERGY_SPEC, v, k) for v in x])
    assert np.all(np.isfinite(vals))
    assert np.max(vals) < 2.0
    last_decade = vals[x >= 1e3]
    assert np.all(np.diff(last_decade) <= 0)


def test_pfq_branches_overlap():
    ctl = sf.PFQ_CONTROL
    for x in np.geomspace(40.0, 600.0, 15):
        for k in (0, 2):
            asym = sf._pfq_asymptotic_scaled(ENERGY_SPEC, x, k, ctl)
            series = sf._pfq_scaled_series(ENERGY_SPEC, x, k, ctl)
            assert asym is not None
            assert abs(asym / series - 1.0) <= 2e-15 * x


@given(st.floats(0.0, 2000.0), st.sampled_from([0.0, 1.0, 2.0]))
def test_pfq_scaled_matches_mpmath(x, k):
    mpmath.mp.dps = 30
    exact = float(mpmath.exp(-x) * mpmath.mpf(x) ** k * mpmath.hyp2f2(1.5, 1, 2, 3, x))
    assert sf.pfq_scaled(ENERGY_SPEC, x, k) == pytest.approx(exact, rel=1e-11, abs=1e-300)


def test_gamma_family_examples():
    assert sf.gamma_fn(5) == 24.0
    assert sf.incomplete_gamma_upper(3, 0) == pytest.approx(2.0, rel=1e-15)
    assert sf.pochhammer(3, 2) == 12.0
    assert sf.erf(0.0) == 0.0
    with pytest.raises(DomainError):
        sf.gamma_fn(-2.0)
    with pytest.raises(DomainError):
        sf.pochhammer(1.0, -1)


@given(st.floats(-1e3, 1e3), st.integers(0, 20))
def test_pochhammer_recurrence(a, n):
    assert sf.pochhammer(a, n + 1) == pytest.approx(sf.pochhammer(a, n) * (a + n), rel=1e-12, abs=1e-300)


def test_series_control_validation():
    with pytest.raises(DomainError):
        sf.SeriesControl(rel_tol=0.0)
    with pytest.raises(DomainError):
        sf.SeriesControl(max_terms=4)

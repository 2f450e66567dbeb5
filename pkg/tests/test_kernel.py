import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kimura_spde import kernel as K
from kimura_spde._backend import q_nu as raw_q_nu
from kimura_spde.constants import ENERGY_REFINED_C, GAUSSIAN_REFINED_C
from kimura_spde.errors import DomainError, TruncationWarning

# q_nu at 30 digits from (1/t)(w/z)^((nu-1)/2) e^{-(z+w)/t} I_{1-nu}(2 sqrt(zw)/t) in mpmath
Q_ORACLE = {
    (0.0, 1.0, 2.0, 0.5): 0.15640119832636357778,
    (0.0, 0.01, 0.02, 0.001): 9.4108308246654841854,
    (0.5, 1.0, 1.5, 0.7): 0.25589748972475367202,
    (-1.0, 2.0, 1.0, 0.3): 0.39639493076948164823,
}
Q1_ORACLE = {(3.0, 1.0, 2.0): 0.12876542477554595252}
# int_0^inf q_0(z, w, s)^2 dw by mpmath.quad
ENERGY_DENSITY_ORACLE = {
    (1.0, 1.0): 0.12251390900731929574,
    (0.1, 1.0): 0.0043071725895509917186,
    (5.0, 0.2): 0.2025825285179920663,
}
# e^{-x} I_0(x) - e^{-2x}/2
U_ORACLE = {0.01: 0.4999752484963298479, 1.0: 0.39809196597533409055,
            10.0: 0.1278333361328517961, 1000.0: 0.012617240455891256586}
# int q_0(1, w, 0.5) e^{-w} dw by mpmath.quad
PROPAGATE_EXP_ORACLE = 0.37808183579597933498
# int q_nu(z, 1, 1)^2 dz for nu = 0, 1 by mpmath.quad
Z_ENERGY_ORACLE = {0: 0.16841750573583722134, 1: 0.23287980379682021825}

positive = st.floats(1e-3, 10.0)


@pytest.mark.parametrize("nu,z,w,t", sorted(Q_ORACLE))
def test_q_nu_matches_bessel_formula(nu, z, w, t):
    assert K.q_nu(K.KernelParams(nu), z, w, t) == pytest.approx(Q_ORACLE[nu, z, w, t], rel=1e-13)


def test_q_one_matches_bessel_formula():
    (z, w, t), value = next(iter(Q1_ORACLE.items()))
    assert float(raw_q_nu(1.0, z, w, t)) == pytest.approx(value, rel=1e-13)


def test_drift_order_validated():
    with pytest.raises(DomainError):
        K.KernelParams(1.0)
    with pytest.raises(DomainError):
        K.q_nu(0.0, -1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        K.q_nu(0.0, 1.0, 1.0, 0.0)


def test_exchange_identity_example():
    assert 3 * K.q_nu(0, 2, 3, 0.7) == pytest.approx(2 * K.q_nu(0, 3, 2, 0.7), rel=1e-14)


@given(positive, positive, positive)
def test_exchange_identity(z, w, t):
    assert w * K.q_nu(0, z, w, t) == pytest.approx(z * K.q_nu(0, w, z, t), rel=1e-12, abs=1e-300)


def test_small_w_limit():
    assert K.q_nu(0, 1.0, 1e-9, 1.0) == pytest.approx(math.exp(-1.0), abs=1e-6)


def test_positivity_on_random_grid():
    rng = np.random.default_rng(11)
    z, w, t = rng.uniform(1e-9, 10.0, (3, 10_000))
    for nu in (0.0, 0.5, -1.0):
        vals = K.q_nu(nu, z, w, t)
        assert np.all(vals >= 0) and np.all(np.isfinite(vals))


def test_gaussian_bounds_example():
    z, w, t = 4.0, 1.0, 0.5
    q = K.q_nu(0, z, w, t)
    assert q <= K.gaussian_bound(z, w, t)
    assert q <= K.gaussian_bound_refined(z, w, t)


@given(positive, positive, positive)
def test_gaussian_bound_everywhere(z, w, t):
    assert K.q_nu(0, z, w, t) <= K.gaussian_bound(z, w, t) * (1 + 1e-12)


@given(positive, positive, positive)
def test_refined_gaussian_bound_where_valid(z, w, t):
    if z * w >= t * t:
        assert K.q_nu(0, z, w, t) <= K.gaussian_bound_refined(z, w, t) * (1 + 1e-12)


def test_refined_gaussian_constant_frozen():
    assert GAUSSIAN_REFINED_C == pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-15)
    assert K.fit_gaussian_constant() == pytest.approx(GAUSSIAN_REFINED_C, rel=1e-9)
    assert K.fit_gaussian_constant() <= GAUSSIAN_REFINED_C


def test_q0_dz_against_central_difference():
    h = 1e-5
    fd = (K.q_nu(0, 1 + h, 1, 1) - K.q_nu(0, 1 - h, 1, 1)) / (2 * h)
    assert K.q0_dz(1.0, 1.0, 1.0) == pytest.approx(fd, rel=1e-6)


@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.floats(0.1, 2.0))
def test_q0_dz_finite_difference_everywhere(z, w, t):
    h = 1e-5 * z
    fd = (K.q_nu(0, z + h, w, t) - K.q_nu(0, z - h, w, t)) / (2 * h)
    assert K.q0_dz(z, w, t) == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_q0_dz_small_w_limit():
    assert K.q0_dz(1.0, 1e-12, 1.0) == pytest.approx(0.0, abs=1e-9)
    z, t = 0.5, 1.0
    assert K.q0_dz(z, 1e-12, t) == pytest.approx(math.exp(-z / t) * (1 - z / t) / t ** 2, rel=1e-6)


def test_q0_dz_sign():
    z, w, t = 0.5, 2.0, 0.3
    diff = float(raw_q_nu(1.0, z, w, t) - raw_q_nu(0.0, z, w, t))
    assert math.copysign(1, K.q0_dz(z, w, t)) == math.copysign(1, diff)


def test_mass_q0_examples():
    assert K.mass_q0(1.0, 1.0) == pytest.approx(1 - math.exp(-1), rel=1e-15)
    assert K.mass_q0(1e-300, 1.0) == pytest.approx(0.0, abs=1e-299)
    v = K.mass_q0(0.1, 1.0)
    assert math.exp(-1) * 0.1 <= v <= 0.1
    assert K.mass_q0(1.0, 1.0) + K.absorbed_mass(1.0, 1.0) == pytest.approx(1.0, rel=1e-15)


def test_mass_quadrature_on_log_grid():
    grid = np.geomspace(1e-2, 10.0, 20)
    for z in grid:
        for t in grid:
            assert K.mass_q0_quadrature(z, t) == pytest.approx(K.mass_q0(z, t), rel=1e-9)


def test_mass_q1():
    assert K.mass_q1(1.0, 1.0) == 1.0
    assert K.mass_q1(10.0, 0.1) == 1.0
    assert K.mass_q1_quadrature(0.5, 2.0) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("z,s", sorted(ENERGY_DENSITY_ORACLE))
def test_energy_density_matches_quadrature_oracle(z, s):
    exact = ENERGY_DENSITY_ORACLE[z, s]
    assert K.energy_density_q0(z, s) == pytest.approx(exact, rel=1e-12)
    assert K.energy_density_q0_pfq(z, s) == pytest.approx(exact, rel=1e-12)
    assert K.energy_density_q0_quadrature(z, s) == pytest.approx(exact, rel=1e-9)


def test_energy_density_forms_agree():
    assert K.energy_density_q0(1.0, 0.5) == pytest.approx(K.energy_density_q0_pfq(1.0, 0.5), rel=1e-12)


@given(st.floats(1e-6, 100.0), st.floats(1e-3, 10.0))
def test_energy_density_forms_agree_everywhere(z, s):
    a = K.energy_density_q0(z, s)
    b = K.energy_density_q0_pfq(z, s)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-300)


@given(st.floats(1e-6, 100.0), st.floats(1e-3, 10.0))
def test_energy_density_refined_bound(z, s):
    assert K.energy_density_q0(z, s) <= ENERGY_REFINED_C / math.sqrt(z * s) * (1 + 1e-12)


def test_energy_density_vanishes_at_boundary():
    assert K.energy_density_q0(1e-12, 1.0) < 1e-20


def test_weighted_energy_density_reduces_to_plain():
    assert K.weighted_energy_density(0.7, 0.3, 0.0) == pytest.approx(K.energy_density_q0(0.7, 0.3), rel=1e-12)
    with pytest.raises(DomainError):
        K.weighted_energy_density(1.0, 1.0, 0.75)


@pytest.mark.parametrize("x", sorted(U_ORACLE))
def test_energy_U_values(x):
    assert K.energy_U(x) == pytest.approx(U_ORACLE[x], rel=1e-13)


def test_energy_U_half_at_zero_and_bounded():
    assert K.energy_U(0.0) == 0.5
    x = np.geomspace(1e-3, 1e3, 200)
    assert np.all(K.energy_U(x) <= 0.5)


def test_energy_U_is_time_integral_of_density():
    assert K.energy_U_quadrature(1.0, 2.0) == pytest.approx(K.energy_U(0.5), rel=1e-10)


@pytest.mark.parametrize("nu", [0, 1])
def test_z_energy(nu):
    assert K.z_energy_q_nu(nu, 1.0, 1.0) == pytest.approx(Z_ENERGY_ORACLE[nu], rel=1e-12)
    assert K.z_energy_quadrature(nu, 1.0, 1.0) == pytest.approx(Z_ENERGY_ORACLE[nu], rel=1e-4)


def test_z_energy_small_w():
    assert K.z_energy_q_nu(1, 1e-12, 1.0) == pytest.approx(0.5, rel=1e-9)
    assert K.z_energy_q_nu(0, 1e-12, 1.0) == pytest.approx(0.25, rel=1e-9)
    with pytest.raises(DomainError):
        K.z_energy_q_nu(2, 1.0, 1.0)


@given(st.floats(1e-3, 1e3), st.floats(1e-2, 10.0))
def test_z_energy_uniform_bound(w, s):
    for nu in (0, 1):
        assert K.z_energy_q_nu(nu, w, s) * s <= 0.5 + 1e-12


def test_propagate_constant_data():
    assert K.propagate(0, None, 1.0, 1.0).value == pytest.approx(1 - math.exp(-1), rel=1e-10)


def test_propagate_exponential_data():
    res = K.propagate(0, lambda w: np.exp(-w), 1.0, 0.5)
    assert res.value == pytest.approx(PROPAGATE_EXP_ORACLE, rel=1e-12)
    assert res.tail_bound < 1e-15


def test_propagate_warns_on_truncation():
    narrow = K.QuadratureSpec(spread=1.0)
    with pytest.warns(TruncationWarning):
        K.propagate(0, None, 1.0, 1.0, narrow)


def test_chapman_kolmogorov_propagation():
    # propagate u0 = 1 for s = 0.5, then again for t = 0.5, against one step of length 1
    first = lambda w: np.array([K.propagate(0, None, float(v), 0.5).value if v > 0 else 0.0 for v in w])
    two_step = K.propagate(0, first, 1.0, 0.5).value
    assert two_step == pytest.approx(K.propagate(0, None, 1.0, 1.0).value, rel=1e-9)


@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.floats(0.05, 2.0), st.floats(0.05, 2.0))
def test_semigroup_composition(z, w, s, t):
    direct = K.q_nu(0, z, w, s + t)
    assert K.semigroup_compose(0, z, w, s, t) == pytest.approx(direct, rel=1e-8, abs=1e-14)


def test_quadrature_spec_validation():
    with pytest.raises(DomainError):
        K.QuadratureSpec(z_max=0.0)
    with pytest.raises(DomainError):
        K.QuadratureSpec(rel_tol=0.1)
    with pytest.raises(DomainError):
        K.QuadratureSpec(singularity_grading=5.0)


def test_potential_spec():
    V = K.PotentialSpec((1.0, 2.0), (3.0, -4.0))
    assert V.sup_norm == 4.0
    assert V(1.5) == pytest.approx(-0.5)
    assert V(100.0) == -4.0
    with pytest.raises(DomainError):
        K.PotentialSpec((0.0,), (1.0,))


def test_duhamel_zero_potential():
    res = K.duhamel_qV(0, K.PotentialSpec.constant(0.0), 1.0, 1.5, 0.2, 3)
    assert res.per_term[0] == pytest.approx(K.q_nu(0, 1.0, 1.5, 0.2), rel=1e-15)
    assert res.per_term[1:] == [0.0, 0.0, 0.0]


def test_duhamel_constant_potential_terms():
    c, t = 1.0, 0.2
    q = K.q_nu(0, 1.0, 1.5, t)
    res = K.duhamel_qV(0, K.PotentialSpec.constant(c), 1.0, 1.5, t, 3)
    for k, term in enumerate(res.per_term):
        assert term == pytest.approx((c * t) ** k / math.factorial(k) * q, rel=1e-4)


def test_duhamel_ratio_bound_oscillating_potential():
    V = K.PotentialSpec.from_function(lambda z: np.cos(3 * z), np.linspace(0.01, 10, 200))
    t = 0.2
    res = K.duhamel_qV(0, V, 1.0, 1.5, t, 3)
    q = K.q_nu(0, 1.0, 1.5, t)
    assert abs(res.value / q - 1) <= math.exp(t) - 1 + 1e-3
    for k, term in enumerate(res.per_term):
        assert abs(term) <= (1 + 1e-6) * t ** k / math.factorial(k) * q


def test_duhamel_term_count_validated():
    with pytest.raises(DomainError):
        K.duhamel_qV(0, K.PotentialSpec.constant(1.0), 1.0, 1.0, 1.0, 6)

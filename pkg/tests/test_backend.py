import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kimura_spde import _backend, _fallback

pytestmark = pytest.mark.skipif(not _backend.COMPILED, reason="compiled core not built")

orders = st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0, -0.5])


@pytest.fixture
def both():
    # (compiled, fallback) results for the same public call
    def run(fn, *args):
        _backend.use_fallback(False)
        a = fn(*args)
        _backend.use_fallback(True)
        try:
            b = fn(*args)
        finally:
            _backend.use_fallback(False)
        return a, b
    return run


def test_switching():
    _backend.use_fallback(True)
    assert _backend.backend_name() == "numpy"
    _backend.use_fallback(False)
    assert _backend.backend_name() == "compiled"


@settings(max_examples=60)
@given(orders, st.floats(0.0, 500.0))
def test_ive_agrees(order, x):
    a = _backend._core.ive_array(order, np.array([x]), 30.0)[0]
    b = _fallback.ive_array(order, np.array([x]), 30.0)[0]
    assert a == pytest.approx(b, rel=1e-13, abs=1e-300)


@settings(max_examples=60)
@given(st.sampled_from([0.0, 0.5, -1.0]), st.floats(1e-8, 50.0), st.floats(1e-8, 50.0), st.floats(1e-4, 10.0))
def test_q_nu_agrees(nu, z, w, t):
    args = (np.array([z]), np.array([w]), np.array([t]))
    a = _backend._core.q_nu_array(nu, *args, 30.0)[0]
    b = _fallback.q_nu_array(nu, *args, 30.0)[0]
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


def test_arrays_and_broadcast(both):
    z = np.geomspace(1e-6, 20.0, 40)[:, None]
    w = np.geomspace(1e-6, 20.0, 30)[None, :]
    a, b = both(_backend.q_nu, 0.0, z, w, 0.3)
    assert a.shape == (40, 30)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0.0)
    a, b = both(_backend.ive, 1.0, np.linspace(0.0, 80.0, 201))
    np.testing.assert_allclose(a, b, rtol=1e-13)


def test_weighted_square_sum(both):
    rng = np.random.default_rng(1)
    z, w = rng.uniform(0.01, 4.0, 500), rng.uniform(0.0, 6.0, 500)
    weight = rng.uniform(0.0, 1.0, 500)
    a, b = both(_backend.q0_squared_sum, z, w, 0.2, weight)
    assert a == pytest.approx(b, rel=1e-12)
    direct = float(np.sum(weight * _backend.q_nu(0.0, z, w, 0.2) ** 2))
    assert a == pytest.approx(direct, rel=1e-12)


def test_environment_forces_fallback():
    env = dict(os.environ, KIMURA_SPDE_PURE="1")
    code = "from kimura_spde import _backend; print(_backend.COMPILED, _backend.backend_name())"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "numpy"]

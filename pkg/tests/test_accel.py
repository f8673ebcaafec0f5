import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detachctl import _accel

NB, NP = _accel.BACKENDS["numba"], _accel.BACKENDS["numpy"]


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 3000), seed=st.integers(0, 2**32 - 1))
def test_dot_backends_agree(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(n), rng.standard_normal(n)
    exact = float(np.sum(np.array([x * y for x, y in zip(a, b)], dtype=np.longdouble)))
    assert NB["blocked_dot"](a, b) == pytest.approx(exact, abs=1e-12 * n)
    assert NP["blocked_dot"](a, b) == pytest.approx(exact, abs=1e-12 * n)


def test_matrix_kernels_agree():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((37, 601))
    v, r = rng.standard_normal(601), rng.standard_normal(37)
    np.testing.assert_allclose(NB["matvec"](X, v), NP["matvec"](X, v), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(NB["rmatvec"](X, r), NP["rmatvec"](X, r), rtol=1e-12, atol=1e-12)
    img = rng.random((20, 30))
    np.testing.assert_allclose(NB["outboard_row_sums"](img, 7), NP["outboard_row_sums"](img, 7), rtol=1e-13)
    x = rng.random(1000) * 255
    c1, s1 = NB["centered_and_std"](x)
    c2, s2 = NP["centered_and_std"](x)
    np.testing.assert_allclose(c1, c2, atol=1e-12)
    assert s1 == pytest.approx(s2, rel=1e-13)


def test_numba_dot_is_order_fixed():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal(21600), rng.standard_normal(21600)
    ro = a.copy()
    ro.setflags(write=False)
    assert NB["blocked_dot"](a, b) == NB["blocked_dot"](ro, b)


def test_env_flag_selects_numpy():
    env = dict(os.environ, DETACHCTL_NUMBA="0")
    code = "from detachctl import _accel; print(_accel.backend_name(), _accel.blocked_dot is _accel._np_blocked_dot)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    assert out.split() == ["numpy", "True"]


def test_active_backend_default():
    assert _accel.backend_name() == ("numba" if _accel.HAVE_NUMBA and _accel._env_wants_numba() else "numpy")
    _accel.warmup()

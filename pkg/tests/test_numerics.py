import numpy as np
import pytest
from hypothesis import given, strategies as st

from csbp import _numerics as nm


def test_gauss_legendre_integrates_polynomials_exactly():
    x, w = nm.gauss_legendre(16)
    assert w.sum() == pytest.approx(2.0, rel=1e-14)
    assert np.dot(w, x ** 30) == pytest.approx(2.0 / 31.0, rel=1e-12)


def test_integrate_log_power():
    # int_1^1e6 u^-2 du = 1 - 1e-6
    val = nm.integrate_log(lambda u: u ** -2.0, 1.0, 1e6, panels=12)
    assert val == pytest.approx(1.0 - 1e-6, rel=1e-13)


def test_divided_differences_of_polynomial():
    x = np.array([0.0, 1.0, 3.0, 4.0, 7.0])
    y = 2.0 * x ** 3 - x
    assert np.allclose(nm.divided_differences(x, y, 3), 2.0)
    assert np.allclose(nm.divided_differences(x, y, 4), 0.0, atol=1e-12)


def test_bernstein_signs_accept_bernstein_and_reject_convex():
    x = 2.0 ** np.arange(-5, 10, dtype=float)
    assert nm.bernstein_signs(x, np.sqrt(x)).ok
    assert nm.bernstein_signs(x, -np.expm1(-x)).ok
    assert not nm.bernstein_signs(x, x ** 2).ok


def test_floor_guard_skips_noise():
    x = np.linspace(1.0, 2.0, 12)
    y = np.ones_like(x) + 1e-16 * np.sin(1e3 * x)
    res = nm.bernstein_signs(x, y, 4)
    assert res.ok and res.skipped > 0


@given(st.floats(0.2, 3.0), st.floats(0.5, 5.0))
def test_aitken_recovers_limit_of_power_error(p, c):
    h = 1e-1 / 4.0 ** np.arange(9)
    vals = 1.0 + c * h ** p
    assert nm.aitken_limit(vals) == pytest.approx(1.0, abs=1e-8)

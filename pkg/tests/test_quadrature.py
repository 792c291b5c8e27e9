import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sint
from scipy import special

from polyens.proxy import ChebyshevProxy
from polyens.quadrature import DivergenceError, QuadratureError, integrate, integrate_scalar


@pytest.mark.parametrize("k", [0, 1, 2, 5, 9])
def test_gamma_moments(k):
    got = integrate_scalar(lambda x: x ** k * np.exp(-x), 0.0, math.inf, epsrel=1e-12)
    assert got == pytest.approx(math.factorial(k), rel=1e-11)


def test_gaussian_over_whole_line():
    got = integrate_scalar(lambda x: np.exp(-0.5 * x * x), -math.inf, math.inf, epsrel=1e-12)
    assert got == pytest.approx(math.sqrt(2 * math.pi), rel=1e-12)


def test_log_endpoint_singularity():
    got = integrate_scalar(np.log, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    assert got == pytest.approx(-1.0, abs=1e-11)


def test_reversed_limits_negate():
    fwd = integrate_scalar(np.sin, 0.0, 2.0)
    back = integrate_scalar(np.sin, 2.0, 0.0)
    assert back == pytest.approx(-fwd, rel=1e-14)


def test_batched_owners_are_independent():
    # ∫_0^b x^p dx = b^(p+1)/(p+1), one owner per (b, p)
    b = np.array([0.5, 1.0, 2.0, 3.0])
    p = np.array([0.0, 1.0, 2.0, 3.5])

    def f(x, owner):
        return x ** p[owner]

    res = integrate(f, 0.0, b, epsrel=1e-12)
    assert np.allclose(res.value, b ** (p + 1) / (p + 1), rtol=1e-11)
    assert res.converged.all()


def test_vector_integrand():
    def f(x, _owner):
        return np.stack([np.exp(-x), x * np.exp(-x), x * x * np.exp(-x)], axis=1)

    res = integrate(f, 0.0, math.inf, epsrel=1e-12)
    assert np.allclose(res.value[0], [1.0, 1.0, 2.0], rtol=1e-11)


def test_nonintegrable_raises():
    with pytest.raises(QuadratureError):
        integrate_scalar(lambda x: 1.0 / x, 0.0, 1.0, epsrel=1e-10)


def test_divergence_error_is_a_quadrature_error():
    assert issubclass(DivergenceError, QuadratureError)


def test_nan_limits_rejected():
    with pytest.raises(ValueError):
        integrate_scalar(np.exp, math.nan, 1.0)


@settings(max_examples=30, deadline=None)
@given(nu=st.floats(0.0, 4.0), y=st.floats(0.05, 8.0))
def test_bessel_integral_matches_scipy(nu, y):
    # ∫_0^∞ x^(nu-1) e^(-x - y/x) dx = 2 y^(nu/2) K_nu(2 sqrt(y))
    got = integrate_scalar(lambda x: x ** (nu - 1) * np.exp(-x - y / x), 0.0, math.inf,
                           epsabs=1e-300, epsrel=1e-11)
    want = 2 * y ** (nu / 2) * special.kv(nu, 2 * math.sqrt(y))
    assert got == pytest.approx(want, rel=1e-9)


def test_agrees_with_scipy_quad_on_kinked_integrand():
    f = lambda x: np.abs(np.sin(3 * x)) * np.exp(-x)  # noqa: E731
    got = integrate_scalar(f, 0.0, 10.0, epsrel=1e-11)
    want = sint.quad(f, 0.0, 10.0, points=[k * math.pi / 3 for k in range(1, 10)],
                     epsabs=1e-13, limit=200)[0]
    assert got == pytest.approx(want, rel=1e-9)


class TestProxy:
    def test_matches_exact_function(self):
        f = lambda x: special.kv(0, 2 * np.sqrt(np.maximum(x, 1e-300))) * 2  # noqa: E731
        p = ChebyshevProxy(f, (0.0, math.inf), scale=1.0)
        x = np.geomspace(1e-3, 20.0, 200)
        assert np.allclose(p(x), f(x), rtol=1e-10, atol=0)

    def test_zero_beyond_cut(self):
        p = ChebyshevProxy(lambda x: np.exp(-x), (0.0, math.inf))
        assert math.isfinite(p.hi)
        assert np.exp(-p.hi) < 1e-17
        assert p(p.hi + 1.0) == 0.0

    def test_gaussian_tails_relative_accuracy(self):
        f = lambda x: np.exp(-0.5 * x * x)  # noqa: E731
        p = ChebyshevProxy(f, (-math.inf, math.inf))
        x = np.linspace(-8, 8, 321)
        assert np.allclose(p(x), f(x), rtol=1e-9, atol=0)

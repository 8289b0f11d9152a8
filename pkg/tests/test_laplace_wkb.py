import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from mwl.laplace_wkb import (
    FlowLineProblem, LaplaceProblem, NotAMinimumError, I_operator, elementary_bump, elementary_bump_mu0, fiber_laplace,
    laplace_error_slope, laplace_expand, psi_E_gradient_defect, taylor, transport_leading, transport_iterate,
    transport_operator, transport_order_slope,
)

quartic = lambda x: x**2 / 2 + x**4 / 4
one = lambda x: 1 + 0 * x


def test_taylor_of_exp():
    c = taylor(np.exp, 0.0, 8)
    assert np.allclose(c, [1 / math.factorial(j) for j in range(9)], atol=1e-13)


@pytest.mark.parametrize("hbar", [0.2, 0.05])
def test_gaussian_exact(hbar):
    r = laplace_expand(LaplaceProblem(lambda x: x**2 / 2, one, 1, hbar))
    assert r.expansion == pytest.approx(math.sqrt(2 * math.pi * hbar), rel=1e-12)
    assert abs(r.error) < 1e-10 * r.quadrature


def test_x2_moment():
    hb = 0.1
    r = laplace_expand(LaplaceProblem(lambda x: x**2 / 2, lambda x: x**2, 2, hb))
    assert r.expansion == pytest.approx(math.sqrt(2 * math.pi * hb) * hb, rel=1e-12)
    assert abs(r.error) < 1e-10 * r.quadrature


def test_quartic_series_coefficients():
    hb = 1.0
    r = laplace_expand(LaplaceProblem(quartic, one, 4, hb))
    base = math.sqrt(2 * math.pi)
    assert np.allclose(np.array(r.terms) / base, [1.0, -3 / 4, 105 / 32, -3465 / 128], rtol=1e-9)


@given(st.floats(0.5, 3.0), st.floats(-1.0, 1.0))
@settings(max_examples=20, deadline=None)
def test_shifted_gaussian_value(a, c):
    # φ = a x²/2 + c has leading term √(2πℏ/a) e^{-c/ℏ}
    hb = 0.05
    r = laplace_expand(LaplaceProblem(lambda x: a * x**2 / 2 + c, one, 1, hb))
    assert r.expansion == pytest.approx(math.sqrt(2 * math.pi * hb / a) * math.exp(-c / hb), rel=1e-10)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_error_slopes(N):
    s = laplace_error_slope(quartic, one, N, [0.02, 0.01, 0.005])
    assert abs(s - (N + 0.5)) < 0.2


def test_fiber_leading():
    hb = 0.01
    r = fiber_laplace(lambda x: 2 * x**2, one, 0.0, hb, (-2.0, 2.0))
    assert r["hessian"] == pytest.approx(4.0)
    assert r["leading"] == pytest.approx(math.sqrt(2 * math.pi * hb) / 2, rel=1e-12)
    assert abs(r["error"]) / r["quadrature"] < 1e-10


def test_not_a_minimum():
    with pytest.raises(NotAMinimumError):
        laplace_expand(LaplaceProblem(lambda x: x**2 / 2 + x, one, 1, 0.1))
    with pytest.raises(NotAMinimumError):
        laplace_expand(LaplaceProblem(lambda x: -(x**2), one, 1, 0.1))
    with pytest.raises(NotAMinimumError):
        fiber_laplace(lambda x: x**4, one, 0.0, 0.1, (-1.0, 1.0))


def test_I_operator_solves_transport():
    t = np.linspace(0, 4, 4001)
    M = np.cos(t)
    fp = FlowLineProblem(t, t.copy(), np.zeros_like(t), np.zeros_like(t), np.zeros_like(t), psi_E=np.zeros_like(t), M=M)
    phi = np.exp(-((t - 2) ** 2) / 0.05)
    I, flags = I_operator(fp, phi)
    assert not flags
    assert np.abs(transport_operator(fp, I) - 2 * phi)[8:-8].max() < 1e-6
    # independent oracle: I(t) = e^{E(t)/2} ∫ e^{-E/2} φ with E = sin t
    k = 2500
    ref = math.exp(math.sin(t[k]) / 2) * quad(lambda r: math.exp(-math.sin(r) / 2 - (r - 2) ** 2 / 0.05), 0, t[k], epsabs=1e-14)[0]
    assert I[k] == pytest.approx(ref, rel=1e-7)


def test_bump_leading_closed_form():
    hb = 0.1
    fp = elementary_bump(hb)
    r = transport_leading(fp, hb)
    ref = elementary_bump_mu0(fp, hb)
    assert np.abs(r.mu - ref).max() / np.abs(ref).max() < 1e-8
    assert r.residual < 1e-6


def test_iterate_residual():
    hb = 0.1
    fp = elementary_bump(hb)
    r0 = transport_leading(fp, hb)
    r1 = transport_iterate(fp, r0.mu, hb)
    assert r1.residual < 1e-6
    assert np.linalg.norm(r1.mu) < np.linalg.norm(r0.mu)


def test_order_slope():
    out = transport_order_slope(elementary_bump, [0.2, 0.1, 0.05, 0.025])
    assert out["slope"] == pytest.approx(1.0, abs=0.3)
    assert out["max_residual"] < 1e-6


def test_psi_E_defect():
    t = np.linspace(0.4, 2.7, 2001)
    zero = np.zeros_like(t)
    fp = FlowLineProblem(t, t.copy(), np.cos(t), zero + 1.0, zero)
    assert psi_E_gradient_defect(fp) < 1e-8


def test_flow_line_validation():
    t = np.array([0.0, 0.1, 0.3] + list(np.linspace(0.4, 2, 20)))
    z = np.zeros_like(t)
    with pytest.raises(ValueError):
        FlowLineProblem(t, t, z, z, z)

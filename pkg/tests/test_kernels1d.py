import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from kimura_mixed.kernels1d import (
    KimuraKernel1D,
    LogGaussianKernel1D,
    gaussian_density,
    gaussian_deriv,
    kimura_atom,
    kimura_cdf,
    kimura_density,
    kimura_density_bessel_form,
    kimura_deriv,
    kimura_mass,
    loggaussian_density,
    loggaussian_deriv,
)


def ncx2_density(d, t, x, xp):
    """Independent oracle: scale t/2 times a noncentral chi-square, dof 2d, noncentrality 2x/t."""
    scale = t / 2
    if x == 0:
        return stats.chi2.pdf(xp / scale, 2 * d) / scale
    return stats.ncx2.pdf(xp / scale, 2 * d, 2 * x / t) / scale


@pytest.mark.parametrize("t, d", [(0.0, 1.0), (-1.0, 1.0), (1.0, -0.1), (math.nan, 1.0)])
def test_kernel_parameters_validated(t, d):
    with pytest.raises(ValueError):
        KimuraKernel1D(d=d, t=t)


def test_loggaussian_parameters_validated():
    with pytest.raises(ValueError):
        LogGaussianKernel1D(b=0.0, t=1.0)
    with pytest.raises(ValueError):
        LogGaussianKernel1D(b=1.0, t=0.0)


def test_density_examples():
    assert float(kimura_density(KimuraKernel1D(1.0, 1.0), 0.0, 2.0)) == pytest.approx(0.1353352832366127, rel=1e-12)
    assert float(kimura_density(KimuraKernel1D(0.0, 1.0), 0.0, 1.0)) == 0.0
    expected = ncx2_density(0.5, 0.5, 1.0, 1.0)
    assert float(kimura_density(KimuraKernel1D(0.5, 0.5), 1.0, 1.0)) == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("d", [0.1, 0.5, 1.0, 1.7, 3.0])
@pytest.mark.parametrize("t", [0.01, 0.3, 2.0])
def test_density_matches_noncentral_chi2(d, t):
    for x in (0.0, 0.05, 0.7, 2.5):
        for xp in (0.02, 0.4, 1.1, 3.0):
            ref = ncx2_density(d, t, x, xp)
            got = float(kimura_density(KimuraKernel1D(d, t), x, xp))
            if ref > 1e-250:
                assert got == pytest.approx(ref, rel=1e-8)


def test_small_time_no_underflow():
    # far off-diagonal the density is astronomically small but its log stays finite
    from kimura_mixed.kernels1d import kimura_log_density

    v = kimura_log_density(KimuraKernel1D(1.0, 1e-4), 0.5, 2.0)
    assert np.isfinite(v) and v < -1000


@pytest.mark.parametrize("x", [0.05, 0.6, 3.0])
@pytest.mark.parametrize("t", [0.05, 1.0])
def test_zero_drift_forms_agree(x, t):
    k = KimuraKernel1D(0.0, t)
    xp = np.array([0.01, 0.3, 1.0, 4.0])
    np.testing.assert_allclose(kimura_density(k, x, xp), kimura_density_bessel_form(k, x, xp), rtol=1e-11)


def test_bessel_form_general_d():
    k = KimuraKernel1D(1.4, 0.3)
    xp = np.linspace(0.05, 3, 13)
    np.testing.assert_allclose(kimura_density(k, 0.8, xp), kimura_density_bessel_form(k, 0.8, xp), rtol=1e-11)


def test_atom():
    assert float(kimura_atom(KimuraKernel1D(0.0, 1.0), 0.0)) == 1.0
    assert float(kimura_atom(KimuraKernel1D(0.0, 1.0), 1.0)) == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert float(kimura_atom(KimuraKernel1D(0.0, 1e12), 1.0)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        kimura_atom(KimuraKernel1D(0.5, 1.0), 1.0)


@pytest.mark.parametrize("d", [0.0, 0.25, 0.5, 1.0, 2.5])
@pytest.mark.parametrize("t", [0.1, 1.0])
@pytest.mark.parametrize("x", [0.0, 0.3, 2.0])
def test_normalization(d, t, x):
    assert kimura_mass(KimuraKernel1D(d, t), x) == pytest.approx(1.0, abs=1e-6)


def test_cdf_matches_oracle():
    k = KimuraKernel1D(0.5, 0.5)
    for up in (0.2, 1.0, 3.0):
        ref = stats.ncx2.cdf(up / 0.25, 1.0, 4.0)
        assert kimura_cdf(k, 1.0, up) == pytest.approx(ref, abs=1e-9)


def _ck_lhs(d, t, s, x, y):
    k1, k2 = KimuraKernel1D(d, t), KimuraKernel1D(d, s)

    def f(r):
        z = r * r
        return 2 * r * float(kimura_density(k1, x, z) * kimura_density(k2, z, y))

    hi = math.sqrt(x) + math.sqrt(y) + 12 * math.sqrt(max(t, s)) + 3
    pts = sorted({math.sqrt(x), math.sqrt(y)})
    val = integrate.quad(f, 1e-300, hi, points=pts, epsabs=1e-13, epsrel=1e-11, limit=400)[0]
    if d == 0:
        # atom of the first step, then the continuous part from 0 (which is zero for d = 0)
        val += float(kimura_atom(k1, x)) * float(kimura_density(k2, 0.0, y))
    return val


@pytest.mark.parametrize("d", [0.0, 0.3, 1.0, 2.0])
@pytest.mark.parametrize("x, y", [(0.0, 0.5), (0.4, 0.4), (1.5, 0.2)])
def test_chapman_kolmogorov(d, x, y):
    t, s = 0.3, 0.5
    if d == 0 and x == 0:
        return
    lhs = _ck_lhs(d, t, s, x, y)
    rhs = float(kimura_density(KimuraKernel1D(d, t + s), x, y))
    assert lhs == pytest.approx(rhs, rel=1e-4)


def test_chapman_kolmogorov_atom():
    t, s, x = 0.3, 0.5, 0.7
    k1, k2 = KimuraKernel1D(0.0, t), KimuraKernel1D(0.0, s)

    def f(r):
        z = r * r
        return 2 * r * float(kimura_density(k1, x, z)) * float(kimura_atom(k2, z))

    val = float(kimura_atom(k1, x)) + integrate.quad(f, 0, 10, epsabs=1e-13)[0]
    assert val == pytest.approx(float(kimura_atom(KimuraKernel1D(0.0, t + s), x)), rel=1e-8)


@pytest.mark.parametrize("which", ["dx", "sqrtx_dx", "x_dxx", "dxx"])
@pytest.mark.parametrize("d", [0.0, 0.3, 1.0, 2.5])
def test_source_derivatives_vs_finite_differences(which, d):
    k = KimuraKernel1D(d, 0.6)
    xp = 0.9
    h = 1e-4
    for x in (0.2, 0.7, 1.6):
        f = lambda u: float(kimura_density(k, u, xp))
        d1 = (f(x + h) - f(x - h)) / (2 * h)
        d2 = (f(x + h) - 2 * f(x) + f(x - h)) / h**2
        ref = {"dx": d1, "sqrtx_dx": math.sqrt(x) * d1, "dxx": d2, "x_dxx": x * d2}[which]
        got = float(kimura_deriv(k, x, xp, which))
        assert got == pytest.approx(ref, rel=2e-5, abs=1e-9)


def test_dx_example_at_boundary():
    k = KimuraKernel1D(1.0, 1.0)
    h = 1e-5
    # one-sided second-order difference at x = 0
    f = lambda u: float(kimura_density(k, u, 2.0))
    fd = (-3 * f(0) + 4 * f(h) - f(2 * h)) / (2 * h)
    assert float(kimura_deriv(k, 0.0, 2.0, "dx")) == pytest.approx(fd, rel=1e-6)


def test_derivative_degenerate_cases():
    k = KimuraKernel1D(0.7, 0.4)
    xp = np.array([0.1, 0.5, 2.0])
    np.testing.assert_allclose(kimura_deriv(k, 0.3, xp, "ydy", k=0), kimura_density(k, 0.3, xp), rtol=1e-14)
    np.testing.assert_array_equal(kimura_deriv(k, 0.0, xp, "x_dxx"), 0.0)
    with pytest.raises(ValueError):
        kimura_deriv(k, 0.3, 0.5, "dy")


@pytest.mark.parametrize("d", [0.0, 0.4, 1.0, 2.0])
@pytest.mark.parametrize("kpow", [1, 2, 3])
def test_ydy_vs_finite_differences(d, kpow):
    k = KimuraKernel1D(d, 0.5)
    x = 0.6
    h = 2e-3
    f = lambda s: float(kimura_density(k, x, math.exp(s)))
    s0 = math.log(0.8)
    stencils = {
        1: ([-0.5, 0, 0.5], [-1, 0, 1], 1),
        2: ([1, -2, 1], [-1, 0, 1], 2),
        3: ([-0.5, 1, 0, -1, 0.5], [-2, -1, 0, 1, 2], 3),
    }
    w, off, p = stencils[kpow]
    ref = sum(wi * f(s0 + o * h) for wi, o in zip(w, off)) / h**p
    got = float(kimura_deriv(k, x, 0.8, "ydy", k=kpow))
    assert got == pytest.approx(ref, rel=5e-4, abs=1e-8)


def _pde_residual_kimura(d, t, h):
    xs = np.array([0.3, 0.8, 1.5])
    xp = 0.7
    p = lambda tt, x: kimura_density(KimuraKernel1D(d, tt), x, xp)
    dt = (p(t + h, xs) - p(t - h, xs)) / (2 * h)
    dx = (p(t, xs + h) - p(t, xs - h)) / (2 * h)
    dxx = (p(t, xs + h) - 2 * p(t, xs) + p(t, xs - h)) / h**2
    return np.max(np.abs(dt - xs * dxx - d * dx))


@pytest.mark.parametrize("d", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("t", [0.1, 1.0])
def test_kimura_pde_residual_second_order(d, t):
    r1 = _pde_residual_kimura(d, t, 0.02)
    r2 = _pde_residual_kimura(d, t, 0.01)
    assert math.log2(r1 / r2) == pytest.approx(2.0, abs=0.3)


def test_loggaussian_pde_residual_second_order():
    b, t, yp = 0.7, 0.4, 1.3
    ys = np.array([0.5, 1.0, 2.0])

    def res(h):
        k = lambda tt, y: loggaussian_density(LogGaussianKernel1D(b, tt), y, yp)
        dt = (k(t + h, ys) - k(t - h, ys)) / (2 * h)
        d1 = (k(t, ys + h) - k(t, ys - h)) / (2 * h)
        d2 = (k(t, ys + h) - 2 * k(t, ys) + k(t, ys - h)) / h**2
        return np.max(np.abs(dt - b * (ys**2 * d2 + ys * d1)))

    assert math.log2(res(0.02) / res(0.01)) == pytest.approx(2.0, abs=0.3)


def test_gaussian_pde_residual_second_order():
    t, yp, e = 0.3, 0.2, 0.8
    ys = np.array([-0.4, 0.1, 0.6])

    def res(h):
        g = lambda tt, y: gaussian_density(e, tt, y, yp)
        dt = (g(t + h, ys) - g(t - h, ys)) / (2 * h)
        d1 = (g(t, ys + h) - g(t, ys - h)) / (2 * h)
        d2 = (g(t, ys + h) - 2 * g(t, ys) + g(t, ys - h)) / h**2
        return np.max(np.abs(dt - d2 - e * d1))

    assert math.log2(res(0.02) / res(0.01)) == pytest.approx(2.0, abs=0.3)


def test_gaussian_examples():
    assert float(gaussian_density(0, 1, 0, 0)) == pytest.approx(0.28209479177387814, rel=1e-14)
    assert float(gaussian_density(0, 0.25, 1, 0)) == pytest.approx(math.exp(-1) / math.sqrt(math.pi), rel=1e-14)
    mass = integrate.quad(lambda v: float(gaussian_density(0.0, 0.37, 0.2, v)), -np.inf, np.inf, epsabs=1e-13)[0]
    assert mass == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        gaussian_density(0, 0, 0, 0)


def test_gaussian_derivatives():
    h = 1e-4
    f = lambda y: float(gaussian_density(0.3, 0.5, y, 0.4))
    assert float(gaussian_deriv(0.3, 0.5, 0.1, 0.4, 1)) == pytest.approx((f(0.1 + h) - f(0.1 - h)) / (2 * h), rel=1e-7)
    assert float(gaussian_deriv(0.3, 0.5, 0.1, 0.4, 2)) == pytest.approx(
        (f(0.1 + h) - 2 * f(0.1) + f(0.1 - h)) / h**2, rel=1e-5
    )


def test_loggaussian_examples():
    k = LogGaussianKernel1D(1.0, 1.0)
    assert float(loggaussian_density(k, 1.0, 1.0)) == pytest.approx(0.28209479177387814, rel=1e-14)
    assert float(loggaussian_density(k, math.e, 1.0)) == pytest.approx(0.28209479177387814 * math.exp(-0.25), rel=1e-14)
    with pytest.raises(ValueError):
        loggaussian_density(k, 0.0, 1.0)
    with pytest.raises(ValueError):
        loggaussian_density(k, 1.0, -1.0)


@pytest.mark.parametrize("b, t, y", [(1.0, 1.0, 1.0), (0.3, 0.05, 4.0), (2.0, 0.7, 0.01)])
def test_loggaussian_mass(b, t, y):
    k = LogGaussianKernel1D(b, t)
    c, w = math.log(y), 40 * math.sqrt(b * t)
    mass = integrate.quad(lambda s: float(loggaussian_density(k, y, math.exp(s))) * math.exp(s), c - w, c + w, points=[c], epsabs=1e-12)[0]
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_loggaussian_derivatives():
    k = LogGaussianKernel1D(0.6, 0.3)
    f = lambda y: float(loggaussian_density(k, y, 1.7))
    y, h = 1.2, 1e-4
    d1 = (f(y + h) - f(y - h)) / (2 * h)
    d2 = (f(y + h) - 2 * f(y) + f(y - h)) / h**2
    assert float(loggaussian_deriv(k, y, 1.7, "ydy")) == pytest.approx(y * d1, rel=1e-7)
    assert float(loggaussian_deriv(k, y, 1.7, "yydyy")) == pytest.approx(y * y * d2, rel=1e-5)


@given(lam=st.floats(0.05, 20.0))
@settings(max_examples=40, deadline=None)
def test_loggaussian_scale_invariance(lam):
    # transition measure of an interval is invariant under y -> lam*y
    k = LogGaussianKernel1D(0.8, 0.5)
    m1 = integrate.quad(lambda v: float(loggaussian_density(k, 1.0, v)), 0.5, 2.0)[0]
    m2 = integrate.quad(lambda v: float(loggaussian_density(k, lam, v)), 0.5 * lam, 2.0 * lam)[0]
    assert m1 == pytest.approx(m2, rel=1e-8)


@pytest.mark.parametrize("d", [0.3, 1.0, 2.0])
def test_off_diagonal_decay(d):
    # |sqrt x - sqrt x'| >= 0.5: value times e^{c/t} stays bounded as t -> 0
    x, xp = 0.04, 0.81
    sep = (math.sqrt(xp) - math.sqrt(x)) ** 2
    c = 0.5 * sep
    ts = [0.1, 0.05, 0.01]
    scaled = [
        max(abs(float(kimura_density(KimuraKernel1D(d, t), x, xp))), abs(float(kimura_deriv(KimuraKernel1D(d, t), x, xp, "dx"))))
        * math.exp(c / t)
        for t in ts
    ]
    assert scaled[-1] <= scaled[0] * 1.01 or scaled[-1] < 1.0

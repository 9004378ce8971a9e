import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kimura_mixed.specfun import (
    PsiEvalRegime,
    bessel_i,
    ln_gamma,
    ln_psi_d,
    psi_d,
    psi_d_bessel,
    psi_d_deriv,
    psi_d_series,
)


@pytest.mark.parametrize(
    "x, expected",
    [(1.0, 0.0), (0.5, 0.5723649429247001), (5.0, 3.1780538303479458)],
)
def test_ln_gamma_values(x, expected):
    assert ln_gamma(x) == pytest.approx(expected, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("x", [0.0, -1.0, -0.5])
def test_ln_gamma_domain(x):
    with pytest.raises(ValueError):
        ln_gamma(x)


def test_regime_validates_threshold():
    with pytest.raises(ValueError):
        PsiEvalRegime(0.0)
    with pytest.raises(ValueError):
        PsiEvalRegime(-3.0)


@pytest.mark.parametrize(
    "d, z, expected",
    [
        (1.0, 0.0, 1.0),
        (0.0, 0.0, 0.0),
        # frozen from mpmath besseli(1, 2)
        (2.0, 1.0, 1.590636854637329),
    ],
)
def test_psi_values(d, z, expected):
    assert float(psi_d(d, z)) == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_psi_deriv_values():
    assert float(psi_d_deriv(1.0, 0.0, 1)) == pytest.approx(1.0)
    # frozen from mpmath 1/gamma(2.5)
    assert float(psi_d_deriv(0.5, 0.0, 2)) == pytest.approx(0.7522527780636750, rel=1e-12)
    z = np.linspace(0, 50, 11)
    np.testing.assert_array_equal(psi_d_deriv(1.3, z, 0), psi_d(1.3, z))
    with pytest.raises(ValueError):
        psi_d_deriv(1.0, 1.0, 7)


def test_psi_zero_order_identity():
    z = np.linspace(0, 80, 41)
    np.testing.assert_allclose(psi_d(0.0, z), z * psi_d(2.0, z), rtol=1e-13)


@pytest.mark.parametrize("d", [0.0, 0.05, 0.25, 0.5, 1.0, 1.75, 2.5, 3.0])
def test_series_bessel_overlap(d):
    regime = PsiEvalRegime()
    z = np.linspace(regime.threshold_z / 2, 2 * regime.threshold_z, 60)
    np.testing.assert_allclose(psi_d_series(d, z), psi_d_bessel(d, z), rtol=1e-10)


def test_large_argument_matches_asymptotics():
    # leading behaviour z^{1/4 - d/2} e^{2 sqrt z} / sqrt(4 pi)
    z = 1e6
    for d in (0.0, 0.5, 2.0):
        lead = (0.25 - d / 2) * math.log(z) + 2 * math.sqrt(z) - 0.5 * math.log(4 * math.pi)
        assert float(ln_psi_d(d, z)) == pytest.approx(lead, rel=1e-6)


def test_ln_psi_zero():
    assert float(ln_psi_d(0.0, 0.0)) == -math.inf
    assert float(ln_psi_d(1.0, 1e4)) > 100


@given(d=st.floats(0, 3), z1=st.floats(0, 200), z2=st.floats(0, 200))
@settings(max_examples=200, deadline=None)
def test_psi_monotone(d, z1, z2):
    lo, hi = sorted((z1, z2))
    assert psi_d(d, lo) <= psi_d(d, hi) * (1 + 1e-12)


@pytest.mark.parametrize("d", [0.0, 0.3, 1.0, 2.2])
@pytest.mark.parametrize("z", [0.5, 4.0, 29.99, 45.0, 150.0])
def test_psi_finite_difference(d, z):
    errs = []
    for h in (1e-3, 5e-4):
        fd = (psi_d(d, z + h) - psi_d(d, z - h)) / (2 * h)
        errs.append(abs(fd / psi_d_deriv(d, z, 1) - 1))
    # second-order convergence, unless already at roundoff
    assert errs[1] < 1e-7 or errs[1] < 0.3 * errs[0]
    assert errs[1] < 1e-6


def test_bessel_special_values():
    assert float(bessel_i(0, 0.0)) == 1.0
    assert float(bessel_i(1, 0.0)) == 0.0
    assert float(bessel_i(-1, 2.0)) == float(bessel_i(1, 2.0))
    # frozen from mpmath besseli
    assert float(bessel_i(0.5, 3.0)) == pytest.approx(4.614822903407601, rel=1e-12)
    assert float(bessel_i(2.5, 3.0)) == pytest.approx(1.515339446681965, rel=1e-12)


def test_bessel_scaled_no_overflow():
    v = bessel_i(0.7, np.array([60.0, 800.0, 1e5]), scaled=True)
    assert np.all(np.isfinite(v)) and np.all(v > 0)
    assert float(bessel_i(0.7, 10.0, scaled=True)) == pytest.approx(
        float(bessel_i(0.7, 10.0)) * math.exp(-10.0), rel=1e-13
    )


def test_bessel_domain():
    with pytest.raises(ValueError):
        bessel_i(0.0, -1.0)
    with pytest.raises(ValueError):
        bessel_i(-1.5, 1.0)


@given(nu=st.floats(0.05, 4.0), x=st.floats(0.05, 60.0))
@settings(max_examples=300, deadline=None)
def test_bessel_recurrence(nu, x):
    lhs = bessel_i(nu - 1, x, scaled=True) - bessel_i(nu + 1, x, scaled=True)
    rhs = 2 * nu / x * bessel_i(nu, x, scaled=True)
    assert lhs == pytest.approx(rhs, rel=1e-9)

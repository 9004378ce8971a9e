"""Special functions behind the Kimura kernels.

The workhorse is the entire function

    psi_d(z) = sum_{k>=0} z**k / (k! * Gamma(d + k)) = z**((1 - d)/2) * I_{d-1}(2 sqrt(z)),

evaluated by its power series for moderate ``z`` and through the exponentially
scaled Bessel function above a switch point.  Everything is vectorised over
``z``; the order ``d`` is a scalar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "PsiEvalRegime",
    "DEFAULT_REGIME",
    "ln_gamma",
    "rgamma",
    "bessel_i",
    "psi_d",
    "ln_psi_d",
    "psi_d_deriv",
    "psi_d_series",
    "psi_d_bessel",
]

_SERIES_MAX_TERMS = 400
_SERIES_RTOL = 1e-17


@dataclass(frozen=True)
class PsiEvalRegime:
    """Switch point between the power series and the scaled-Bessel evaluation.

    Parameters:
        threshold_z: arguments ``z <= threshold_z`` use the series, larger ones the
            Bessel representation.
    """

    threshold_z: float = 30.0

    def __post_init__(self):
        if not (self.threshold_z > 0 and math.isfinite(self.threshold_z)):
            raise ValueError(f"threshold_z must be a positive finite number, got {self.threshold_z}")


DEFAULT_REGIME = PsiEvalRegime()


def ln_gamma(x: float) -> float:
    """Natural log of the Gamma function for positive ``x``.

    Raises:
        ValueError: if ``x <= 0``.
    """
    x = float(x)
    if not x > 0:
        raise ValueError(f"ln_gamma needs x > 0, got {x}")
    return math.lgamma(x)


def rgamma(x: float) -> float:
    """1/Gamma(x) with the convention 1/Gamma(0) = 0."""
    return float(special.rgamma(x))


def _check_order(d: float) -> float:
    d = float(d)
    if not d >= 0 or not math.isfinite(d):
        raise ValueError(f"order d must be finite and >= 0, got {d}")
    return d


def _check_arg(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(np.isnan(z)):
        raise ValueError("argument z must be >= 0")
    return z


def psi_d_series(d: float, z) -> np.ndarray:
    """Power series of psi_d, summed until the terms drop below 1e-17 of the total."""
    d = _check_order(d)
    z = _check_arg(z)
    if d == 0.0:
        # psi_0(z) = z * psi_2(z); the k = 0 term carries 1/Gamma(0) = 0
        return z * psi_d_series(2.0, z)
    # start at k = 1 so the recurrence never divides by a tiny d
    term = z * special.rgamma(d + 1.0)
    total = special.rgamma(d) + term
    for k in range(2, _SERIES_MAX_TERMS):
        term = term * z / (k * (d + k - 1))
        total = total + term
        if np.all(term <= _SERIES_RTOL * total):
            break
    return total


def _ln_psi_bessel(d: float, z: np.ndarray) -> np.ndarray:
    s = 2.0 * np.sqrt(z)
    with np.errstate(divide="ignore"):
        return 0.5 * (1.0 - d) * np.log(z) + np.log(special.ive(d - 1.0, s)) + s


def psi_d_bessel(d: float, z) -> np.ndarray:
    """psi_d through the scaled modified Bessel function (valid for z > 0)."""
    d = _check_order(d)
    z = _check_arg(z)
    if np.any(z == 0):
        raise ValueError("the Bessel form of psi_d needs z > 0")
    return np.exp(_ln_psi_bessel(d, z))


def ln_psi_d(d: float, z, regime: PsiEvalRegime = DEFAULT_REGIME) -> np.ndarray:
    """Natural log of psi_d(z); returns -inf where psi_d vanishes (d = 0, z = 0)."""
    d = _check_order(d)
    z = _check_arg(z)
    out = np.empty(z.shape)
    small = z <= regime.threshold_z
    if np.any(small):
        with np.errstate(divide="ignore"):
            out[small] = np.log(psi_d_series(d, z[small]))
    if np.any(~small):
        out[~small] = _ln_psi_bessel(d, z[~small])
    return out if out.ndim else out[()]


def psi_d(d: float, z, regime: PsiEvalRegime = DEFAULT_REGIME) -> np.ndarray:
    """The entire function psi_d(z) = sum z^k / (k! Gamma(d+k)).

    Examples:
        >>> float(psi_d(1.0, 0.0))
        1.0
    """
    d = _check_order(d)
    z = _check_arg(z)
    out = np.empty(z.shape)
    small = z <= regime.threshold_z
    if np.any(small):
        out[small] = psi_d_series(d, z[small])
    if np.any(~small):
        out[~small] = np.exp(_ln_psi_bessel(d, z[~small]))
    return out if out.ndim else out[()]


def psi_d_deriv(d: float, z, k: int, regime: PsiEvalRegime = DEFAULT_REGIME) -> np.ndarray:
    """k-th derivative of psi_d, which equals psi_{d+k}."""
    if int(k) != k or not 0 <= k <= 6:
        raise ValueError(f"derivative order must be an integer in [0, 6], got {k}")
    return psi_d(d + int(k), z, regime)


def bessel_i(nu: float, z, scaled: bool = False, regime: PsiEvalRegime = DEFAULT_REGIME) -> np.ndarray:
    """Modified Bessel function of the first kind for real order ``nu >= -1``.

    Small arguments go through I_nu(z) = (z/2)^nu psi_{nu+1}(z^2/4); large ones
    through ``scipy.special.ive``.  With ``scaled`` the result is e^{-z} I_nu(z).
    """
    nu = float(nu)
    if not nu >= -1:
        raise ValueError(f"order must be >= -1, got {nu}")
    if nu == -1.0:
        nu = 1.0
    z = _check_arg(z)
    out = np.empty(z.shape)
    w = 0.25 * z * z
    small = w <= regime.threshold_z
    if np.any(small):
        zs = z[small]
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (0.5 * zs) ** nu * psi_d_series(nu + 1.0, w[small])
        if nu == 0.0:
            val = np.where(zs == 0, 1.0, val)
        elif nu > 0:
            val = np.where(zs == 0, 0.0, val)
        else:
            val = np.where(zs == 0, np.inf, val)
        out[small] = val * np.exp(-zs) if scaled else val
    if np.any(~small):
        zl = z[~small]
        val = special.ive(nu, zl)
        out[~small] = val if scaled else val * np.exp(zl)
    return out if out.ndim else out[()]

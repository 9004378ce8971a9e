"""One-dimensional building-block transition densities.

Three families appear as factors of every model kernel:

* the Kimura (squared-Bessel type) density p^d_t(x, x') of x d^2/dx^2 + d d/dx,
  with an atom e^{-x/t} at the origin when d = 0;
* the Gaussian heat kernel of d^2/dy^2, optionally shifted by a constant drift;
* the log-Gaussian density of b (y^2 d^2/dy^2 + y d/dy) on (0, inf).

Densities are assembled in log space so that small times do not underflow.
Writing w = x'/t, lam = x/t and z = lam*w, the Kimura density is

    p = (1/t) w^(d-1) exp(-lam - w) psi_d(z),

which covers d = 0 as well because psi_0(z) = z psi_2(z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .specfun import bessel_i, ln_psi_d

__all__ = [
    "KimuraKernel1D",
    "LogGaussianKernel1D",
    "kimura_log_density",
    "kimura_density",
    "kimura_density_bessel_form",
    "kimura_atom",
    "kimura_deriv",
    "kimura_mass",
    "kimura_cdf",
    "gaussian_density",
    "gaussian_deriv",
    "loggaussian_log_density",
    "loggaussian_density",
    "loggaussian_deriv",
    "DERIV_KINDS",
]

DERIV_KINDS = ("dx", "sqrtx_dx", "x_dxx", "dxx", "ydy")


@dataclass(frozen=True)
class KimuraKernel1D:
    """Parameters of the density of x d^2/dx^2 + d d/dx at time t.

    Parameters:
        d: drift weight, d >= 0.  d = 0 gives an atom at the origin.
        t: elapsed time, t > 0.
    """

    d: float
    t: float

    def __post_init__(self):
        if not (self.t > 0 and math.isfinite(self.t)):
            raise ValueError(f"time must be positive, got t={self.t}")
        if not (self.d >= 0 and math.isfinite(self.d)):
            raise ValueError(f"drift weight must be >= 0, got d={self.d}")

    @property
    def has_atom(self) -> bool:
        return self.d == 0.0


@dataclass(frozen=True)
class LogGaussianKernel1D:
    """Density of b (y^2 d^2/dy^2 + y d/dy) at time t; log y performs Brownian motion."""

    b: float
    t: float

    def __post_init__(self):
        if not (self.t > 0 and math.isfinite(self.t)):
            raise ValueError(f"time must be positive, got t={self.t}")
        if not (self.b > 0 and math.isfinite(self.b)):
            raise ValueError(f"diffusion coefficient must be positive, got b={self.b}")


def _safe_log(v):
    with np.errstate(divide="ignore"):
        return np.log(v)


def _xlogy(b, logz):
    # b*log(z) with 0*log(0) = 0
    if b == 0:
        return np.zeros_like(logz)
    return b * logz


def _check_points(x, xp):
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if np.any(x < 0):
        raise ValueError("source x must be >= 0")
    if np.any(xp <= 0):
        raise ValueError("destination x' must be > 0 (the atom is queried separately)")
    return np.broadcast_arrays(x, xp)


def _terms_log_sum(kernel, x, xp, terms, extra_log=0.0):
    """Evaluate sum coef * w^a z^b psi_{d+j}(z) times the common density factor.

    ``terms`` is a mapping (a, b, j) -> coef.  Returns (log|value|, sign).
    """
    d, t = kernel.d, kernel.t
    x, xp = _check_points(x, xp)
    lam = x / t
    w = xp / t
    z = lam * w
    logw = np.log(w)
    logz = _safe_log(z)
    base = -math.log(t) + (d - 1.0) * logw - lam - w + extra_log
    logs, signs = [], []
    psi_cache = {}
    for (a, b, j), coef in terms.items():
        if coef == 0:
            continue
        if j not in psi_cache:
            psi_cache[j] = ln_psi_d(d + j, z.ravel()).reshape(z.shape)
        logs.append(base + a * logw + _xlogy(b, logz) + psi_cache[j] + math.log(abs(coef)))
        signs.append(np.full(z.shape, math.copysign(1.0, coef)))
    if not logs:
        return np.full(x.shape, -np.inf), np.zeros(x.shape)
    logs = np.stack(logs)
    signs = np.stack(signs)
    finite = np.isfinite(logs)
    if not np.all(finite):
        signs = np.where(finite, signs, 0.0)
        logs = np.where(finite, logs, 0.0)
    with np.errstate(divide="ignore"):
        val, sgn = special.logsumexp(logs, b=signs, axis=0, return_sign=True)
    return val, sgn


def kimura_log_density(kernel: KimuraKernel1D, x, xp) -> np.ndarray:
    """log of the continuous part of p^d_t(x, x'); -inf where it vanishes."""
    val, _ = _terms_log_sum(kernel, x, xp, {(0, 0, 0): 1.0})
    return val


def kimura_density(kernel: KimuraKernel1D, x, xp) -> np.ndarray:
    """Continuous part of the Kimura density p^d_t(x, x') for x' > 0.

    Examples:
        >>> round(float(kimura_density(KimuraKernel1D(1.0, 1.0), 0.0, 2.0)), 10)
        0.1353352832
    """
    return np.exp(kimura_log_density(kernel, x, xp))


def kimura_density_bessel_form(kernel: KimuraKernel1D, x, xp) -> np.ndarray:
    """The same density written with I_{d-1}: (x'/x)^{(d-1)/2} e^{-(x+x')/t} I_{d-1}(2 sqrt(x x')/t) / t.

    Only defined for x > 0.  For d = 0 this is the (x/x')^{1/2} I_1 form.
    """
    d, t = kernel.d, kernel.t
    x, xp = _check_points(x, xp)
    if np.any(x <= 0):
        raise ValueError("the Bessel form needs x > 0")
    s = 2.0 * np.sqrt(x * xp) / t
    log_i = np.log(bessel_i(d - 1.0, s.ravel(), scaled=True)).reshape(s.shape) + s
    return np.exp(0.5 * (d - 1.0) * np.log(xp / x) - (x + xp) / t + log_i - math.log(t))


def kimura_atom(kernel: KimuraKernel1D, x) -> np.ndarray:
    """Mass e^{-x/t} sitting at the origin when d = 0.

    Raises:
        ValueError: when d > 0, where no atom exists.
    """
    if not kernel.has_atom:
        raise ValueError(f"the Kimura kernel with d={kernel.d} > 0 has no atom")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("source x must be >= 0")
    return np.exp(-x / kernel.t)


@lru_cache(maxsize=16)
def _ydy_terms(k: int) -> dict:
    """Terms of (w d/dw)^k applied to w^(d-1) exp(-w) psi_d(lam w), as {(a, b, j): coef}.

    The d-dependent coefficients are kept symbolic through a dict of
    polynomials in d, stored as tuples of coefficients.
    """
    # each coefficient is a polynomial in d: tuple of coefficients in increasing powers
    terms = {(0, 0, 0): (1.0,)}
    for _ in range(k):
        new: dict = {}

        def add(key, poly):
            cur = new.get(key, ())
            n = max(len(cur), len(poly))
            out = tuple(
                (cur[i] if i < len(cur) else 0.0) + (poly[i] if i < len(poly) else 0.0) for i in range(n)
            )
            new[key] = out

        for (a, b, j), poly in terms.items():
            # (d - 1 + a + b) * same term
            shifted = tuple([0.0] + list(poly))  # d * poly
            const = tuple(c * (a + b - 1.0) for c in poly)
            add((a, b, j), shifted)
            add((a, b, j), const)
            add((a + 1, b, j), tuple(-c for c in poly))
            add((a, b + 1, j + 1), poly)
        terms = new
    return terms


def _eval_poly(poly, d):
    return sum(c * d**i for i, c in enumerate(poly))


def kimura_deriv(kernel: KimuraKernel1D, x, xp, which: str, k: int = 1) -> np.ndarray:
    """Analytic derivatives of the continuous Kimura density.

    Parameters:
        kernel: the density parameters.
        x: source point(s), x >= 0.
        xp: destination point(s), x' > 0.
        which: ``"dx"``, ``"sqrtx_dx"``, ``"x_dxx"``, ``"dxx"`` act on the source
            variable; ``"ydy"`` applies (x' d/dx')^k in the destination variable.
        k: power for ``"ydy"``.

    Returns:
        The derivative values, built from psi_{d+j} identities only.
    """
    t = kernel.t
    x_arr = np.asarray(x, dtype=float)
    if which == "dx":
        terms, extra = {(0, 0, 0): -1.0, (1, 0, 1): 1.0}, -math.log(t)
    elif which == "sqrtx_dx":
        terms = {(0, 0, 0): -1.0, (1, 0, 1): 1.0}
        extra = -math.log(t) + 0.5 * _safe_log(x_arr)
    elif which == "dxx":
        terms, extra = {(0, 0, 0): 1.0, (1, 0, 1): -2.0, (2, 0, 2): 1.0}, -2.0 * math.log(t)
    elif which == "x_dxx":
        terms = {(0, 0, 0): 1.0, (1, 0, 1): -2.0, (2, 0, 2): 1.0}
        extra = -2.0 * math.log(t) + _safe_log(x_arr)
    elif which == "ydy":
        if int(k) != k or not 0 <= k <= 6:
            raise ValueError(f"ydy power must be an integer in [0, 6], got {k}")
        terms = {key: _eval_poly(poly, kernel.d) for key, poly in _ydy_terms(int(k)).items()}
        extra = 0.0
    else:
        raise ValueError(f"unsupported derivative {which!r}; choose from {DERIV_KINDS}")
    val, sgn = _terms_log_sum(kernel, x, xp, terms, extra)
    return sgn * np.exp(val)


def kimura_mass(kernel: KimuraKernel1D, x: float, epsabs: float = 1e-11, epsrel: float = 1e-11) -> float:
    """Total mass of p^d_t(x, .): atom (when d = 0) plus quadrature of the continuous part.

    The integral runs in r = sqrt(x') where the density is close to a Gaussian of
    width sqrt(t); the piece next to the origin uses an algebraic weight
    r^(2d-1) that absorbs the x'^(d-1) singularity.
    """
    return kimura_cdf(kernel, x, np.inf, epsabs=epsabs, epsrel=epsrel) + (
        float(kimura_atom(kernel, x)) if kernel.has_atom else 0.0
    )


def kimura_cdf(kernel: KimuraKernel1D, x: float, upper, epsabs: float = 1e-11, epsrel: float = 1e-11):
    """Integral of the continuous part of p^d_t(x, .) over (0, upper]."""
    d, t = kernel.d, kernel.t
    rx, rt = math.sqrt(x), math.sqrt(t)
    r_hi = rx + 14.0 * rt + 3.0 * math.sqrt(max(d, 1.0) * t)

    def h(r):
        # density in r times r^(1-2d), paired with the weight r^(2d-1)
        if r == 0.0:
            return 2.0 * t ** (-d) * math.exp(-x / t) / math.gamma(d)
        return 2.0 * r ** (2.0 - 2.0 * d) * float(kimura_density(kernel, x, r * r))

    def g(r):
        if r == 0.0:
            return 0.0
        return 2.0 * r * float(kimura_density(kernel, x, r * r))

    upper_arr = np.atleast_1d(np.asarray(upper, dtype=float))
    out = np.empty(upper_arr.shape)
    r0 = 0.5 * rt if rx < 2 * rt else min(0.5 * rt, 0.5 * rx)
    for i, up in enumerate(upper_arr):
        ru = min(math.sqrt(up) if up > 0 else 0.0, r_hi)
        if ru <= 0:
            out[i] = 0.0
            continue
        a = min(r0, ru)
        if d > 0:
            total = integrate.quad(
                h, 0.0, a, weight="alg", wvar=(2.0 * d - 1.0, 0.0), epsabs=epsabs, epsrel=epsrel, limit=200
            )[0]
        else:
            # d = 0: the continuous part is bounded at the origin
            total = integrate.quad(g, 0.0, a, epsabs=epsabs, epsrel=epsrel, limit=200)[0]
        if ru > a:
            pts = [p for p in (rx - 4 * rt, rx, rx + 4 * rt) if a < p < ru]
            total += integrate.quad(g, a, ru, points=pts or None, epsabs=epsabs, epsrel=epsrel, limit=400)[0]
        out[i] = total
    return out if np.ndim(upper) else float(out[0])


def gaussian_density(e_shift: float, t: float, y, yp) -> np.ndarray:
    """Heat kernel of d^2/dy^2 + e d/dy: (4 pi t)^(-1/2) exp(-(y' - y - e t)^2 / (4t))."""
    if not t > 0:
        raise ValueError(f"time must be positive, got t={t}")
    y = np.asarray(y, dtype=float)
    yp = np.asarray(yp, dtype=float)
    r = yp - y - e_shift * t
    return np.exp(-r * r / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)


def gaussian_deriv(e_shift: float, t: float, y, yp, order: int) -> np.ndarray:
    """Source-variable derivative d^k/dy^k of the Gaussian kernel, k in {1, 2}."""
    g = gaussian_density(e_shift, t, y, yp)
    r = np.asarray(yp, dtype=float) - np.asarray(y, dtype=float) - e_shift * t
    if order == 1:
        return g * r / (2.0 * t)
    if order == 2:
        return g * (r * r / (4.0 * t * t) - 1.0 / (2.0 * t))
    raise ValueError(f"order must be 1 or 2, got {order}")


def loggaussian_log_density(kernel: LogGaussianKernel1D, y, yp) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    yp = np.asarray(yp, dtype=float)
    if np.any(y <= 0) or np.any(yp <= 0):
        raise ValueError("log-Gaussian density needs y > 0 and y' > 0")
    s = 2.0 * kernel.b * kernel.t
    r = np.log(y) - np.log(yp)
    return -0.5 * math.log(2.0 * math.pi * s) - r * r / (2.0 * s) - np.log(yp)


def loggaussian_density(kernel: LogGaussianKernel1D, y, yp) -> np.ndarray:
    """Density (4 pi b t)^(-1/2) exp(-(ln y - ln y')^2 / (4 b t)) / y' on y' > 0."""
    return np.exp(loggaussian_log_density(kernel, y, yp))


def loggaussian_deriv(kernel: LogGaussianKernel1D, y, yp, which: str) -> np.ndarray:
    """Source derivatives of the log-Gaussian density.

    ``which`` is ``"ydy"`` for y d/dy or ``"yydyy"`` for y^2 d^2/dy^2.
    """
    k = loggaussian_density(kernel, y, yp)
    s = 2.0 * kernel.b * kernel.t
    r = (np.log(np.asarray(yp, dtype=float)) - np.log(np.asarray(y, dtype=float))) / s
    d1 = k * r
    if which == "ydy":
        return d1
    if which == "yydyy":
        # y^2 d^2 = d_l^2 - d_l with l = ln y
        return k * (r * r - 1.0 / s) - d1
    raise ValueError(f"unsupported derivative {which!r}")

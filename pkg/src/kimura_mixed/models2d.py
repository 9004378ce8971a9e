"""Constant-coefficient model operators in two variables and their kernels.

Every model kernel is a product of two one-dimensional factors.  A coordinate
is one of three kinds:

``kimura``
    x >= 0 with generator ``a x d^2/dx^2 + d d/dx``; factor p^{d/a}_{a t}.
``euclid``
    y in R with generator ``a d^2/dy^2 + d d/dy``; Gaussian factor.
``quadratic``
    y > 0 with generator ``a (y^2 d^2/dy^2 + y d/dy)``; log-Gaussian factor.

The five boundary model classes fix the pair of kinds:

=========  ======================  =====================
class      first coordinate        second coordinate
=========  ======================  =====================
c_reg      kimura                  kimura
e_reg      kimura                  euclid
c_mix      kimura                  quadratic
e_inf      euclid                  quadratic
c_inf      quadratic               quadratic
=========  ======================  =====================

Frozen coefficients use ``a``/``b`` for the diffusion of the first/second
coordinate and ``d``/``e`` for the matching drifts.  A quadratic coordinate
ignores its drift entry: the model keeps only the b (y^2 d^2 + y d) part.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .kernels1d import (
    KimuraKernel1D,
    LogGaussianKernel1D,
    gaussian_density,
    kimura_density,
    kimura_deriv,
    loggaussian_density,
)

__all__ = [
    "BoundaryTag",
    "BoundaryClass",
    "FrozenCoefficients",
    "ModelKernel2D",
    "QuadratureError",
    "CoordinateRule",
    "coordinate_rule",
    "model_kernel",
    "model_kernel_atoms",
    "apply_model_operator",
    "model_solve_cauchy",
    "model_solve_inhomogeneous",
    "model_solve_with_derivatives",
    "CLASS_KINDS",
]


class BoundaryTag(enum.Enum):
    INTERIOR = "interior"
    REGULAR_EDGE = "e_reg"
    INFINITY_EDGE = "e_inf"
    REGULAR_CORNER = "c_reg"
    MIXED_CORNER = "c_mix"
    INFINITY_CORNER = "c_inf"


CLASS_KINDS = {
    BoundaryTag.INTERIOR: ("euclid", "euclid"),
    BoundaryTag.REGULAR_EDGE: ("kimura", "euclid"),
    BoundaryTag.INFINITY_EDGE: ("euclid", "quadratic"),
    BoundaryTag.REGULAR_CORNER: ("kimura", "kimura"),
    BoundaryTag.MIXED_CORNER: ("kimura", "quadratic"),
    BoundaryTag.INFINITY_CORNER: ("quadratic", "quadratic"),
}


@dataclass(frozen=True)
class BoundaryClass:
    """Boundary type of a point together with the orientation of its chart.

    Parameters:
        tag: the normal-form type.
        swapped: when True the chart lists the coordinates in the opposite order
            from :data:`CLASS_KINDS` (e.g. an edge whose Kimura coordinate is
            the second one).
    """

    tag: BoundaryTag
    swapped: bool = False

    @property
    def kinds(self) -> tuple[str, str]:
        k = CLASS_KINDS[self.tag]
        return (k[1], k[0]) if self.swapped else k

    @property
    def name(self) -> str:
        return self.tag.value

    @classmethod
    def from_name(cls, name: str, swapped: bool = False) -> "BoundaryClass":
        key = name.strip().lower().replace("-", "_")
        aliases = {"e_infty": "e_inf", "c_infty": "c_inf", "e_infinity": "e_inf", "c_infinity": "c_inf"}
        key = aliases.get(key, key)
        for tag in BoundaryTag:
            if tag.value == key:
                return cls(tag, swapped)
        raise ValueError(f"unknown boundary class {name!r}; expected one of {[t.value for t in BoundaryTag]}")

    def __str__(self):
        return self.name + ("(swapped)" if self.swapped else "")


@dataclass(frozen=True)
class FrozenCoefficients:
    """Coefficients of a model operator, frozen at a center point.

    Parameters:
        a: diffusion of the first coordinate, > 0.
        b: diffusion of the second coordinate, > 0.
        d: drift of the first coordinate.
        e: drift of the second coordinate.
        mixed: mixed second-order coefficient at the center; carried for
            bookkeeping, never used by the model kernel.
    """

    a: float = 1.0
    b: float = 1.0
    d: float = 0.0
    e: float = 0.0
    mixed: float = 0.0

    def __post_init__(self):
        for name in ("a", "b"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"diffusion coefficient {name} must be positive, got {v}")
        for name in ("d", "e", "mixed"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"coefficient {name} must be finite")

    def diffusion(self, i: int) -> float:
        return (self.a, self.b)[i]

    def drift(self, i: int) -> float:
        return (self.d, self.e)[i]


@dataclass(frozen=True)
class ModelKernel2D:
    """A model kernel K_t for one boundary class with frozen coefficients."""

    cls: BoundaryClass
    frozen: FrozenCoefficients
    t: float

    def __post_init__(self):
        if not (self.t > 0 and math.isfinite(self.t)):
            raise ValueError(f"time must be positive, got t={self.t}")
        for i, kind in enumerate(self.cls.kinds):
            if kind == "kimura" and self.frozen.drift(i) < 0:
                raise ValueError(f"Kimura coordinate {i} needs a nonnegative drift, got {self.frozen.drift(i)}")

    def with_time(self, t: float) -> "ModelKernel2D":
        return ModelKernel2D(self.cls, self.frozen, t)


class QuadratureError(RuntimeError):
    """Quadrature did not reach the requested tolerance."""

    def __init__(self, msg, achieved):
        super().__init__(f"{msg} (achieved {achieved:.3e})")
        self.achieved = achieved


# ---------------------------------------------------------------------------
# one-dimensional factors


def _check_coord(kind: str, v: np.ndarray, role: str):
    if kind == "kimura" and np.any(v < 0):
        raise ValueError(f"{role} has a negative Kimura coordinate")
    if kind == "quadratic" and np.any(v <= 0):
        raise ValueError(f"{role} needs a strictly positive quadratic coordinate")


def factor_density(kind: str, diff: float, drift: float, t: float, p, q) -> np.ndarray:
    """Continuous density of one coordinate factor."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if kind == "kimura":
        _check_coord(kind, p, "source")
        out = np.zeros(np.broadcast(p, q).shape)
        pos = np.broadcast_to(q > 0, out.shape)
        pb, qb = np.broadcast_arrays(p, q)
        if np.any(pos):
            out[pos] = kimura_density(KimuraKernel1D(drift / diff, diff * t), pb[pos], qb[pos])
        return out
    if kind == "euclid":
        return gaussian_density(drift / diff, diff * t, p, q)
    if kind == "quadratic":
        _check_coord(kind, p, "source")
        _check_coord(kind, q, "destination")
        return loggaussian_density(LogGaussianKernel1D(diff, t), p, q)
    raise ValueError(f"unknown coordinate kind {kind!r}")


def factor_atom(kind: str, diff: float, drift: float, t: float, p) -> np.ndarray:
    """Mass at the origin of a Kimura factor with zero drift, else zeros."""
    p = np.asarray(p, dtype=float)
    if kind == "kimura" and drift == 0.0:
        return np.exp(-p / (diff * t))
    return np.zeros(p.shape)


def _split(points):
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != 2:
        raise ValueError("points must have a trailing dimension of size 2")
    return pts[..., 0], pts[..., 1]


def model_kernel(mk: ModelKernel2D, p, q) -> np.ndarray:
    """Continuous part of the model kernel K_t(p, q) as a product of 1-D factors.

    ``p`` and ``q`` are arrays with trailing dimension 2 (broadcast against each
    other).  Atoms of zero-drift Kimura factors are reported by
    :func:`model_kernel_atoms`.
    """
    p1, p2 = _split(p)
    q1, q2 = _split(q)
    k1, k2 = mk.cls.kinds
    f = mk.frozen
    return factor_density(k1, f.a, f.d, mk.t, p1, q1) * factor_density(k2, f.b, f.e, mk.t, p2, q2)


def model_kernel_atoms(mk: ModelKernel2D, p, q) -> dict:
    """Singular parts of K_t(p, .) carried by zero-drift Kimura factors.

    Returns a dict with optional keys

    * ``"face0"``: coefficient of delta(q_1) as a density in q_2,
    * ``"face1"``: coefficient of delta(q_2) as a density in q_1,
    * ``"corner"``: mass of the point delta(q_1) delta(q_2).
    """
    p1, p2 = _split(p)
    q1, q2 = _split(q)
    k1, k2 = mk.cls.kinds
    f = mk.frozen
    a1 = factor_atom(k1, f.a, f.d, mk.t, p1)
    a2 = factor_atom(k2, f.b, f.e, mk.t, p2)
    out = {}
    if k1 == "kimura" and f.d == 0.0:
        out["face0"] = a1 * factor_density(k2, f.b, f.e, mk.t, p2, q2)
    if k2 == "kimura" and f.e == 0.0:
        out["face1"] = a2 * factor_density(k1, f.a, f.d, mk.t, p1, q1)
    if "face0" in out and "face1" in out:
        out["corner"] = a1 * a2
    return out


# ---------------------------------------------------------------------------
# quadrature rules adapted to one factor


@lru_cache(maxsize=64)
def _gauss_legendre(n: int):
    x, w = special.roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=256)
def _gauss_jacobi_left(n: int, beta: float):
    # nodes on [0, 1] for the weight s^beta
    x, w = special.roots_jacobi(n, 0.0, beta)
    s = 0.5 * (x + 1.0)
    return s, w * 0.5 ** (beta + 1.0)


@lru_cache(maxsize=64)
def _gauss_hermite(n: int):
    x, w = special.roots_hermite(n)
    return x, w / math.sqrt(math.pi)


@dataclass
class CoordinateRule:
    """Nodes and weights reproducing integration against one kernel factor.

    ``nodes`` has shape (n_points, n_nodes).  ``weights[k]`` integrates against
    the k-th source derivative of the factor, so ``sum(weights[0] * g(nodes))``
    approximates the factor applied to ``g``.  Atoms enter as ordinary nodes.
    """

    nodes: np.ndarray
    weights: list = field(default_factory=list)
    clipped: np.ndarray | None = None


def _kimura_rule(delta: float, tau: float, x: np.ndarray, order: int, panels: int, span: float, deriv: int,
                 r_window: tuple | None = None):
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    rx = np.sqrt(x)
    rt = math.sqrt(tau)
    r_hi = rx + span * rt + 2.0 * math.sqrt(max(delta, 1.0) * tau)
    r_lo = np.maximum(rx - span * rt, 0.0)
    r_lo = np.where(r_lo < 2.0 * rt, 0.0, r_lo)
    clipped = np.zeros(n, dtype=bool)
    empty = np.zeros(n, dtype=bool)
    with_atom = True
    if r_window is not None:
        wlo, whi = r_window
        clipped = (r_lo < wlo) | (r_hi > whi)
        r_lo = np.maximum(r_lo, wlo)
        r_hi = np.minimum(r_hi, whi)
        empty = r_hi <= r_lo
        r_hi = np.where(empty, r_lo + 1.0, r_hi)
        with_atom = wlo == 0.0
    near = r_lo == 0.0
    kern = KimuraKernel1D(delta, tau)
    gl_s, gl_w = _gauss_legendre(order)
    nodes_r = np.empty((n, panels * order))
    wts = np.empty((n, panels * order))
    width = (r_hi - r_lo) / panels
    # first panel: Gauss-Jacobi with weight r^(2 delta - 1) when it touches the origin
    use_jac = near & (delta > 0)
    jac_s, jac_w = _gauss_jacobi_left(order, 2.0 * delta - 1.0) if delta > 0 else (gl_s, gl_w)
    for k in range(panels):
        lo = r_lo + k * width
        if k == 0:
            s = np.where(use_jac[:, None], jac_s[None, :], gl_s[None, :])
            w = np.where(use_jac[:, None], jac_w[None, :], gl_w[None, :])
        else:
            s, w = gl_s[None, :], gl_w[None, :]
        r = lo[:, None] + width[:, None] * s
        sl = slice(k * order, (k + 1) * order)
        nodes_r[:, sl] = r
        jac_factor = np.where(use_jac[:, None] & (k == 0), width[:, None] ** (2.0 * delta), width[:, None])
        wts[:, sl] = w * jac_factor
    q = nodes_r**2
    # Jacobian 2r, divided by the Jacobi weight r^(2 delta - 1) where used
    first = np.zeros(nodes_r.shape, dtype=bool)
    first[:, :order] = use_jac[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        jac = np.where(first, 2.0 * nodes_r ** (2.0 - 2.0 * delta), 2.0 * nodes_r)
    xb = np.broadcast_to(x[:, None], q.shape)
    out_w = []
    kinds = ["density", "dx", "dxx"][: deriv + 1]
    for kind in kinds:
        vals = np.zeros(q.shape)
        pos = q > 0
        if kind == "density":
            vals[pos] = kimura_density(kern, xb[pos], q[pos])
        else:
            vals[pos] = kimura_deriv(kern, xb[pos], q[pos], kind)
        out_w.append(np.where(empty[:, None], 0.0, wts * jac * vals))
    if delta == 0.0 and with_atom:
        atom = np.exp(-x / tau)
        atoms = [atom, -atom / tau, atom / tau**2][: deriv + 1]
        q = np.concatenate([q, np.zeros((n, 1))], axis=1)
        out_w = [np.concatenate([w, a[:, None]], axis=1) for w, a in zip(out_w, atoms)]
    return q, out_w, clipped


def _gaussian_window(mu: np.ndarray, var: float, lo_w: float, hi_w: float, order: int, panels: int, span: float):
    # panelled Gauss-Legendre on the part of mu +- span*sd that lies in [lo_w, hi_w]
    sd = math.sqrt(var)
    lo = mu - span * sd
    hi = mu + span * sd
    clipped = (lo < lo_w) | (hi > hi_w)
    lo = np.maximum(lo, lo_w)
    hi = np.minimum(hi, hi_w)
    empty = hi <= lo
    hi = np.where(empty, lo + 1.0, hi)
    s, w = _gauss_legendre(order)
    width = (hi - lo) / panels
    offs = (np.arange(panels)[:, None] + s[None, :]).ravel()
    nodes = lo[:, None] + width[:, None] * offs[None, :]
    wts = np.tile(w, panels)[None, :] * width[:, None]
    dens = np.exp(-((nodes - mu[:, None]) ** 2) / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
    return nodes, np.where(empty[:, None], 0.0, wts * dens), clipped


def coordinate_rule(
    kind: str,
    diff: float,
    drift: float,
    t: float,
    p,
    deriv: int = 0,
    order: int = 12,
    panels: int = 6,
    span: float = 10.0,
    window: tuple | None = None,
) -> CoordinateRule:
    """Quadrature rule for one factor of a model kernel, centered at the source points ``p``.

    Parameters:
        kind: ``"kimura"``, ``"euclid"`` or ``"quadratic"``.
        diff, drift: frozen coefficients of the coordinate.
        t: time.
        p: source coordinates, any shape (flattened).
        deriv: highest source derivative (0, 1 or 2) whose weights are returned.
        order: Gauss points per panel (Kimura) or Hermite points / 2 (others).
        panels: number of panels in sqrt-coordinates for Kimura factors.
        span: half width of the covered range in units of the factor's spread.
        window: optional (lo, hi) in the coordinate itself.  Nodes are then
            restricted to the window, for integrands supported there;
            ``clipped`` flags the points whose factor mass leaks out of it.
    """
    p = np.asarray(p, dtype=float).ravel()
    if kind == "kimura":
        _check_coord(kind, p, "source")
        r_window = None
        if window is not None:
            r_window = (math.sqrt(max(window[0], 0.0)), math.sqrt(max(window[1], 0.0)))
        q, w, clipped = _kimura_rule(drift / diff, diff * t, p, order, panels, span, deriv, r_window)
        return CoordinateRule(q, w, clipped)
    if window is not None:
        return _windowed_smooth_rule(kind, diff, drift, t, p, deriv, order, panels, window)
    xi, w = _gauss_hermite(2 * order)
    s = math.sqrt(4.0 * diff * t)
    base = np.broadcast_to(w, (p.size, w.size))
    if kind == "euclid":
        mu = p + drift * t
        q = mu[:, None] + s * xi[None, :]
        r = (q - mu[:, None]) / (2.0 * diff * t)
        ws = [base, base * r, base * (r * r - 1.0 / (2.0 * diff * t))][: deriv + 1]
        return CoordinateRule(q, [np.array(v) for v in ws])
    if kind == "quadratic":
        _check_coord(kind, p, "source")
        ell = np.log(p)
        q = np.exp(ell[:, None] + s * xi[None, :])
        r = s * xi[None, :] / (2.0 * diff * t)
        w1 = base * r / p[:, None]
        w2 = base * (r * r - 1.0 / (2.0 * diff * t) - r) / (p[:, None] ** 2)
        ws = [base, w1, w2][: deriv + 1]
        return CoordinateRule(q, [np.array(v) for v in ws])
    raise ValueError(f"unknown coordinate kind {kind!r}")


def _windowed_smooth_rule(kind, diff, drift, t, p, deriv, order, panels, window, span=8.0):
    var = 2.0 * diff * t
    lo_w, hi_w = window
    if kind == "euclid":
        mu = p + drift * t
        q, base, clipped = _gaussian_window(mu, var, lo_w, hi_w, order, panels, span)
        r = (q - mu[:, None]) / var
        ws = [base, base * r, base * (r * r - 1.0 / var)][: deriv + 1]
        return CoordinateRule(q, ws, clipped)
    if kind == "quadratic":
        _check_coord(kind, p, "source")
        ell = np.log(p)
        llo = math.log(lo_w) if lo_w > 0 else -np.inf
        ell_q, base, clipped = _gaussian_window(ell, var, llo, math.log(hi_w), order, panels, span)
        r = (ell_q - ell[:, None]) / var
        w1 = base * r / p[:, None]
        w2 = base * (r * r - 1.0 / var - r) / (p[:, None] ** 2)
        return CoordinateRule(np.exp(ell_q), [base, w1, w2][: deriv + 1], clipped)
    raise ValueError(f"unknown coordinate kind {kind!r}")


# ---------------------------------------------------------------------------
# model operator and solvers


def apply_model_operator(cls: BoundaryClass, frozen: FrozenCoefficients, f: Callable, point, h: float = 1e-3):
    """Central-difference value of L_M f at ``point``.

    Kimura directions are differenced in r = sqrt(x), quadratic ones in
    ln y and Euclidean ones directly, each with step ``h``.  At a Kimura face
    (x = 0) only the drift term survives and is differenced one-sidedly in x.

    Raises:
        ValueError: if the stencil would leave the model space.
    """
    pt = np.asarray(point, dtype=float)
    if pt.shape != (2,):
        raise ValueError("point must be a pair")
    total = 0.0
    for i, kind in enumerate(cls.kinds):
        diff, drift = frozen.diffusion(i), frozen.drift(i)

        def at(v, i=i):
            q = pt.copy()
            q[i] = v
            return float(f(q[0], q[1]))

        c = pt[i]
        if kind == "kimura":
            if c == 0.0:
                hx = h * h
                total += drift * (-3 * at(0.0) + 4 * at(hx) - at(2 * hx)) / (2 * hx)
                continue
            r = math.sqrt(c)
            if r <= h:
                raise ValueError(f"stencil step h={h} too large near the Kimura face (sqrt x = {r})")
            fp, f0, fm = at((r + h) ** 2), at(c), at((r - h) ** 2)
            d2 = (fp - 2 * f0 + fm) / h**2
            d1 = (fp - fm) / (2 * h)
            # a x f_xx + d f_x = (a/4) f_rr + (2d - a)/(4r) f_r
            total += 0.25 * diff * d2 + (2 * drift - diff) / (4 * r) * d1
        elif kind == "euclid":
            fp, f0, fm = at(c + h), at(c), at(c - h)
            total += diff * (fp - 2 * f0 + fm) / h**2 + drift * (fp - fm) / (2 * h)
        elif kind == "quadratic":
            if c <= 0:
                raise ValueError("quadratic coordinate must be positive")
            ell = math.log(c)
            fp, f0, fm = at(math.exp(ell + h)), at(c), at(math.exp(ell - h))
            total += diff * (fp - 2 * f0 + fm) / h**2
    return total


def _tensor_apply(rules: Sequence[CoordinateRule], fvals: np.ndarray, pairs: Sequence[tuple[int, int]]):
    out = []
    for i, j in pairs:
        out.append(np.einsum("pa,pb,pab->p", rules[0].weights[i], rules[1].weights[j], fvals))
    return out


def _eval_on_nodes(f: Callable, rules, extra=None):
    q1 = rules[0].nodes[:, :, None]
    q2 = rules[1].nodes[:, None, :]
    q1, q2 = np.broadcast_arrays(q1, q2)
    if extra is None:
        return np.asarray(f(q1, q2), dtype=float) * np.ones(q1.shape)
    return np.asarray(f(extra, q1, q2), dtype=float) * np.ones(q1.shape)


def model_solve_cauchy(
    mk: ModelKernel2D,
    f: Callable,
    eval_points,
    order: int = 12,
    panels: int = 6,
    rtol: float | None = None,
) -> np.ndarray:
    """v(t, p) = integral of K_t(p, q) f(q) dq, atoms included.

    Parameters:
        mk: the model kernel (its ``t`` is the evaluation time).
        f: vectorised callable f(q1, q2).
        eval_points: array (..., 2) of source points.
        order, panels: quadrature resolution per coordinate.
        rtol: when given, the result is recomputed with a finer rule and a
            :class:`QuadratureError` is raised if the two differ by more.
    """
    p1, p2 = _split(eval_points)
    shape = p1.shape
    vals = _cauchy(mk, f, p1, p2, order, panels)
    if rtol is not None:
        fine = _cauchy(mk, f, p1, p2, order + 8, panels + 2)
        err = float(np.max(np.abs(fine - vals) / np.maximum(np.abs(fine), 1e-300)))
        if err > rtol:
            raise QuadratureError("model Cauchy quadrature did not converge", err)
        vals = fine
    return vals.reshape(shape)


def _cauchy(mk, f, p1, p2, order, panels):
    k1, k2 = mk.cls.kinds
    fr = mk.frozen
    r1 = coordinate_rule(k1, fr.a, fr.d, mk.t, p1, 0, order, panels)
    r2 = coordinate_rule(k2, fr.b, fr.e, mk.t, p2, 0, order, panels)
    fv = _eval_on_nodes(f, (r1, r2))
    return _tensor_apply((r1, r2), fv, [(0, 0)])[0]


@lru_cache(maxsize=32)
def _time_rule(n: int, power: int):
    s, w = _gauss_legendre(n)
    # tau = t * s^power clusters nodes near tau = 0 (s near the evaluation time)
    return s**power, w * power * s ** (power - 1)


def model_solve_with_derivatives(
    mk: ModelKernel2D,
    g: Callable,
    eval_points,
    n_time: int = 12,
    time_power: int = 4,
    order: int = 10,
    panels: int = 5,
    deriv: int = 2,
    subtract: bool = True,
    windows: tuple | None = None,
):
    """Inhomogeneous model solve u = int_0^t K_{t-s}[g(s)] ds with source derivatives.

    Returns a dict with keys ``u``, ``d1``, ``d2``, ``d11``, ``d22``, ``d12``
    (derivatives with respect to the two source coordinates), each of the
    shape of the evaluation points.  With ``subtract`` the derivative integrals
    use g(s, q) - g(s, p), which is exact because the kernel conserves mass.

    ``windows`` is an optional pair of (lo, hi) boxes, one per coordinate,
    containing the support of ``g``; nodes are then confined to the box.  The
    subtraction is skipped at points whose kernel mass leaks out of the box,
    where it would no longer be exact.
    """
    p1, p2 = _split(eval_points)
    shape = p1.shape
    p1f, p2f = p1.ravel(), p2.ravel()
    t = mk.t
    k1, k2 = mk.cls.kinds
    fr = mk.frozen
    sig, wsig = _time_rule(n_time, time_power)
    keys = ["u", "d1", "d2", "d11", "d22", "d12"] if deriv >= 2 else (["u", "d1", "d2"] if deriv == 1 else ["u"])
    acc = {k: np.zeros(p1f.size) for k in keys}
    pairs = {"u": (0, 0), "d1": (1, 0), "d2": (0, 1), "d11": (2, 0), "d22": (0, 2), "d12": (1, 1)}
    for sj, wj in zip(sig, wsig):
        tau = t * sj
        s_abs = t - tau
        w1, w2 = windows if windows is not None else (None, None)
        r1 = coordinate_rule(k1, fr.a, fr.d, tau, p1f, deriv, order, panels, window=w1)
        r2 = coordinate_rule(k2, fr.b, fr.e, tau, p2f, deriv, order, panels, window=w2)
        fv = _eval_on_nodes(g, (r1, r2), extra=s_abs)
        if subtract and deriv > 0:
            g0 = np.asarray(g(s_abs, p1f, p2f), dtype=float) * np.ones(p1f.shape)
            if windows is not None:
                g0 = np.where(r1.clipped | r2.clipped, 0.0, g0)
        for k in keys:
            i, j = pairs[k]
            vals = fv - g0[:, None, None] if (subtract and k != "u") else fv
            acc[k] += t * wj * _tensor_apply((r1, r2), vals, [(i, j)])[0]
    return {k: v.reshape(shape) for k, v in acc.items()}


def model_solve_inhomogeneous(
    mk: ModelKernel2D,
    g: Callable,
    eval_points,
    n_time: int = 12,
    order: int = 10,
    panels: int = 5,
    windows: tuple | None = None,
) -> np.ndarray:
    """u(t, p) = int_0^t int K_{t-s}(p, q) g(s, q) dq ds.

    ``g`` is a vectorised callable g(s, q1, q2).  The time integral runs in
    tau = t - s with nodes clustered at tau = 0.  ``windows`` as in
    :func:`model_solve_with_derivatives`.
    """
    return model_solve_with_derivatives(mk, g, eval_points, n_time=n_time, time_power=2, order=order, panels=panels,
                                        deriv=0, windows=windows)["u"]

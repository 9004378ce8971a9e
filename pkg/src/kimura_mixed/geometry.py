"""Domains with corners carrying a mixed-type Kimura operator.

An :class:`OperatorSpec` stores the operator in global coordinates (x, y)::

    L = A d_xx + B d_xy + C d_yy + Dx d_x + Dy d_y

together with the boundary faces, their declared type, and affine charts
that bring each corner, face and the interior into normal form.  A chart maps
global points p to local coordinates ``M @ p + c``; second-order coefficients
transform as ``M S M^T`` with ``S = [[A, B/2], [B/2, C]]`` and the drift as
``M D``.

Built-in instances: the three-term operator on the triangle
{x, y >= 0, x + y <= 1}, products of Wright-Fisher operators on the unit
square, and constant-coefficient model operators on their model spaces.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from .models2d import CLASS_KINDS, BoundaryClass, BoundaryTag, FrozenCoefficients

__all__ = [
    "SpecificationError",
    "AssumptionViolation",
    "SchemaError",
    "Chart",
    "Face",
    "Corner",
    "OperatorSpec",
    "WFMetric",
    "wf_distance",
    "classify_boundary",
    "tangent_or_transverse",
    "principal_symbol",
    "apply_operator",
    "triangle_instance",
    "unit_square_instance",
    "model_instance",
    "spec_from_polynomials",
    "load_operator_config",
    "operator_from_section",
]


class SpecificationError(ValueError):
    """The declared operator contradicts its own coefficients."""


class AssumptionViolation(ValueError):
    """A regular edge is neither tangent nor transverse."""


class SchemaError(ValueError):
    """A configuration file has missing, unknown or malformed keys."""

    def __init__(self, msg, keys=()):
        self.keys = list(keys)
        super().__init__(f"{msg}: {', '.join(self.keys)}" if self.keys else msg)


Coefficients = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass(frozen=True)
class Chart:
    """Affine chart ``local = M @ global + c`` with the boundary class of its model.

    The local coordinate kinds are ``cls.kinds``: Kimura coordinates vanish on
    regular faces, quadratic ones on infinity faces.
    """

    name: str
    cls: BoundaryClass
    M: tuple = ((1.0, 0.0), (0.0, 1.0))
    c: tuple = (0.0, 0.0)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.M, dtype=float)

    @property
    def offset(self) -> np.ndarray:
        return np.array(self.c, dtype=float)

    def to_local(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.matrix.T + self.offset

    def to_global(self, loc) -> np.ndarray:
        loc = np.asarray(loc, dtype=float)
        return (loc - self.offset) @ np.linalg.inv(self.matrix).T

    @property
    def jacobian(self) -> float:
        """|det| of the global-to-local map (densities pick up this factor)."""
        return abs(float(np.linalg.det(self.matrix)))


@dataclass(frozen=True)
class Face:
    """A straight boundary segment from ``p0`` to ``p1`` with its normal-form chart."""

    name: str
    tag: BoundaryTag
    p0: tuple
    p1: tuple
    chart: Chart

    @property
    def normal_index(self) -> int:
        # the degenerate coordinate of the chart
        kinds = self.chart.cls.kinds
        return 0 if kinds[0] in ("kimura", "quadratic") else 1

    @property
    def inward_normal(self) -> np.ndarray:
        row = self.chart.matrix[self.normal_index]
        return row / np.linalg.norm(row)

    def level(self, pts) -> np.ndarray:
        """Normal local coordinate: zero on the face, positive inside."""
        return self.chart.to_local(pts)[..., self.normal_index]

    def sample(self, n: int, margin: float = 0.0) -> np.ndarray:
        s = np.linspace(margin, 1.0 - margin, n)
        p0, p1 = np.array(self.p0, float), np.array(self.p1, float)
        return p0[None, :] + s[:, None] * (p1 - p0)[None, :]

    def contains(self, pt, tol: float = 1e-12) -> bool:
        p0, p1 = np.array(self.p0, float), np.array(self.p1, float)
        v = p1 - p0
        s = float(np.dot(np.asarray(pt, float) - p0, v) / np.dot(v, v))
        return abs(float(self.level(np.asarray(pt, float)))) <= tol and -tol <= s <= 1 + tol


@dataclass(frozen=True)
class Corner:
    name: str
    point: tuple
    tag: BoundaryTag
    chart: Chart
    faces: tuple


@dataclass
class OperatorSpec:
    """A mixed-type Kimura operator on a 2-D domain with corners.

    Parameters:
        name: label used in reports.
        coefficients: callable (x, y) -> (A, B, C, Dx, Dy) in global coordinates.
        domain: ``"triangle"``, ``"square"`` or ``"model"``.
        faces, corners: boundary pieces with declared types and charts.
        interior_chart: chart used away from the boundary.
        model_class: for ``"model"`` domains, the boundary class of the model space.
        constant: True when the operator is a single-chart constant-coefficient model.
    """

    name: str
    coefficients: Coefficients
    domain: str
    faces: list = field(default_factory=list)
    corners: list = field(default_factory=list)
    interior_chart: Chart = field(default_factory=lambda: Chart("interior", BoundaryClass(BoundaryTag.INTERIOR)))
    model_class: BoundaryClass | None = None
    constant: bool = False
    frozen: FrozenCoefficients | None = None
    params: dict = field(default_factory=dict)

    # -- geometry ---------------------------------------------------------
    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        if self.domain == "triangle":
            return (x >= -tol) & (y >= -tol) & (x + y <= 1 + tol)
        if self.domain == "square":
            return (x >= -tol) & (y >= -tol) & (x <= 1 + tol) & (y <= 1 + tol)
        ok = np.ones(x.shape, dtype=bool)
        for v, kind in zip((x, y), self.model_class.kinds):
            if kind == "kimura":
                ok &= v >= -tol
            elif kind == "quadratic":
                ok &= v > 0
        return ok

    def interior_samples(self, n: int, rng=None, margin: float = 0.02) -> np.ndarray:
        rng = np.random.default_rng(0) if rng is None else rng
        if self.domain == "model":
            lo = np.array([margin if k != "euclid" else -1.0 for k in self.model_class.kinds])
            hi = np.array([2.0, 2.0])
            return lo + (hi - lo) * rng.random((n, 2))
        out = []
        while len(out) < n:
            p = margin + (1 - 2 * margin) * rng.random(2)
            if self.domain == "square" or p.sum() <= 1 - margin:
                out.append(p)
        return np.array(out)

    def centroid(self) -> np.ndarray:
        if self.domain == "triangle":
            return np.array([1 / 3, 1 / 3])
        if self.domain == "square":
            return np.array([0.5, 0.5])
        return np.array([1.0 if k != "euclid" else 0.0 for k in self.model_class.kinds])

    @property
    def charts(self) -> list:
        return [c.chart for c in self.corners] + [f.chart for f in self.faces] + [self.interior_chart]

    def face(self, name: str) -> Face:
        for f in self.faces:
            if f.name == name:
                return f
        raise KeyError(name)

    # -- coefficients -----------------------------------------------------
    def global_coefficients(self, pts) -> tuple:
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        return tuple(np.broadcast_to(np.asarray(v, dtype=float), x.shape).copy() for v in self.coefficients(x, y))

    def local_coefficients(self, chart: Chart, local_pts) -> tuple:
        """Full local coefficients (a_hat, b_hat, c_hat, d_hat, e_hat) at local points.

        ``b_hat`` multiplies the mixed derivative d_1 d_2.
        """
        local_pts = np.asarray(local_pts, dtype=float)
        A, B, C, Dx, Dy = self.global_coefficients(chart.to_global(local_pts))
        M = chart.matrix
        S = np.stack([np.stack([A, 0.5 * B], -1), np.stack([0.5 * B, C], -1)], -2)
        Sl = np.einsum("ij,...jk,lk->...il", M, S, M)
        Dl = np.einsum("ij,...j->...i", M, np.stack([Dx, Dy], -1))
        return Sl[..., 0, 0], 2.0 * Sl[..., 0, 1], Sl[..., 1, 1], Dl[..., 0], Dl[..., 1]

    def normalized_coefficients(self, chart: Chart, local_pts) -> tuple:
        """Arrays (a, b, d, e) with the vanishing factors divided out.

        A Kimura coordinate u contributes diffusion a_hat / u, a quadratic one
        a_hat / u^2 and drift d_hat / u.  Values on the faces themselves are
        not defined here (see :meth:`frozen_coefficients`).
        """
        v = np.asarray(local_pts, dtype=float)
        full = self.local_coefficients(chart, v)
        diff = [full[0], full[2]]
        drift = [full[3], full[4]]
        out_d, out_b = [], []
        with np.errstate(divide="ignore", invalid="ignore"):
            for i, kind in enumerate(chart.cls.kinds):
                x = v[..., i]
                if kind == "kimura":
                    out_d.append(diff[i] / x)
                    out_b.append(drift[i])
                elif kind == "quadratic":
                    out_d.append(diff[i] / x**2)
                    out_b.append(drift[i] / x)
                else:
                    out_d.append(diff[i])
                    out_b.append(drift[i])
        return out_d[0], out_d[1], out_b[0], out_b[1]

    def frozen_coefficients(self, chart: Chart, local_pt, h: float = 1e-6) -> FrozenCoefficients:
        """Model coefficients of ``chart`` frozen at ``local_pt``.

        The vanishing factors are divided out: a Kimura coordinate u has
        diffusion a_hat / u, a quadratic one a_hat / u^2 (limits at u = 0 by
        second-order one-sided extrapolation).
        """
        u = np.asarray(local_pt, dtype=float)
        kinds = chart.cls.kinds

        def normalized(v):
            return np.array([float(c) for c in self.normalized_coefficients(chart, v)])

        vals = np.zeros(4)
        need = [i for i, k in enumerate(kinds) if k != "euclid" and abs(u[i]) < 1e3 * h]
        if not need:
            vals = normalized(u)
        else:
            v1, v2 = u.copy(), u.copy()
            for i in need:
                v1[i] = u[i] + h
                v2[i] = u[i] + 2 * h
            vals = 2 * normalized(v1) - normalized(v2)
        a, b, d, e = vals
        mixed = float(self.local_coefficients(chart, u)[1])
        for i, kind in enumerate(kinds):
            if kind == "kimura" and (d, e)[i] < 0 and abs((d, e)[i]) < 1e-9:
                if i == 0:
                    d = 0.0
                else:
                    e = 0.0
        return FrozenCoefficients(a=float(a), b=float(b), d=float(max(d, 0.0) if kinds[0] == "kimura" else d),
                                  e=float(max(e, 0.0) if kinds[1] == "kimura" else e), mixed=mixed)

    # -- checks -----------------------------------------------------------
    def validate(self, n_samples: int = 64) -> None:
        """Check interior ellipticity, declared vanishing orders and Assumption-type conditions.

        Raises:
            SpecificationError: ellipticity fails or a declared class contradicts the coefficients.
            AssumptionViolation: a regular edge is neither tangent nor transverse.
        """
        pts = self.interior_samples(n_samples)
        A, B, C, _, _ = self.global_coefficients(pts)
        disc = 4 * A * C - B * B
        if np.any(A <= 0) or np.any(disc <= 0):
            raise SpecificationError(f"operator {self.name!r} is not elliptic at some interior sample points")
        for f in self.faces:
            for p in f.sample(5, margin=0.1):
                classify_boundary(self, p)
            if f.tag is BoundaryTag.REGULAR_EDGE:
                tangent_or_transverse(self, f)
            # normalized diffusions stay positive along the face
            for p in f.sample(7, margin=0.05):
                fr = self.frozen_coefficients(f.chart, f.chart.to_local(p))
                if not (fr.a > 0 and fr.b > 0):
                    raise SpecificationError(f"face {f.name}: normalized diffusion not positive at {p}")
            # the mixed term must vanish on the face
            loc = f.chart.to_local(f.sample(9, margin=0.05))
            mixed = self.local_coefficients(f.chart, loc)[1]
            scale = 1.0 + np.max(np.abs(self.local_coefficients(f.chart, loc)[0]))
            if np.max(np.abs(mixed)) > 1e-9 * scale:
                raise SpecificationError(f"face {f.name}: mixed coefficient does not vanish on the face")


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class WFMetric:
    """Singular distance of one model space: 2|sqrt x - sqrt x'| in Kimura
    directions, |ln y - ln y'| in quadratic ones, |y - y'| in Euclidean ones."""

    cls: BoundaryClass

    def __call__(self, p, q):
        return wf_distance(self, p, q)


def _term(kind, a, b):
    if kind == "kimura":
        return 2.0 * np.abs(np.sqrt(a) - np.sqrt(b))
    if kind == "euclid":
        return np.abs(a - b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.abs(np.log(a) - np.log(b))
    return np.where(a == b, 0.0, np.where((a <= 0) | (b <= 0), np.inf, out))


def wf_distance(metric: WFMetric, p, q) -> np.ndarray:
    """Distance between points of the model space; ``inf`` when a quadratic coordinate is 0.

    Examples:
        >>> float(wf_distance(WFMetric(BoundaryClass.from_name("c_reg")), [0, 0], [1, 1]))
        4.0
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    k1, k2 = metric.cls.kinds
    for kind, v in ((k1, p[..., 0]), (k2, p[..., 1]), (k1, q[..., 0]), (k2, q[..., 1])):
        if kind == "kimura" and np.any(v < 0):
            raise ValueError("negative Kimura coordinate")
        if kind == "quadratic" and np.any(v < 0):
            raise ValueError("negative quadratic coordinate")
    out = _term(k1, p[..., 0], q[..., 0]) + _term(k2, p[..., 1], q[..., 1])
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# boundary classification


def _fit_order(values: np.ndarray, dists: np.ndarray) -> float:
    values = np.abs(values)
    if np.any(values <= 0):
        return math.inf
    return float(np.polyfit(np.log(dists), np.log(values), 1)[0])


def _normal_coefficient(spec: OperatorSpec, face: Face, pts) -> np.ndarray:
    A, B, C, _, _ = spec.global_coefficients(pts)
    n = face.inward_normal
    return A * n[0] ** 2 + B * n[0] * n[1] + C * n[1] ** 2


def classify_boundary(spec: OperatorSpec, point, tol: float = 1e-12) -> BoundaryClass:
    """Declared boundary class at ``point``, cross-checked against the coefficients.

    The normal second-order coefficient is sampled at 8 distances along an
    inward direction; a least-squares fit of its log against the log distance
    must give slope 1 (regular) or 2 (infinity) within 10%.

    Raises:
        ValueError: the point is not on the boundary.
        SpecificationError: declared class and fitted vanishing order disagree.
    """
    pt = np.asarray(point, dtype=float)
    for c in spec.corners:
        if np.allclose(pt, c.point, atol=tol):
            inward = spec.centroid() - pt
            inward /= np.linalg.norm(inward)
            for fname in c.faces:
                _check_order(spec, spec.face(fname), pt, inward)
            return c.chart.cls
    hits = [f for f in spec.faces if f.contains(pt, tol)]
    if not hits:
        raise ValueError(f"point {pt} is not on a declared face")
    f = hits[0]
    _check_order(spec, f, pt, f.inward_normal)
    return f.chart.cls


def _check_order(spec, face, pt, direction):
    dists = np.geomspace(1e-5, 1e-2, 8)
    pts = pt[None, :] + dists[:, None] * direction[None, :]
    level = face.level(pts)
    order = _fit_order(_normal_coefficient(spec, face, pts), level)
    expected = 1.0 if face.tag is BoundaryTag.REGULAR_EDGE else 2.0
    if not abs(order - expected) <= 0.1 * expected:
        raise SpecificationError(
            f"face {face.name} declared {face.tag.value} but the normal coefficient vanishes to order {order:.3f}"
        )


def tangent_or_transverse(spec: OperatorSpec, face: Face | str, n: int = 65) -> str:
    """``"tangent"`` if the inward drift vanishes on the regular face, ``"transverse"`` if it is positive.

    Raises:
        AssumptionViolation: the drift changes sign or vanishes only partly.
    """
    if isinstance(face, str):
        face = spec.face(face)
    if face.tag is not BoundaryTag.REGULAR_EDGE:
        raise ValueError(f"face {face.name} is not a regular edge")
    pts = face.sample(n)
    loc = face.chart.to_local(pts)
    full = spec.local_coefficients(face.chart, loc)
    i = face.normal_index
    drift = full[3 + i]
    scale = 1.0 + float(np.max(np.abs(np.concatenate([full[3], full[4]]))))
    if np.max(np.abs(drift)) <= 1e-12 * scale:
        return "tangent"
    if np.min(drift) > 0:
        return "transverse"
    raise AssumptionViolation(
        f"face {face.name}: normal drift ranges over [{np.min(drift):.3g}, {np.max(drift):.3g}], "
        "neither identically zero nor bounded below by a positive constant"
    )


def principal_symbol(spec: OperatorSpec, point, xi: float, eta: float, chart: Chart | None = None) -> float:
    """a_hat xi^2 + b_hat xi eta + c_hat eta^2 at a global point, in global or chart coordinates."""
    pt = np.asarray(point, dtype=float)
    if chart is None:
        A, B, C, _, _ = spec.global_coefficients(pt)
    else:
        A, B, C, _, _ = spec.local_coefficients(chart, chart.to_local(pt))
    return float(A * xi * xi + B * xi * eta + C * eta * eta)


def apply_operator(spec: OperatorSpec, f: Callable, point, chart: Chart | None = None, h: float = 1e-3) -> float:
    """L f at a global point by central differences in the coordinates of ``chart``.

    ``f`` takes global coordinates (x, y).  With ``chart`` the derivatives are
    taken in local coordinates and combined with the transformed coefficients.
    """
    chart = chart or spec.interior_chart
    pt = np.asarray(point, dtype=float)
    u = chart.to_local(pt)
    a, b, c, d, e = (float(v) for v in spec.local_coefficients(chart, u))

    def F(du1, du2):
        g = chart.to_global(u + np.array([du1, du2]))
        return float(f(g[0], g[1]))

    f0 = F(0, 0)
    f11 = (F(h, 0) - 2 * f0 + F(-h, 0)) / h**2
    f22 = (F(0, h) - 2 * f0 + F(0, -h)) / h**2
    f12 = (F(h, h) - F(h, -h) - F(-h, h) + F(-h, -h)) / (4 * h * h)
    f1 = (F(h, 0) - F(-h, 0)) / (2 * h)
    f2 = (F(0, h) - F(0, -h)) / (2 * h)
    return a * f11 + b * f12 + c * f22 + d * f1 + e * f2


# ---------------------------------------------------------------------------
# instances

_X, _Y = sp.symbols("x y", real=True)


def _lambdify(exprs):
    fns = [sp.lambdify((_X, _Y), sp.sympify(e), modules="numpy") for e in exprs]

    def coeffs(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return tuple(np.broadcast_to(np.asarray(fn(x, y), dtype=float), np.broadcast(x, y).shape) for fn in fns)

    return coeffs


@lru_cache(maxsize=32)
def _triangle_expressions(g12: float, g13: float, g23: float):
    f = sp.Function("f")(_X, _Y)

    def v1(u):
        return sp.diff(u, _X) - sp.diff(u, _Y)

    def v2(u):
        return _X * sp.diff(u, _X) + (_Y - 1) * sp.diff(u, _Y)

    def v3(u):
        return (_X - 1) * sp.diff(u, _X) + _Y * sp.diff(u, _Y)

    L = (
        g12 * (_X * _Y * v1(v1(f)) + (_Y - _X) * v1(f))
        + g23 * (_Y * v2(v2(f)) + (_Y - 1) * v2(f))
        + g13 * (_X * v3(v3(f)) + (_X - 1) * v3(f))
    )
    L = sp.expand(L)
    ders = [sp.diff(f, _X, 2), sp.diff(f, _X, _Y), sp.diff(f, _Y, 2), sp.diff(f, _X), sp.diff(f, _Y)]
    return tuple(sp.simplify(L.coeff(dv)) for dv in ders)


def _triangle_charts():
    c00 = Chart("corner_00", BoundaryClass(BoundaryTag.REGULAR_CORNER))
    # (1, 0): Kimura coordinate y, quadratic coordinate s = 1 - x - y
    c10 = Chart("corner_10", BoundaryClass(BoundaryTag.MIXED_CORNER), ((0.0, 1.0), (-1.0, -1.0)), (0.0, 1.0))
    # (0, 1): Kimura coordinate x, quadratic coordinate s
    c01 = Chart("corner_01", BoundaryClass(BoundaryTag.MIXED_CORNER), ((1.0, 0.0), (-1.0, -1.0)), (0.0, 1.0))
    ex0 = Chart("edge_x0", BoundaryClass(BoundaryTag.REGULAR_EDGE))
    ey0 = Chart("edge_y0", BoundaryClass(BoundaryTag.REGULAR_EDGE), ((0.0, 1.0), (1.0, 0.0)))
    ehyp = Chart("edge_hyp", BoundaryClass(BoundaryTag.INFINITY_EDGE), ((1.0, 0.0), (-1.0, -1.0)), (0.0, 1.0))
    faces = [
        Face("x0", BoundaryTag.REGULAR_EDGE, (0.0, 0.0), (0.0, 1.0), ex0),
        Face("y0", BoundaryTag.REGULAR_EDGE, (0.0, 0.0), (1.0, 0.0), ey0),
        Face("hyp", BoundaryTag.INFINITY_EDGE, (1.0, 0.0), (0.0, 1.0), ehyp),
    ]
    corners = [
        Corner("c00", (0.0, 0.0), BoundaryTag.REGULAR_CORNER, c00, ("x0", "y0")),
        Corner("c10", (1.0, 0.0), BoundaryTag.MIXED_CORNER, c10, ("y0", "hyp")),
        Corner("c01", (0.0, 1.0), BoundaryTag.MIXED_CORNER, c01, ("x0", "hyp")),
    ]
    return faces, corners


def triangle_instance(g12: float = 1.0, g13: float = 1.0, g23: float = 1.0) -> OperatorSpec:
    """The three-term operator on the triangle {x, y >= 0, x + y <= 1}.

    Edges x = 0 and y = 0 are regular (transverse), x + y = 1 is an infinity
    edge; the corner at the origin is regular and the other two are mixed.
    """
    gs = (g12, g13, g23)
    if not all(g > 0 and math.isfinite(g) for g in gs):
        raise ValueError(f"all rates must be positive, got {gs}")
    exprs = _triangle_expressions(float(g12), float(g13), float(g23))
    faces, corners = _triangle_charts()
    return OperatorSpec(
        name=f"triangle({g12:g},{g13:g},{g23:g})",
        coefficients=_lambdify(exprs),
        domain="triangle",
        faces=faces,
        corners=corners,
        params={"g12": g12, "g13": g13, "g23": g23, "expressions": [str(e) for e in exprs]},
    )


def _square_geometry(face_tags: dict):
    """Faces and corners of the unit square for declared face types."""
    reg, inf = BoundaryTag.REGULAR_EDGE, BoundaryTag.INFINITY_EDGE

    def kinds_chart(name, tag, M, c):
        return Chart(name, BoundaryClass(tag), M, c)

    # local normal coordinate first; for infinity faces the tangential one first
    face_defs = {
        "x0": ((0.0, 0.0), (0.0, 1.0), ((1.0, 0.0), (0.0, 1.0)), (0.0, 0.0)),
        "x1": ((1.0, 0.0), (1.0, 1.0), ((-1.0, 0.0), (0.0, 1.0)), (1.0, 0.0)),
        "y0": ((0.0, 0.0), (1.0, 0.0), ((0.0, 1.0), (1.0, 0.0)), (0.0, 0.0)),
        "y1": ((0.0, 1.0), (1.0, 1.0), ((0.0, -1.0), (1.0, 0.0)), (1.0, 0.0)),
    }
    faces = []
    for name, (p0, p1, M, c) in face_defs.items():
        tag = face_tags[name]
        if tag is inf:
            M = (M[1], M[0])
            c = (c[1], c[0])
        faces.append(Face(name, tag, p0, p1, kinds_chart("edge_" + name, tag, M, c)))
    fmap = {f.name: f for f in faces}
    corners = []
    for pt, (fa, fb) in {
        (0.0, 0.0): ("x0", "y0"),
        (1.0, 0.0): ("x1", "y0"),
        (0.0, 1.0): ("x0", "y1"),
        (1.0, 1.0): ("x1", "y1"),
    }.items():
        ta, tb = fmap[fa].tag, fmap[fb].tag
        # rows of the corner chart: the normal coordinates of both faces
        ra = fmap[fa].chart.matrix[fmap[fa].normal_index]
        rb = fmap[fb].chart.matrix[fmap[fb].normal_index]
        ca = fmap[fa].chart.offset[fmap[fa].normal_index]
        cb = fmap[fb].chart.offset[fmap[fb].normal_index]
        if ta is reg and tb is reg:
            tag, rows, offs = BoundaryTag.REGULAR_CORNER, (ra, rb), (ca, cb)
        elif ta is inf and tb is inf:
            tag, rows, offs = BoundaryTag.INFINITY_CORNER, (ra, rb), (ca, cb)
        else:
            tag = BoundaryTag.MIXED_CORNER
            rows, offs = ((ra, rb), (ca, cb)) if ta is reg else ((rb, ra), (cb, ca))
        chart = Chart(f"corner_{int(pt[0])}{int(pt[1])}", BoundaryClass(tag), tuple(map(tuple, rows)), tuple(offs))
        corners.append(Corner(f"c{int(pt[0])}{int(pt[1])}", pt, tag, chart, (fa, fb)))
    return faces, corners


def unit_square_instance(
    drift_x: tuple = (1.0, 1.0),
    drift_y: tuple = (1.0, 1.0),
    diff_x: float = 1.0,
    diff_y: float = 1.0,
) -> OperatorSpec:
    """Product of Wright-Fisher operators on [0, 1]^2.

    ``diff_x * x(1-x) d_xx + (bx0 (1-x) - bx1 x) d_x`` plus the same in y, with
    ``drift_x = (bx0, bx1)``.  All four faces are regular; a zero entry makes
    the corresponding face tangent.
    """
    bx0, bx1 = drift_x
    by0, by1 = drift_y
    exprs = (
        diff_x * _X * (1 - _X),
        sp.Integer(0),
        diff_y * _Y * (1 - _Y),
        bx0 * (1 - _X) - bx1 * _X,
        by0 * (1 - _Y) - by1 * _Y,
    )
    reg = BoundaryTag.REGULAR_EDGE
    faces, corners = _square_geometry({"x0": reg, "x1": reg, "y0": reg, "y1": reg})
    return OperatorSpec(
        name="unit_square_wf",
        coefficients=_lambdify(exprs),
        domain="square",
        faces=faces,
        corners=corners,
        params={"expressions": [str(e) for e in exprs]},
    )


def model_instance(cls: BoundaryClass | str, frozen: FrozenCoefficients) -> OperatorSpec:
    """Constant-coefficient model operator on its model space, as a single-chart spec."""
    if isinstance(cls, str):
        cls = BoundaryClass.from_name(cls)
    kinds = cls.kinds
    diffs = [frozen.a, frozen.b]
    drifts = [frozen.d, frozen.e]

    def coeffs(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        v = [x, y]
        sec, first = [], []
        for i, kind in enumerate(kinds):
            if kind == "kimura":
                sec.append(diffs[i] * v[i])
                first.append(drifts[i] * np.ones_like(v[i]))
            elif kind == "euclid":
                sec.append(diffs[i] * np.ones_like(v[i]))
                first.append(drifts[i] * np.ones_like(v[i]))
            else:
                sec.append(diffs[i] * v[i] ** 2)
                first.append(diffs[i] * v[i])
        return sec[0], np.zeros(np.broadcast(x, y).shape), sec[1], first[0], first[1]

    faces = []
    for i, kind in enumerate(kinds):
        if kind == "euclid":
            continue
        tag = BoundaryTag.REGULAR_EDGE if kind == "kimura" else BoundaryTag.INFINITY_EDGE
        other = kinds[1 - i]
        # tangential coordinate is the other one; its extent is nominal for sampling
        lo = 0.0 if other != "euclid" else -1.0
        if other == "quadratic":
            lo = 0.05
        p0 = [0.0, 0.0]
        p1 = [0.0, 0.0]
        p0[1 - i], p1[1 - i] = lo, 2.0
        if tag is BoundaryTag.REGULAR_EDGE:
            M = ((1.0, 0.0), (0.0, 1.0)) if i == 0 else ((0.0, 1.0), (1.0, 0.0))
        else:
            M = ((0.0, 1.0), (1.0, 0.0)) if i == 0 else ((1.0, 0.0), (0.0, 1.0))
        faces.append(Face(f"face{i}", tag, tuple(p0), tuple(p1), Chart(f"edge{i}", BoundaryClass(tag), M)))
    corners = []
    if len(faces) == 2:
        corners.append(Corner("origin", (0.0, 0.0), cls.tag, Chart("corner", cls), ("face0", "face1")))
    spec = OperatorSpec(
        name=f"model_{cls.name}",
        coefficients=coeffs,
        domain="model",
        faces=faces,
        corners=corners,
        model_class=cls,
        constant=True,
        frozen=frozen,
        interior_chart=Chart("model", cls),
    )
    return spec


def spec_from_polynomials(exprs: Sequence[str], domain: str, face_classes: dict | None = None, name: str = "custom") -> OperatorSpec:
    """Operator with polynomial (sympy-parsable) coefficients A, B, C, Dx, Dy in x and y.

    Parameters:
        exprs: five expressions for A, B, C, Dx, Dy.
        domain: ``"triangle"`` or ``"square"``.
        face_classes: for squares, mapping face name (x0, x1, y0, y1) to ``e_reg``
            or ``e_inf``.  Triangles use the standard layout (x0, y0 regular, hyp infinity).
    """
    if len(exprs) != 5:
        raise SchemaError("expected five coefficient expressions", ["A", "B", "C", "Dx", "Dy"])
    parsed = []
    bad = []
    for key, e in zip(("A", "B", "C", "Dx", "Dy"), exprs):
        try:
            ex = sp.sympify(e, locals={"x": _X, "y": _Y})
        except (sp.SympifyError, SyntaxError, TypeError):
            bad.append(key)
            continue
        if not ex.free_symbols <= {_X, _Y}:
            bad.append(key)
            continue
        parsed.append(ex)
    if bad:
        raise SchemaError("unparsable coefficient expressions", bad)
    if domain == "triangle":
        faces, corners = _triangle_charts()
    elif domain == "square":
        fc = face_classes or {}
        tags = {}
        for fname in ("x0", "x1", "y0", "y1"):
            tags[fname] = BoundaryClass.from_name(fc.get(fname, "e_reg")).tag
        faces, corners = _square_geometry(tags)
    else:
        raise SchemaError("unknown domain", ["domain"])
    return OperatorSpec(name=name, coefficients=_lambdify(parsed), domain=domain, faces=faces, corners=corners,
                        params={"expressions": [str(e) for e in parsed]})


_OPERATOR_KEYS = {"builtin", "domain", "g12", "g13", "g23", "a", "b", "c", "dx", "dy",
                  "face_x0", "face_x1", "face_y0", "face_y1", "class", "d", "e", "name"}


def load_operator_config(path) -> tuple[OperatorSpec, configparser.ConfigParser]:
    """Read an INI-style config with an ``[operator]`` section.

    Keys of ``[operator]``:

    * ``builtin = triangle`` with optional ``g12, g13, g23``;
    * ``builtin = square`` for the Wright-Fisher product;
    * ``builtin = model`` with ``class`` and ``a, b, d, e``;
    * or ``domain = triangle|square`` with polynomial ``a, b, c, dx, dy``
      (coefficients of d_xx, d_xy, d_yy, d_x, d_y) and, for squares,
      ``face_x0 .. face_y1`` set to ``e_reg`` or ``e_inf``.

    Raises:
        SchemaError: listing the offending keys.
    """
    cp = configparser.ConfigParser()
    try:
        read = cp.read(path)
    except configparser.Error as exc:
        raise SchemaError(f"malformed config file {path}: {exc}") from exc
    if not read:
        raise SchemaError(f"cannot read config file {path}")
    unknown_sections = [s for s in cp.sections() if s not in ("operator", "run", "grids")]
    if unknown_sections:
        raise SchemaError("unknown sections", unknown_sections)
    if "operator" not in cp:
        raise SchemaError("missing section", ["operator"])
    return operator_from_section(dict(cp["operator"])), cp


def operator_from_section(sec: dict) -> OperatorSpec:
    unknown = sorted(set(sec) - _OPERATOR_KEYS)
    if unknown:
        raise SchemaError("unknown keys in [operator]", unknown)

    def num(key, default):
        try:
            return float(sec.get(key, default))
        except ValueError:
            raise SchemaError("non-numeric value", [key]) from None

    builtin = sec.get("builtin")
    if builtin == "triangle":
        return triangle_instance(num("g12", 1.0), num("g13", 1.0), num("g23", 1.0))
    if builtin == "square":
        return unit_square_instance()
    if builtin == "model":
        if "class" not in sec:
            raise SchemaError("model operator needs a class", ["class"])
        fr = FrozenCoefficients(num("a", 1.0), num("b", 1.0), num("d", 0.0), num("e", 0.0))
        return model_instance(sec["class"], fr)
    if builtin is not None:
        raise SchemaError("unknown builtin operator", ["builtin"])
    missing = [k for k in ("domain", "a", "b", "c", "dx", "dy") if k not in sec]
    if missing:
        raise SchemaError("missing keys in [operator]", missing)
    faces = {k[5:]: v for k, v in sec.items() if k.startswith("face_")}
    spec = spec_from_polynomials(
        [sec["a"], sec["b"], sec["c"], sec["dx"], sec["dy"]], sec["domain"], faces, name=sec.get("name", "custom")
    )
    return spec

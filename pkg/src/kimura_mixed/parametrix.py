"""Epsilon-grid cover, parametrix assembly, perturbation terms and Neumann solve.

The boundary collar is covered by corner neighborhoods and lattices of edge
neighborhoods.  Each neighborhood carries an inner cutoff chi and an outer
cutoff phi defined on boxes in scaled chart coordinates: Kimura coordinates are
divided by eps^2, quadratic and tangential ones by eps.  Corner boxes use eps / 2
in every coordinate and the edge lattices stop three steps short of the
corners, so that no edge model (Euclidean along the face) is used next to an
adjacent face.  The inner cutoffs are
normalized into a partition of phi_U, a smooth union of boxes, and the
interior is handled by a Dirichlet finite-difference solve multiplied by psi,
the complement of a smaller union.

The approximate solution operator is

    Q g = sum_n phi_n A_n[chi_n g] + psi Q_int[(1 - phi_U) g],

where A_n solves the model problem with coefficients frozen at the center of
neighborhood n.  It satisfies (d_t - L) Q g = g + E0 g + E1 g + Einf g with

    E0 g   = sum_n phi_n (L_M,n - L) A_n[chi_n g]     (frozen-vs-true coefficients)
    E1 g   = sum_n [phi_n, L] A_n[chi_n g]            (cutoff commutators)
    Einf g = [psi, L] Q_int[(1 - phi_U) g]            (interior commutator)

and the exact solution is Q (I + E)^{-1} g, computed by a truncated Neumann
series when the measured contraction ratio is below one.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Chart, OperatorSpec, WFMetric, classify_boundary, wf_distance
from .models2d import (BoundaryClass, BoundaryTag, FrozenCoefficients, ModelKernel2D, coordinate_rule,
                       model_solve_with_derivatives)
from .oracles import fd_solve, make_grid

__all__ = [
    "ContractionError",
    "transition",
    "plateau",
    "Neighborhood",
    "CoverGrid",
    "build_cover",
    "QuadratureBudget",
    "SpaceTimeField",
    "ParametrixEngine",
    "boundary_parametrix_apply",
    "interior_parametrix_apply",
    "PerturbationReport",
    "measure_perturbation",
    "NeumannResult",
    "neumann_solve",
    "json_record",
    "fit_exponent",
    "DuhamelSeries",
    "duhamel_local_kernel",
    "DegenerateKernel",
    "GlobalKernelValue",
    "kernel_defect",
    "global_kernel",
    "DeltaVerdict",
    "delta_limit_integral",
    "delta_limit_classify",
]

INNER = (2.0, 3.0)  # chi-tilde: 1 on |u| <= 2, 0 on |u| >= 3
OUTER = (4.0, 5.0)  # phi: 1 on |u| <= 4, 0 on |u| >= 5
PHI_U_BOX = (2.0, 2.9)  # phi_U = 1 - prod_k (1 - box_k), inside the chi-tilde boxes
PSI_BOX = (0.8, 1.9)  # psi = prod_k (1 - box_k), 1 wherever phi_U < 1
CORNER_SCALE = 0.5  # corner boxes use eps / 2 in every coordinate
EDGE_OFFSET = 3  # edge lattice points start this many steps from a face endpoint


class ContractionError(RuntimeError):
    """The measured Neumann ratio is not below one."""

    def __init__(self, msg, ratio):
        super().__init__(f"{msg} (measured ratio {ratio:.3g}); reduce epsilon or T")
        self.ratio = ratio


# ---------------------------------------------------------------------------
# cutoff profiles


def _mollifier(s):
    # exp(-1/s) and its first two derivatives, zero for s <= 0
    s = np.asarray(s, dtype=float)
    # below 1e-3 every term underflows to 0
    pos = s > 1e-3
    sp = np.where(pos, s, 1.0)
    f = np.where(pos, np.exp(-1.0 / sp), 0.0)
    f1 = np.where(pos, f / sp**2, 0.0)
    f2 = np.where(pos, f * (1.0 / sp**4 - 2.0 / sp**3), 0.0)
    return f, f1, f2


def transition(v, a: float, b: float):
    """Smooth monotone step: 0 for v <= a, 1 for v >= b.

    Returns the value and the first two derivatives in ``v``.
    """
    F, F1, F2 = _mollifier(np.asarray(v, dtype=float) - a)
    G, G1, G2 = _mollifier(b - np.asarray(v, dtype=float))
    G1 = -G1
    D = F + G
    val = F / D
    num = F1 * G - F * G1
    d1 = num / D**2
    d2 = (F2 * G - F * G2) / D**2 - 2.0 * num * (F1 + G1) / D**3
    return val, d1, d2


def plateau(u, a: float, b: float):
    """Even bump: 1 for |u| <= a, 0 for |u| >= b, with two derivatives in ``u``."""
    u = np.asarray(u, dtype=float)
    v, d1, d2 = transition(np.abs(u), a, b)
    return 1.0 - v, -np.sign(u) * d1, -d2


# ---------------------------------------------------------------------------
# neighborhoods and the cover


def _scale_of(kind: str, eps: float) -> float:
    return eps * eps if kind == "kimura" else eps


@dataclass(frozen=True)
class Neighborhood:
    """One boundary neighborhood: chart, center, per-coordinate scale and frozen model.

    ``center`` and the cutoff boxes live in the chart's local coordinates; the
    scaled coordinate is u = (local - center) / scale.
    """

    name: str
    kind: str
    cls: BoundaryClass
    chart: Chart
    center: tuple
    scale: tuple
    frozen: FrozenCoefficients

    @property
    def kinds(self) -> tuple:
        return self.cls.kinds

    def scaled(self, pts) -> np.ndarray:
        loc = self.chart.to_local(pts)
        return (loc - np.array(self.center)) / np.array(self.scale)

    def local_from_scaled(self, u) -> np.ndarray:
        return np.array(self.center) + np.asarray(u, dtype=float) * np.array(self.scale)

    def model_valid(self, loc) -> np.ndarray:
        """Points of the chart's model space (Kimura >= 0, quadratic > 0)."""
        loc = np.asarray(loc, dtype=float)
        ok = np.ones(loc.shape[:-1], dtype=bool)
        for i, kind in enumerate(self.kinds):
            if kind == "kimura":
                ok &= loc[..., i] >= 0
            elif kind == "quadratic":
                ok &= loc[..., i] > 0
        return ok

    def box(self, pts, bounds: tuple, derivs: bool = False, frame: str = "global"):
        """Product cutoff with plateau ``bounds`` in scaled coordinates.

        With ``derivs`` also returns the gradient (..., 2) and Hessian
        (..., 2, 2) in global or local coordinates (``frame``).
        """
        u = self.scaled(pts)
        r1, r1p, r1pp = plateau(u[..., 0], *bounds)
        r2, r2p, r2pp = plateau(u[..., 1], *bounds)
        val = r1 * r2
        if not derivs:
            return val
        s1, s2 = self.scale
        g = np.stack([r1p * r2 / s1, r1 * r2p / s2], -1)
        h12 = r1p * r2p / (s1 * s2)
        H = np.stack([np.stack([r1pp * r2 / s1**2, h12], -1), np.stack([h12, r1 * r2pp / s2**2], -1)], -2)
        if frame == "local":
            return val, g, H
        M = self.chart.matrix
        return val, g @ M, np.einsum("ki,...kl,lj->...ij", M, H, M)

    def chi_tilde(self, pts, derivs: bool = False, frame: str = "global"):
        return self.box(pts, INNER, derivs, frame)

    def phi(self, pts, derivs: bool = False, frame: str = "global"):
        return self.box(pts, OUTER, derivs, frame)

    def local_window(self, radius: float = INNER[1]) -> tuple:
        """Per-coordinate (lo, hi) box in local coordinates containing the scaled box of ``radius``."""
        out = []
        for c, s, kind in zip(self.center, self.scale, self.kinds):
            lo, hi = c - radius * s, c + radius * s
            if kind != "euclid":
                lo = max(lo, 0.0)
            out.append((lo, hi))
        return tuple(out)

    def polygon(self, radius: float) -> np.ndarray:
        corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float) * radius
        return self.chart.to_global(self.local_from_scaled(corners))


def _separated(P: np.ndarray, Q: np.ndarray, tol: float = 1e-12) -> bool:
    # separating-axis test for convex polygons
    for poly in (P, Q):
        for k in range(len(poly)):
            e = poly[(k + 1) % len(poly)] - poly[k]
            n = np.array([-e[1], e[0]])
            a, b = P @ n, Q @ n
            if a.max() <= b.min() + tol or b.max() <= a.min() + tol:
                return True
    return False


@dataclass
class CoverGrid:
    """Epsilon-grid cover of the boundary collar with its cutoffs.

    Attributes:
        epsilon: grid scale.
        neighborhoods: corner neighborhoods followed by the edge lattices.
        chi_overlaps: for each neighborhood, the indices whose inner boxes meet its own.
        phi_overlaps: the same for outer boxes.
        partition_bound: measured maximum of the sum of inner cutoffs.
    """

    spec: OperatorSpec
    epsilon: float
    neighborhoods: list
    chi_overlaps: list
    phi_overlaps: list
    partition_bound: float = float("nan")

    def __len__(self):
        return len(self.neighborhoods)

    def inside(self, pts) -> np.ndarray:
        return self.spec.contains(pts, tol=1e-12)

    def chi_tilde_sum(self, pts, derivs: bool = False, subset=None):
        pts = np.asarray(pts, dtype=float)
        idx = range(len(self.neighborhoods)) if subset is None else subset
        val = np.zeros(pts.shape[:-1])
        if not derivs:
            for k in idx:
                val += self.neighborhoods[k].chi_tilde(pts)
            return val
        g = np.zeros(pts.shape)
        H = np.zeros(pts.shape + (2,))
        for k in idx:
            v, gk, Hk = self.neighborhoods[k].chi_tilde(pts, derivs=True)
            val += v
            g += gk
            H += Hk
        return val, g, H

    def _complement_product(self, pts, bounds, derivs: bool):
        # prod_k (1 - box_k) with forward-mode gradient and Hessian
        pts = np.asarray(pts, dtype=float)
        P = np.ones(pts.shape[:-1])
        G = np.zeros(pts.shape)
        H = np.zeros(pts.shape + (2,))
        for nb in self.neighborhoods:
            if not derivs:
                P = P * (1.0 - nb.box(pts, bounds))
                continue
            b, gb, Hb = nb.box(pts, bounds, derivs=True)
            if not np.any(b):
                continue
            f = 1.0 - b
            H = (H * f[..., None, None] - np.einsum("...i,...j->...ij", G, gb)
                 - np.einsum("...i,...j->...ij", gb, G) - P[..., None, None] * Hb)
            G = G * f[..., None] - P[..., None] * gb
            P = P * f
        return (P, G, H) if derivs else P

    def phi_U(self, pts, derivs: bool = False):
        """Collar cutoff 1 - prod_k (1 - box_k): 1 within 1.5 scaled units of a center."""
        if not derivs:
            return 1.0 - self._complement_product(pts, PHI_U_BOX, False)
        P, G, H = self._complement_product(pts, PHI_U_BOX, True)
        return 1.0 - P, -G, -H

    def psi(self, pts, derivs: bool = False):
        """Interior cutoff prod_k (1 - box_k): 0 near the boundary, 1 wherever phi_U < 1."""
        return self._complement_product(pts, PSI_BOX, derivs)

    def chi(self, k: int, pts) -> np.ndarray:
        """Normalized inner cutoff chi_k = phi_U chi-tilde_k / sum chi-tilde (zero off the domain)."""
        pts = np.asarray(pts, dtype=float)
        own = self.neighborhoods[k].chi_tilde(pts)
        out = np.zeros(own.shape)
        pos = (own > 0) & self.inside(pts)
        if not np.any(pos):
            return out
        total = self.chi_tilde_sum(pts[pos], subset=self.chi_overlaps[k])
        U = 1.0
        for j in self.chi_overlaps[k]:
            U = U * (1.0 - self.neighborhoods[j].box(pts[pos], PHI_U_BOX))
        out[pos] = (1.0 - U) * own[pos] / total
        return out

    def dirichlet_mask(self, pts) -> np.ndarray:
        """Nodes held at zero by the interior solve: psi vanishes there."""
        return self.psi(pts) <= 0.0

    def phi(self, k: int, pts) -> np.ndarray:
        return self.neighborhoods[k].phi(pts)

    @property
    def cutoffs(self) -> list:
        """Per-neighborhood (chi, phi) callables."""
        return [((lambda p, k=k: self.chi(k, p)), (lambda p, k=k: self.phi(k, p))) for k in range(len(self))]

    @property
    def interior_cutoffs(self) -> tuple:
        return (self.phi_U, self.psi)

    def collar_samples(self, n: int = 21) -> np.ndarray:
        """Points of the outer boxes (in the domain) used for cutoff checks."""
        out = []
        s = np.linspace(-OUTER[1], OUTER[1], n)
        U = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
        for nb in self.neighborhoods:
            loc = nb.local_from_scaled(U)
            pts = nb.chart.to_global(loc[nb.model_valid(loc)])
            out.append(pts[self.inside(pts)])
        return np.concatenate(out) if out else np.zeros((0, 2))

    def boundary_samples(self, n: int = 401) -> np.ndarray:
        pts = [f.sample(n) for f in self.spec.faces]
        return np.concatenate(pts) if pts else np.zeros((0, 2))

    def summary(self) -> dict:
        counts = {}
        for nb in self.neighborhoods:
            key = f"{nb.kind}:{nb.cls.name}"
            counts[key] = counts.get(key, 0) + 1
        return {"epsilon": self.epsilon, "neighborhoods": len(self), "counts": counts,
                "partition_bound": self.partition_bound}


def _try_frozen(spec: OperatorSpec, chart: Chart, center) -> FrozenCoefficients | None:
    try:
        return spec.frozen_coefficients(chart, np.asarray(center, dtype=float))
    except ValueError:
        return None


def build_cover(spec: OperatorSpec, epsilon: float) -> CoverGrid:
    """Corner neighborhoods plus edge lattices Z_j = (0, eps j) in each face chart.

    Edge lattice points where the frozen model is degenerate (at corners) are
    skipped; the corner neighborhoods cover them.

    Raises:
        ValueError: epsilon is not positive, or corner neighborhoods overlap
            (epsilon too large).
    """
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    nbs = []
    for c in spec.corners:
        center = c.chart.to_local(np.array(c.point, dtype=float))
        fr = _try_frozen(spec, c.chart, center)
        if fr is None:
            raise ValueError(f"corner {c.name}: frozen model is degenerate")
        scale = (CORNER_SCALE * epsilon,) * 2
        nbs.append(Neighborhood(c.name, "corner", c.chart.cls, c.chart, tuple(center), scale, fr))
    corners = [nb.polygon(OUTER[1]) for nb in nbs]
    for i in range(len(corners)):
        for j in range(i + 1, len(corners)):
            if not _separated(corners[i], corners[j]):
                raise ValueError(f"epsilon = {epsilon} too large: corner neighborhoods "
                                 f"{nbs[i].name} and {nbs[j].name} overlap")
    corner_pts = [np.array(c.point, dtype=float) for c in spec.corners]
    for f in spec.faces:
        ni = f.normal_index
        ti = 1 - ni
        t0, t1 = sorted(float(f.chart.to_local(np.array(p, dtype=float))[ti]) for p in (f.p0, f.p1))
        scale = tuple(_scale_of(k, epsilon) for k in f.chart.cls.kinds)
        j0 = int(math.ceil(t0 / epsilon - 1e-9)) + EDGE_OFFSET
        j1 = int(math.floor(t1 / epsilon + 1e-9)) - EDGE_OFFSET
        for j in range(j0, j1 + 1):
            center = np.zeros(2)
            center[ti] = epsilon * j
            g = f.chart.to_global(center)
            if any(np.allclose(g, cp, atol=1e-12) for cp in corner_pts):
                continue
            fr = _try_frozen(spec, f.chart, center)
            if fr is None:
                continue
            nbs.append(Neighborhood(f"{f.name}[{j}]", "edge", f.chart.cls, f.chart, tuple(center), scale, fr))
    inner = [nb.polygon(INNER[1]) for nb in nbs]
    outer = [nb.polygon(OUTER[1]) for nb in nbs]
    chi_ov = [[j for j in range(len(nbs)) if j == i or not _separated(inner[i], inner[j])] for i in range(len(nbs))]
    phi_ov = [[j for j in range(len(nbs)) if j == i or not _separated(outer[i], outer[j])] for i in range(len(nbs))]
    cover = CoverGrid(spec, float(epsilon), nbs, chi_ov, phi_ov)
    samples = np.concatenate([cover.collar_samples(), cover.boundary_samples()])
    cover.partition_bound = float(np.max(cover.chi_tilde_sum(samples))) if len(samples) else 0.0
    # model faces are nominal (unbounded), so only bounded domains are checked
    bnd = cover.boundary_samples() if spec.domain != "model" else np.zeros((0, 2))
    if len(bnd) and np.min(cover.phi_U(bnd)) < 1.0 - 1e-12:
        raise ValueError(f"epsilon = {epsilon} too large: the edge lattices do not cover the boundary")
    return cover


# ---------------------------------------------------------------------------
# tabulation on scaled grids


class _Axis:
    """Axis uniform in a mapped coordinate: sqrt for Kimura, log for quadratic."""

    def __init__(self, kind: str, radius: float, n: int):
        self.kind = kind
        if kind == "kimura":
            self.lo, self.hi = 0.0, math.sqrt(radius)
        elif kind == "quadratic":
            self.lo, self.hi = math.log(radius * 1e-3), math.log(radius)
        else:
            self.lo, self.hi = -radius, radius
        self.n = n
        self.m = np.linspace(self.lo, self.hi, n)
        self.u = self.unmap(self.m)

    def map(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "kimura":
            return np.sqrt(np.maximum(u, 0.0))
        if self.kind == "quadratic":
            return np.log(np.maximum(u, 1e-300))
        return u

    def unmap(self, m):
        if self.kind == "kimura":
            return m**2
        if self.kind == "quadratic":
            return np.exp(m)
        return m

    def locate(self, u):
        x = (np.clip(self.map(u), self.lo, self.hi) - self.lo) / (self.hi - self.lo) * (self.n - 1)
        i0 = np.minimum(np.floor(x).astype(np.int64), self.n - 2)
        return i0, x - i0


class _Grid2:
    """Tensor grid in scaled coordinates with bilinear interpolation (clamped)."""

    def __init__(self, kinds, radius: float, n: int):
        self.axes = (_Axis(kinds[0], radius, n), _Axis(kinds[1], radius, n))
        U1, U2 = np.meshgrid(self.axes[0].u, self.axes[1].u, indexing="ij")
        self.points = np.stack([U1, U2], -1).reshape(-1, 2)

    @property
    def shape(self):
        return (self.axes[0].n, self.axes[1].n)

    def weights(self, u):
        """Flat indices (..., 4) and weights (..., 4) of the bilinear stencil at scaled points ``u``."""
        u = np.asarray(u, dtype=float)
        i, a = self.axes[0].locate(u[..., 0])
        j, b = self.axes[1].locate(u[..., 1])
        n2 = self.axes[1].n
        idx = np.stack([i * n2 + j, i * n2 + j + 1, (i + 1) * n2 + j, (i + 1) * n2 + j + 1], -1)
        w = np.stack([(1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b], -1)
        return idx, w

    def interpolate(self, values, u):
        """``values`` has shape (..., n1 * n2); returns (..., *u.shape[:-1])."""
        idx, w = self.weights(u)
        values = np.asarray(values)
        return (values[..., idx] * w).sum(-1)


@dataclass(frozen=True)
class QuadratureBudget:
    """Resolution of the local model solves and tables.

    Parameters:
        order, panels: Gauss points per panel and panels per coordinate window.
        n_time, time_power: time rule tau = t sigma^power with n_time nodes.
        solve_nodes: per-axis nodes of the grid on which each local solve is tabulated.
        storage_nodes: per-axis nodes on which the iterated data are stored.
        table_nodes: per-axis nodes of the integrand table on the inner box.
        levels: time levels of the space-time tables on [0, T].
        lattice_n: intervals per axis of the interior finite-difference lattice.
        dt: target step of the interior solve.
    """

    order: int = 10
    panels: int = 3
    n_time: int = 8
    time_power: int = 4
    solve_nodes: int = 11
    storage_nodes: int = 17
    table_nodes: int = 41
    levels: int = 3
    lattice_n: int = 64
    dt: float = 1e-3


# weighted derivative channels: u, v1 d1, v2 d2, w1 d11, w2 d22, sqrt(w1 w2) d12
_CHANNELS = ("u", "d1", "d2", "d11", "d22", "d12")


def _weights(kinds, loc):
    # first-derivative weights v and second-derivative weights w per coordinate
    v, w = [], []
    for i, kind in enumerate(kinds):
        x = loc[..., i]
        if kind == "kimura":
            v.append(np.ones_like(x))
            w.append(np.maximum(x, 0.0))
        elif kind == "quadratic":
            v.append(x)
            w.append(x * x)
        else:
            v.append(np.ones_like(x))
            w.append(np.ones_like(x))
    return v, w


def _safe_div(a, b):
    return np.where(b > 0, a / np.where(b > 0, b, 1.0), 0.0)


@dataclass
class SpaceTimeField:
    """Values of a space-time function at the engine's storage points and time levels."""

    times: np.ndarray
    values: np.ndarray  # (levels + 1, n_points)

    def sup_norm(self, mask=None) -> float:
        v = self.values if mask is None else self.values[:, mask]
        return float(np.max(np.abs(v))) if v.size else 0.0

    def __add__(self, other):
        return SpaceTimeField(self.times, self.values + other.values)

    def scaled(self, c: float):
        return SpaceTimeField(self.times, c * self.values)


@dataclass
class _Pair:
    # static data of one neighborhood acting on the storage points in its outer box
    targets: np.ndarray
    idx: np.ndarray
    w: np.ndarray
    c0: np.ndarray  # (6, n) coefficients of E0 on the channels
    c1: np.ndarray  # (6, n) coefficients of E1 on the channels
    phi: np.ndarray


class ParametrixEngine:
    """Precomputed geometry of the parametrix for one (cover, T).

    Storage points are the per-neighborhood storage grids followed by the
    active nodes of the interior lattice.  Iterated data live on these points
    at the time levels ``times``.
    """

    def __init__(self, cover: CoverGrid, T: float, budget: QuadratureBudget | None = None):
        if T <= 0:
            raise ValueError("T must be positive")
        self.cover = cover
        self.spec = cover.spec
        self.T = float(T)
        self.budget = budget or QuadratureBudget()
        b = self.budget
        self.times = self.T * np.arange(b.levels + 1) / b.levels
        nbs = cover.neighborhoods
        self.solve_grids = [_Grid2(nb.kinds, OUTER[1], b.solve_nodes) for nb in nbs]
        self.store_grids = [_Grid2(nb.kinds, OUTER[1], b.storage_nodes) for nb in nbs]
        self.table_grids = [_Grid2(nb.kinds, INNER[1], b.table_nodes) for nb in nbs]
        self.solve_local = [nb.local_from_scaled(g.points) for nb, g in zip(nbs, self.solve_grids)]
        # storage points
        pts, owner = [], []
        for k, (nb, g) in enumerate(zip(nbs, self.store_grids)):
            pts.append(nb.chart.to_global(nb.local_from_scaled(g.points)))
            owner.append(np.full(len(g.points), k))
        steps = max(1, int(math.ceil(self.T / b.levels / b.dt - 1e-9)))
        self.fd_every = steps
        grid = make_grid(self.spec, n=b.lattice_n, dt=self.T / (b.levels * steps))
        lat = grid.points
        self.lattice = grid.with_dirichlet(cover.dirichlet_mask(lat))
        self.lattice_pts = self.lattice.active_points
        pts.append(self.lattice_pts)
        owner.append(np.full(len(self.lattice_pts), -1))
        # measurement-only points crossing the collar ramps, which may be thinner than the lattice spacing
        layer = np.concatenate([_layer_points(nb) for nb in nbs]) if nbs else np.zeros((0, 2))
        pts.append(layer)
        owner.append(np.full(len(layer), -2))
        self.points = np.concatenate(pts)
        self.owner = np.concatenate(owner)
        self.inside = cover.inside(self.points)
        self.store_slices = []
        start = 0
        for g in self.store_grids:
            self.store_slices.append(slice(start, start + len(g.points)))
            start += len(g.points)
        self.lattice_slice = slice(start, start + len(self.lattice_pts))
        self.layer_slice = slice(self.lattice_slice.stop, self.lattice_slice.stop + len(layer))
        # integrand tables: chi on the inner box and interpolation from storage
        self.table_chi, self.table_global, self.table_from_store = [], [], []
        for k, (nb, tg, sg) in enumerate(zip(nbs, self.table_grids, self.store_grids)):
            gp = nb.chart.to_global(nb.local_from_scaled(tg.points))
            self.table_global.append(gp)
            self.table_chi.append(cover.chi(k, gp))
            self.table_from_store.append(sg.weights(tg.points))
        self.one_minus_phiU = 1.0 - cover.phi_U(self.lattice_pts)
        self._pairs = [self._pair(k) for k in range(len(nbs))]
        self._setup_interior_commutator()

    # -- static data ----------------------------------------------------------
    def _pair(self, k: int) -> _Pair:
        nb = self.cover.neighborhoods[k]
        cand = [self.store_slices[j] for j in self.cover.phi_overlaps[k]] + [self.lattice_slice, self.layer_slice]
        idx_all = np.concatenate([np.arange(s.start, s.stop) for s in cand])
        P = self.points[idx_all]
        loc = nb.chart.to_local(P)
        u = (loc - np.array(nb.center)) / np.array(nb.scale)
        keep = self.inside[idx_all] & nb.model_valid(loc) & np.all(np.abs(u) < OUTER[1], axis=-1)
        idx_all, P, loc, u = idx_all[keep], P[keep], loc[keep], u[keep]
        phi, gphi, Hphi = nb.phi(P, derivs=True, frame="local")
        keep = phi > 0
        idx_all, P, loc, u, phi, gphi, Hphi = idx_all[keep], P[keep], loc[keep], u[keep], phi[keep], gphi[keep], Hphi[keep]
        a_h, b_h, c_h, d_h, e_h = self.spec.local_coefficients(nb.chart, loc)
        v, w = _weights(nb.kinds, loc)
        fr = nb.frozen
        diffM = (fr.a, fr.b)
        driftM = []
        for i, kind in enumerate(nb.kinds):
            driftM.append(diffM[i] * loc[:, i] if kind == "quadratic" else np.full(len(loc), fr.drift(i)))
        coef_ii = (a_h, c_h)
        drift = (d_h, e_h)
        c0 = np.zeros((6, len(loc)))
        for i in range(2):
            c0[1 + i] = _safe_div(driftM[i] - drift[i], v[i])
            c0[3 + i] = diffM[i] - _safe_div(coef_ii[i], w[i])
        c0[5] = -_safe_div(b_h, np.sqrt(w[0] * w[1]))
        c0 *= phi[None, :]
        p1, p2 = gphi[:, 0], gphi[:, 1]
        c1 = np.zeros((6, len(loc)))
        c1[0] = -(a_h * Hphi[:, 0, 0] + b_h * Hphi[:, 0, 1] + c_h * Hphi[:, 1, 1] + d_h * p1 + e_h * p2)
        c1[1] = -_safe_div(2 * a_h * p1 + b_h * p2, v[0])
        c1[2] = -_safe_div(b_h * p1 + 2 * c_h * p2, v[1])
        idx, wts = self.solve_grids[k].weights(u)
        return _Pair(idx_all, idx, wts, c0, c1, phi)

    def _setup_interior_commutator(self):
        P = self.points
        ok = self.inside.copy()
        psi, g, H = self.cover.psi(P, derivs=True)
        active = ok & ((np.abs(g).sum(-1) > 0) | (np.abs(H).sum((-1, -2)) > 0))
        A, B, C, Dx, Dy = self.spec.global_coefficients(P[active])
        gx, gy = g[active, 0], g[active, 1]
        Lpsi = A * H[active, 0, 0] + B * H[active, 0, 1] + C * H[active, 1, 1] + Dx * gx + Dy * gy
        self._inf_targets = np.nonzero(active)[0]
        self._inf_coef = np.stack([-Lpsi, -(2 * A * gx + B * gy), -(B * gx + 2 * C * gy)])
        self.psi_store = psi

    # -- integrands -------------------------------------------------------------
    def _tables(self, source) -> list:
        """Per-neighborhood (levels + 1, n_table) values of chi_k * g."""
        out = []
        for k in range(len(self.cover)):
            if isinstance(source, SpaceTimeField):
                idx, w = self.table_from_store[k]
                vals = source.values[:, self.store_slices[k]]
                g = (vals[:, idx] * w).sum(-1)
            else:
                gp = self.table_global[k]
                g = np.stack([_eval_source(source, t, gp) for t in self.times])
            out.append(g * self.table_chi[k][None, :])
        return out

    def _lattice_forcing(self, source) -> np.ndarray:
        if isinstance(source, SpaceTimeField):
            g = source.values[:, self.lattice_slice]
        else:
            g = np.stack([_eval_source(source, t, self.lattice_pts) for t in self.times])
        return g * self.one_minus_phiU[None, :]

    def _time_slab(self, table: np.ndarray, s: float) -> np.ndarray:
        x = np.clip(s / self.T * self.budget.levels, 0.0, self.budget.levels)
        i = min(int(math.floor(x)), self.budget.levels - 1)
        th = x - i
        return (1 - th) * table[i] + th * table[i + 1]

    # -- local and interior solves ----------------------------------------------
    def local_solve(self, k: int, table: np.ndarray) -> np.ndarray:
        """Weighted channels (levels + 1, 6, n_solve) of A_k[chi_k g] on the solve grid."""
        nb = self.cover.neighborhoods[k]
        b = self.budget
        tg = self.table_grids[k]
        center = np.array(nb.center)
        scale = np.array(nb.scale)
        loc = self.solve_local[k]
        v, w = _weights(nb.kinds, loc)
        out = np.zeros((len(self.times), 6, len(loc)))
        if not np.any(table):
            return out
        for li in range(1, len(self.times)):
            r = _separable_solve(nb, tg, table, self, float(self.times[li]), loc)
            out[li, 0] = r["u"]
            out[li, 1] = v[0] * r["d1"]
            out[li, 2] = v[1] * r["d2"]
            out[li, 3] = w[0] * r["d11"]
            out[li, 4] = w[1] * r["d22"]
            out[li, 5] = np.sqrt(w[0] * w[1]) * r["d12"]
        return out

    def interior_solve(self, forcing: np.ndarray) -> np.ndarray:
        """Dirichlet FD solve of (d_t - L) u = forcing on the lattice; (levels + 1, n_active)."""
        if not np.any(forcing):
            return np.zeros((len(self.times), len(self.lattice_pts)))
        levels = self.budget.levels

        def g(t, x, y):
            xx = np.clip(t / self.T * levels, 0.0, levels)
            i = min(int(math.floor(xx)), levels - 1)
            th = xx - i
            return (1 - th) * forcing[i] + th * forcing[i + 1]

        res = fd_solve(self.spec, self.lattice, f=None, g=g, T=self.T, save_every=self.fd_every)
        return res.values

    def _lattice_fields(self, vals: np.ndarray):
        # full-lattice arrays of u, u_x, u_y per level (inactive nodes take the nearest active value)
        from scipy import ndimage

        grid = self.lattice
        full = np.zeros((vals.shape[0],) + grid.shape)
        full[:, grid.active] = vals
        if not np.all(grid.active):
            _, (ii, jj) = ndimage.distance_transform_edt(~grid.active, return_indices=True)
            full = full[:, ii, jj]
        ux = np.gradient(full, grid.xs, axis=1)
        uy = np.gradient(full, grid.ys, axis=2)
        return full, ux, uy

    def _lattice_interp(self, arrays, pts):
        from scipy.interpolate import RegularGridInterpolator

        grid = self.lattice
        out = []
        for arr in arrays:
            per = []
            for lv in arr:
                f = RegularGridInterpolator((grid.xs, grid.ys), lv, bounds_error=False, fill_value=None)
                per.append(f(pts))
            out.append(np.array(per))
        return out

    # -- the perturbation -----------------------------------------------------------
    def apply(self, source):
        """One application: local solves, interior solve and the three defect terms.

        Returns ``(state, parts)`` where ``state`` holds the local channels and
        interior values (to evaluate Q g) and ``parts`` maps ``E0``, ``E1``,
        ``Einf`` to :class:`SpaceTimeField` values on the storage points.
        """
        tables = self._tables(source)
        local = [self.local_solve(k, tables[k]) for k in range(len(self.cover))]
        interior = self.interior_solve(self._lattice_forcing(source))
        nl = len(self.times)
        E0 = np.zeros((nl, len(self.points)))
        E1 = np.zeros((nl, len(self.points)))
        contrib = np.zeros((len(self._pairs), 2))
        terms = []
        for k, pr in enumerate(self._pairs):
            if len(pr.targets) == 0:
                terms.append(None)
                continue
            ch = (local[k][:, :, pr.idx] * pr.w).sum(-1)  # (levels, 6, n)
            first = np.einsum("lcn,cn->ln", ch[:, 1:3], pr.c0[1:3])
            e0 = first + np.einsum("lcn,cn->ln", ch[:, 3:], pr.c0[3:])
            e1 = np.einsum("lcn,cn->ln", ch, pr.c1)
            contrib[k] = np.abs(e0).max(), np.abs(e1).max()
            # final-level pieces: first-order and second-order parts of E0, and E1
            terms.append((pr.targets, first[-1], e0[-1] - first[-1], e1[-1]))
            np.add.at(E0, (slice(None), pr.targets), e0)
            np.add.at(E1, (slice(None), pr.targets), e1)
        self.last_contributions = contrib
        self.last_terms = terms
        Einf = np.zeros((nl, len(self.points)))
        if len(self._inf_targets):
            full, ux, uy = self._lattice_fields(interior)
            u, gx, gy = self._lattice_interp((full, ux, uy), self.points[self._inf_targets])
            c = self._inf_coef
            Einf[:, self._inf_targets] = c[0] * u + c[1] * gx + c[2] * gy
        parts = {name: SpaceTimeField(self.times, arr) for name, arr in (("E0", E0), ("E1", E1), ("Einf", Einf))}
        return {"local": local, "interior": interior, "tables": tables}, parts

    def evaluate(self, state, pts, level: int = -1) -> np.ndarray:
        """Q g at ``pts`` and time level ``level`` from a state returned by :meth:`apply`."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(len(pts))
        inside = self.cover.inside(pts)
        for k, nb in enumerate(self.cover.neighborhoods):
            loc = nb.chart.to_local(pts)
            u = (loc - np.array(nb.center)) / np.array(nb.scale)
            sel = inside & nb.model_valid(loc) & np.all(np.abs(u) < OUTER[1], axis=-1)
            if not np.any(sel):
                continue
            lv = level % len(self.times)
            if lv == 0 or not np.any(state["tables"][k]):
                continue
            # solve directly at the points rather than interpolating the solve grid
            vals = _separable_solve(nb, self.table_grids[k], state["tables"][k], self, float(self.times[lv]),
                                    loc[sel])["u"]
            out[sel] += nb.phi(pts[sel]) * vals
        psi = self.cover.psi(pts)
        if np.any(psi > 0):
            full, _, _ = self._lattice_fields(state["interior"][[level]])
            ui = self._lattice_interp((full,), pts)[0][0]
            out += psi * ui
        return out


def _layer_points(nb: Neighborhood, n: int = 33) -> np.ndarray:
    # lines along each normal coordinate through the ramp of the inner box
    ramp = np.linspace(INNER[0] - 0.2, INNER[1] + 0.2, n)
    out = []
    for i, kind in enumerate(nb.kinds):
        if kind == "euclid":
            continue
        for off in (0.0, 0.5, 1.0):
            u = np.zeros((n, 2))
            u[:, i] = ramp
            u[:, 1 - i] = off
            out.append(u)
    if not out:
        return np.zeros((0, 2))
    loc = nb.local_from_scaled(np.concatenate(out))
    return nb.chart.to_global(loc[nb.model_valid(loc)])


def _projected(rule_nodes, rule_weights, axis: _Axis, center: float, scale: float):
    # contract rule weights with 1-D linear interpolation onto the table axis
    P, n = rule_nodes.shape
    i0, f = axis.locate((rule_nodes - center) / scale)
    rows = np.repeat(np.arange(P), n)
    out = []
    for w in rule_weights:
        a = np.zeros((P, axis.n))
        np.add.at(a, (rows, i0.ravel()), (w * (1 - f)).ravel())
        np.add.at(a, (rows, i0.ravel() + 1), (w * f).ravel())
        out.append(a)
    return out


def _point_weights(x, axis: _Axis, center: float, scale: float):
    i0, f = axis.locate((x - center) / scale)
    a = np.zeros((len(x), axis.n))
    a[np.arange(len(x)), i0] = 1 - f
    a[np.arange(len(x)), i0 + 1] += f
    return a


def _separable_solve(nb: Neighborhood, tg: _Grid2, table: np.ndarray, eng: "ParametrixEngine", t: float, loc):
    """Inhomogeneous model solve with source derivatives for a tabulated integrand.

    Same time rule and windowed coordinate rules as the generic model solve;
    bilinear interpolation of the table is separable, so each quadrature
    reduces to alpha^T T beta with per-point projected weights.
    """
    from .models2d import _time_rule, coordinate_rule

    b = eng.budget
    p1, p2 = loc[:, 0], loc[:, 1]
    k1, k2 = nb.kinds
    fr = nb.frozen
    w1, w2 = nb.local_window()
    c = nb.center
    sc = nb.scale
    n1, n2 = tg.shape
    e1 = _point_weights(p1, tg.axes[0], c[0], sc[0])
    e2 = _point_weights(p2, tg.axes[1], c[1], sc[1])
    sig, wsig = _time_rule(b.n_time, b.time_power)
    acc = {k: np.zeros(len(loc)) for k in _CHANNELS}
    pairs = {"u": (0, 0), "d1": (1, 0), "d2": (0, 1), "d11": (2, 0), "d22": (0, 2), "d12": (1, 1)}
    for sj, wj in zip(sig, wsig):
        tau = t * sj
        slab = eng._time_slab(table, t - tau).reshape(n1, n2)
        r1 = coordinate_rule(k1, fr.a, fr.d, tau, p1, 2, b.order, b.panels, window=w1)
        r2 = coordinate_rule(k2, fr.b, fr.e, tau, p2, 2, b.order, b.panels, window=w2)
        A = _projected(r1.nodes, r1.weights, tg.axes[0], c[0], sc[0])
        B = _projected(r2.nodes, r2.weights, tg.axes[1], c[1], sc[1])
        g0 = np.einsum("pn,nm,pm->p", e1, slab, e2)
        g0 = np.where(r1.clipped | r2.clipped, 0.0, g0)
        sums1 = [w.sum(1) for w in r1.weights]
        sums2 = [w.sum(1) for w in r2.weights]
        for key, (i, j) in pairs.items():
            val = np.einsum("pn,nm,pm->p", A[i], slab, B[j])
            if key != "u":
                val = val - g0 * sums1[i] * sums2[j]
            acc[key] += t * wj * val
    return acc


def _eval_source(source, t, pts) -> np.ndarray:
    if source is None:
        return np.zeros(len(pts))
    if callable(source):
        return np.asarray(source(t, pts[:, 0], pts[:, 1]), dtype=float) * np.ones(len(pts))
    return np.full(len(pts), float(source))


# ---------------------------------------------------------------------------
# direct routes


def boundary_parametrix_apply(cover: CoverGrid, g, t: float, eval_points, n_time: int = 12, order: int = 10,
                              panels: int = 4) -> np.ndarray:
    """sum_n phi_n A_n[chi_n g] at time ``t`` by direct windowed model solves.

    Independent of :class:`ParametrixEngine`: chi_n g is evaluated exactly at the
    quadrature nodes instead of being tabulated.

    Parameters:
        g: forcing, a callable g(s, x, y) in global coordinates or a scalar.
        eval_points: (n, 2) global points.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    pts = np.atleast_2d(np.asarray(eval_points, dtype=float))
    out = np.zeros(len(pts))
    inside = cover.inside(pts)
    for k, nb in enumerate(cover.neighborhoods):
        loc = nb.chart.to_local(pts)
        ph = np.where(inside & nb.model_valid(loc), nb.phi(pts), 0.0)
        sel = ph > 0
        if not np.any(sel):
            continue

        def src(s, q1, q2, nb=nb, k=k):
            q = np.stack(np.broadcast_arrays(q1, q2), -1)
            gp = nb.chart.to_global(q)
            flat = gp.reshape(-1, 2)
            vals = cover.chi(k, flat) * _eval_source(g, s, flat)
            return vals.reshape(q.shape[:-1])

        mk = ModelKernel2D(nb.cls, nb.frozen, float(t))
        u = model_solve_with_derivatives(mk, src, loc[sel], n_time=n_time, time_power=2, order=order, panels=panels,
                                         deriv=0, windows=nb.local_window())["u"]
        out[sel] += ph[sel] * u
    return out


def interior_parametrix_apply(cover: CoverGrid, g, t: float, eval_points, lattice_n: int = 64,
                              dt: float = 1e-3) -> np.ndarray:
    """psi Q_int[(1 - phi_U) g] at time ``t``: Dirichlet FD solve away from the collar."""
    if t <= 0:
        raise ValueError("t must be positive")
    pts = np.atleast_2d(np.asarray(eval_points, dtype=float))
    grid = make_grid(cover.spec, n=lattice_n, dt=dt)
    grid = grid.with_dirichlet(cover.dirichlet_mask(grid.points))
    lat = grid.active_points
    damp = 1.0 - cover.phi_U(lat)

    def forcing(s, x, y):
        return _eval_source(g, s, lat) * damp

    res = fd_solve(cover.spec, grid, f=None, g=forcing, T=float(t))
    return cover.psi(pts) * res.at(pts)


# ---------------------------------------------------------------------------
# perturbation norms and the Neumann series


def fit_exponent(scales, norms) -> float:
    """Least-squares slope of log(norm) against log(scale)."""
    scales = np.asarray(scales, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if len(scales) < 2 or np.any(norms <= 0):
        return float("nan")
    return float(np.polyfit(np.log(scales), np.log(norms), 1)[0])


@dataclass
class PerturbationReport:
    """Measured sizes of E0, E1 and Einf for one (epsilon, T).

    Attributes:
        sup: sup norms over storage points and time levels.
        holder: Hoelder seminorms (lower bounds from sampled pairs) at t = T,
            in the singular metric of each neighborhood for E0 and E1 and the
            Euclidean metric for Einf.
        by_class: per neighborhood kind and class (e.g. ``"corner:c_reg"``) the
            sup of each neighborhood's own E0 and E1 terms, and the (0, gamma)
            norms (sup plus seminorm) of the first-order (``E0_first``) and
            second-order (``E0_second``) parts of E0.
        source_norm: sup norm of the data g.
    """

    epsilon: float
    T: float
    gamma: float
    sup: dict
    holder: dict
    by_class: dict
    source_norm: float
    runtime: float

    @property
    def total(self) -> float:
        return self.sup["E0"] + self.sup["E1"] + self.sup["Einf"]

    def records(self) -> list:
        out = [json_record(self.epsilon, self.T, self.gamma, name, v) for name, v in self.sup.items()]
        out += [json_record(self.epsilon, self.T, self.gamma, f"{name}_holder", v) for name, v in self.holder.items()]
        return out


def _holder_parts(engine: ParametrixEngine, parts: dict, gamma: float) -> dict:
    from .validation import holder_seminorm

    out = {}
    for name in ("E0", "E1"):
        best = 0.0
        vals = parts[name].values[-1]
        for k, nb in enumerate(engine.cover.neighborhoods):
            sl = engine.store_slices[k]
            ok = engine.inside[sl]
            if ok.sum() < 2:
                continue
            loc = nb.chart.to_local(engine.points[sl][ok])
            metric = WFMetric(nb.cls)
            best = max(best, holder_seminorm(vals[sl][ok], loc, lambda p, q, m=metric: wf_distance(m, p, q), gamma))
        out[name] = best
    lat = engine.lattice_slice
    out["Einf"] = holder_seminorm(parts["Einf"].values[-1, lat], engine.points[lat],
                                  lambda p, q: np.linalg.norm(p - q, axis=-1), gamma)
    return out


def _class_norms(eng: ParametrixEngine, gamma: float | None) -> dict:
    # per neighborhood class: sup of E0, E1 and (0, gamma) norms of the two parts of E0
    from .validation import holder_seminorm

    out = {}
    for k, nb in enumerate(eng.cover.neighborhoods):
        key = f"{nb.kind}:{nb.cls.name}"
        rec = out.setdefault(key, {"E0": 0.0, "E1": 0.0, "E0_first": 0.0, "E0_second": 0.0})
        e0, e1 = eng.last_contributions[k]
        rec["E0"] = max(rec["E0"], float(e0))
        rec["E1"] = max(rec["E1"], float(e1))
        if gamma is None or eng.last_terms[k] is None:
            continue
        targets, first, second, _ = eng.last_terms[k]
        loc = nb.chart.to_local(eng.points[targets])
        metric = WFMetric(nb.cls)
        dist = lambda p, q, m=metric: wf_distance(m, p, q)  # noqa: E731
        for name, vals in (("E0_first", first), ("E0_second", second)):
            norm = float(np.abs(vals).max()) + holder_seminorm(vals, loc, dist, gamma)
            rec[name] = max(rec[name], norm)
    return out


def measure_perturbation(cover: CoverGrid, spec: OperatorSpec | None = None, g=1.0, T: float = 0.05,
                         gamma: float = 0.5, budget: QuadratureBudget | None = None,
                         engine: ParametrixEngine | None = None, holder: bool = True) -> PerturbationReport:
    """Apply the perturbation once to ``g`` and report the sizes of its three parts."""
    if spec is not None and spec is not cover.spec:
        raise ValueError("cover was built for a different operator")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    t0 = time.perf_counter()
    eng = engine or ParametrixEngine(cover, T, budget)
    _, parts = eng.apply(g)
    mask = eng.inside
    sup = {name: f.sup_norm(mask) for name, f in parts.items()}
    by_class = _class_norms(eng, gamma if holder else None)
    hold = _holder_parts(eng, parts, gamma) if holder else {}
    gnorm = float(np.max(np.abs(np.stack([_eval_source(g, t, eng.points[mask]) for t in eng.times]))))
    return PerturbationReport(cover.epsilon, eng.T, gamma, sup, hold, by_class, gnorm, time.perf_counter() - t0)



@dataclass
class NeumannResult:
    """Truncated Neumann series w = sum_k Q g_k with g_{k+1} = -E g_k.

    Attributes:
        values: w(T) at the evaluation points.
        norms: sup norms of g_0, g_1, ... on the storage points.
        ratios: successive ratios ||g_{k+1}|| / ||g_k||.
        ratio: geometric mean of ``ratios``.
        residual: sup norm of the final defect (d_t - L) w - g = -g_{K+1}.
        converged: whether ``residual`` reached ``tol`` times ||g_0||.
    """

    epsilon: float
    T: float
    values: np.ndarray
    norms: list
    ratios: list
    ratio: float
    residual: float
    terms: int
    converged: bool
    runtime: float

    def records(self, gamma: float = 0.5) -> list:
        out = [json_record(self.epsilon, self.T, gamma, "neumann_ratio", self.ratio)]
        out += [json_record(self.epsilon, self.T, gamma, f"residual_{k}", v) for k, v in enumerate(self.norms[1:], 1)]
        return out


def neumann_solve(cover: CoverGrid, g, T: float, eval_points=None, max_terms: int = 6, tol: float = 1e-6,
                  budget: QuadratureBudget | None = None, engine: ParametrixEngine | None = None,
                  require_contraction: bool = True) -> NeumannResult:
    """Solve (d_t - L) w = g, w(0) = 0 by w = Q (I + E)^{-1} g.

    Parameters:
        g: forcing, callable g(t, x, y) or scalar.
        eval_points: global points where w(T) is returned (default: interior samples).
        max_terms: maximal number of Neumann terms.
        require_contraction: raise when the first measured ratio is >= 1.

    Raises:
        ContractionError: the measured ratio ||E g|| / ||g|| is not below one.
    """
    t0 = time.perf_counter()
    eng = engine or ParametrixEngine(cover, T, budget)
    if eval_points is None:
        eval_points = cover.spec.interior_samples(32, rng=np.random.default_rng(0))
    pts = np.atleast_2d(np.asarray(eval_points, dtype=float))
    mask = eng.inside
    n0 = float(np.max(np.abs(np.stack([_eval_source(g, t, eng.points[mask]) for t in eng.times]))))
    norms, ratios = [n0], []
    values = np.zeros(len(pts))
    source = g
    converged = n0 == 0.0
    terms = 0
    while not converged and terms < max_terms:
        state, parts = eng.apply(source)
        values += eng.evaluate(state, pts)
        terms += 1
        nxt = (parts["E0"] + parts["E1"] + parts["Einf"]).scaled(-1.0)
        nk = nxt.sup_norm(mask)
        ratios.append(nk / norms[-1])
        norms.append(nk)
        if require_contraction and terms == 1 and ratios[0] >= 1.0:
            raise ContractionError(f"perturbation is not a contraction at epsilon={cover.epsilon}, T={T}", ratios[0])
        converged = nk <= tol * n0
        source = nxt
    ratio = float(np.exp(np.mean(np.log(np.maximum(ratios, 1e-300))))) if ratios else 0.0
    return NeumannResult(cover.epsilon, eng.T, values, norms, ratios, ratio, norms[-1], terms, converged,
                         time.perf_counter() - t0)


def json_record(epsilon: float, T: float, gamma: float, component: str, norm: float,
                fitted_exponent: float | None = None) -> str:
    """One JSON line describing a measured norm."""
    rec = {"epsilon": float(epsilon), "T": float(T), "gamma": float(gamma), "component": component,
           "norm": float(norm), "fitted_exponent": None if fitted_exponent is None else float(fitted_exponent)}
    return json.dumps(rec, sort_keys=True)


# ---------------------------------------------------------------------------
# local heat kernels by Duhamel iteration


def _factor_with_derivs(kind: str, diff: float, drift: float, t: float, src, dst):
    # continuous factor density and its first two source derivatives
    from .kernels1d import (KimuraKernel1D, LogGaussianKernel1D, gaussian_deriv, gaussian_density, kimura_deriv,
                            kimura_density, loggaussian_deriv, loggaussian_density)

    src, dst = np.broadcast_arrays(np.asarray(src, dtype=float), np.asarray(dst, dtype=float))
    if kind == "euclid":
        e, tau = drift / diff, diff * t
        return (gaussian_density(e, tau, src, dst), gaussian_deriv(e, tau, src, dst, 1),
                gaussian_deriv(e, tau, src, dst, 2))
    out = [np.zeros(src.shape) for _ in range(3)]
    if kind == "kimura":
        ok = dst > 0
        if np.any(ok):
            k = KimuraKernel1D(drift / diff, diff * t)
            s, d = src[ok], dst[ok]
            out[0][ok] = kimura_density(k, s, d)
            out[1][ok] = kimura_deriv(k, s, d, "dx")
            out[2][ok] = kimura_deriv(k, s, d, "dxx")
        return tuple(out)
    if kind == "quadratic":
        ok = (dst > 0) & (src > 0)
        if np.any(ok):
            k = LogGaussianKernel1D(diff, t)
            s, d = src[ok], dst[ok]
            out[0][ok] = loggaussian_density(k, s, d)
            out[1][ok] = loggaussian_deriv(k, s, d, "ydy") / s
            out[2][ok] = loggaussian_deriv(k, s, d, "yydyy") / s**2
        return tuple(out)
    raise ValueError(f"unknown coordinate kind {kind!r}")


def _model_coefficients(cls: BoundaryClass, fr: FrozenCoefficients, loc):
    # full coefficients (a11, a22, b1, b2) of the model operator at local points
    diffs, drifts = (fr.a, fr.b), (fr.d, fr.e)
    sec, first = [], []
    for i, kind in enumerate(cls.kinds):
        x = loc[..., i]
        if kind == "kimura":
            sec.append(diffs[i] * x)
            first.append(np.full(x.shape, drifts[i]))
        elif kind == "quadratic":
            sec.append(diffs[i] * x * x)
            first.append(diffs[i] * x)
        else:
            sec.append(np.full(x.shape, diffs[i]))
            first.append(np.full(x.shape, drifts[i]))
    return sec[0], sec[1], first[0], first[1]


def _region_rule(kind: str, center: float, spread: float, order: int, panels: int, span: float = 8.0):
    # plain quadrature (nodes, weights) covering center +- span * spread in the coordinate's natural map
    s, w = _gauss_legendre_panels(order, panels)
    if kind == "kimura":
        rc = math.sqrt(max(center, 0.0))
        lo, hi = max(0.0, rc - span * math.sqrt(spread)), rc + span * math.sqrt(spread)
        r = lo + (hi - lo) * s
        return r * r, w * (hi - lo) * 2.0 * r
    if kind == "euclid":
        lo, hi = center - span * math.sqrt(2 * spread), center + span * math.sqrt(2 * spread)
        return lo + (hi - lo) * s, w * (hi - lo)
    lc = math.log(center)
    lo, hi = lc - span * math.sqrt(2 * spread), lc + span * math.sqrt(2 * spread)
    ell = lo + (hi - lo) * s
    return np.exp(ell), w * (hi - lo) * np.exp(ell)


def _gauss_legendre_panels(order: int, panels: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    nodes = np.concatenate([(k + x) / panels for k in range(panels)])
    return nodes, np.tile(w, panels) / panels


@dataclass
class _LocalProblem:
    # L-tilde = L_M + h (L - L_M) in one chart, with the model frozen at the pole
    spec: OperatorSpec
    chart: Chart
    cls: BoundaryClass
    frozen: FrozenCoefficients
    pole: np.ndarray
    h_box: tuple

    def h(self, loc):
        r = np.abs(loc - self.pole)
        return plateau(r[..., 0], *self.h_box)[0] * plateau(r[..., 1], *self.h_box)[0]

    def defect(self, loc, u, u1, u2, u11, u22, u12):
        """h (L - L_M) applied to a function given by its local derivatives."""
        out = np.zeros(loc.shape[:-1])
        hv = self.h(loc)
        ok = hv > 0
        if not np.any(ok):
            return out
        lo = loc[ok]
        a, b, c, d, e = self.spec.local_coefficients(self.chart, lo)
        aM, cM, dM, eM = _model_coefficients(self.cls, self.frozen, lo)
        out[ok] = hv[ok] * ((a - aM) * u11[ok] + b * u12[ok] + (c - cM) * u22[ok]
                            + (d - dM) * u1[ok] + (e - eM) * u2[ok])
        return out

    def kernel(self, t: float, src, dst, deriv: bool = False):
        """Model kernel K_t(src, dst) and, with ``deriv``, its source derivatives."""
        k1, k2 = self.cls.kinds
        f = self.frozen
        F1 = _factor_with_derivs(k1, f.a, f.d, t, src[..., 0], dst[..., 0])
        F2 = _factor_with_derivs(k2, f.b, f.e, t, src[..., 1], dst[..., 1])
        if not deriv:
            return F1[0] * F2[0]
        return (F1[0] * F2[0], F1[1] * F2[0], F1[0] * F2[1], F1[2] * F2[0], F1[0] * F2[2], F1[1] * F2[1])


_KEYS = ("u", "d1", "d2", "d11", "d22", "d12")
_PAIRS = {"u": (0, 0), "d1": (1, 0), "d2": (0, 1), "d11": (2, 0), "d22": (0, 2), "d12": (1, 1)}


def _duhamel_integral(lp: _LocalProblem, D: Callable, t: float, P: np.ndarray, deriv: bool, n_time: int,
                      order: int, panels: int) -> dict:
    """int_0^t K_{t-s}[D(s)](P) ds and its source derivatives.

    The source D(s, .) concentrates at the pole for small s.  On s < t/2 the
    nodes follow the pole (spread s); on s > t/2 they follow the kernel from P
    (spread t - s), with D(s, P) subtracted in the derivative channels.
    """
    k1, k2 = lp.cls.kinds
    f = lp.frozen
    keys = _KEYS if deriv else ("u",)
    acc = {k: np.zeros(len(P)) for k in keys}
    sig, wsig = np.polynomial.legendre.leggauss(n_time)
    sig, wsig = 0.5 * (sig + 1.0), 0.5 * wsig
    for sj, wj in zip(sig, wsig):
        # s = (t/2) sigma^2 near the pole
        s = 0.5 * t * sj * sj
        ds = t * sj * wj
        x1, w1 = _region_rule(k1, lp.pole[0], f.a * s, order, panels)
        x2, w2 = _region_rule(k2, lp.pole[1], f.b * s, order, panels)
        Q = np.stack(np.meshgrid(x1, x2, indexing="ij"), -1).reshape(-1, 2)
        W = np.outer(w1, w2).ravel()
        dv = D(s, Q) * W
        keep = dv != 0
        if np.any(keep):
            Kv = lp.kernel(t - s, P[:, None, :], Q[None, keep, :], deriv=deriv)
            Kv = Kv if deriv else (Kv,)
            for name, kv in zip(keys, Kv):
                acc[name] += ds * (kv @ dv[keep])
        # tau = t - s = (t/2) sigma^2 near the evaluation points
        tau = 0.5 * t * sj * sj
        s = t - tau
        r1 = coordinate_rule(k1, f.a, f.d, tau, P[:, 0], 2 if deriv else 0, order, panels)
        r2 = coordinate_rule(k2, f.b, f.e, tau, P[:, 1], 2 if deriv else 0, order, panels)
        n1, n2 = r1.nodes.shape[1], r2.nodes.shape[1]
        nodes = np.stack(np.broadcast_arrays(r1.nodes[:, :, None], r2.nodes[:, None, :]), -1)
        vals = D(s, nodes.reshape(-1, 2)).reshape(len(P), n1, n2)
        d0 = D(s, P) if deriv else None
        for name in keys:
            i, j = _PAIRS[name]
            v = vals if name == "u" else vals - d0[:, None, None]
            acc[name] += ds * np.einsum("pa,pab,pb->p", r1.weights[i], v, r2.weights[j])
    return acc


@dataclass
class DuhamelSeries:
    """Local heat kernel q_t(., pole) = K_t + sum_i K B^i delta at evaluation points.

    Attributes:
        terms: values of K_t and of each correction K B^i delta at ``points``.
        term_norms: sup norm of each term over ``points``.
        ratios: successive ratios of ``term_norms``.
        remainder_norm: sup over ``points`` of the defect left by the truncation.
    """

    pole: np.ndarray
    t: float
    N: int
    chart_name: str
    cls: BoundaryClass
    frozen: FrozenCoefficients
    points: np.ndarray
    terms: list
    term_norms: list
    ratios: list
    remainder_norm: float

    @property
    def value(self) -> np.ndarray:
        return np.sum(self.terms, axis=0)


def _default_chart(spec: OperatorSpec, pole_global) -> Chart:
    if spec.constant or not spec.corners:
        return spec.interior_chart
    d = [np.linalg.norm(np.asarray(c.point) - pole_global) for c in spec.corners]
    return spec.corners[int(np.argmin(d))].chart


def duhamel_local_kernel(spec: OperatorSpec, q, t: float, N: int = 2, points=None, chart: Chart | None = None,
                         h_box: tuple = (0.5, 0.7), n_time: int = 6, order: int = 8, panels: int = 2) -> DuhamelSeries:
    """Truncated Duhamel series for the local heat kernel with pole ``q``.

    The model operator L_M has the chart's class with coefficients frozen at
    the pole, and L-tilde = L_M + h (L - L_M) with h = 1 where every local
    coordinate is within h_box[0] of the pole and 0 beyond h_box[1].  Term i solves
    (d_t - L_M) v_i = h (L - L_M) v_{i-1} with v_0 = K_t(., q).

    Parameters:
        q: pole in global coordinates, interior to the domain.
        N: number of terms (1 to 4), K_t included.
        points: (n, 2) global evaluation points (default: the pole).
        chart: chart whose model is used (default: the nearest corner's).

    Returns:
        The series with its per-term norms and the remainder defect.
    """
    if not 1 <= N <= 4:
        raise ValueError("N must be between 1 and 4")
    if not t > 0:
        raise ValueError("t must be positive")
    qg = np.asarray(q, dtype=float)
    if not spec.contains(qg[None, :])[0] or any(f.contains(qg) for f in spec.faces):
        raise ValueError("the pole must be an interior point")
    chart = chart or _default_chart(spec, qg)
    cls = chart.cls if chart.cls.tag is not BoundaryTag.INTERIOR else None
    if cls is None:
        raise ValueError("the local kernel needs a boundary chart")
    pole = chart.to_local(qg)
    a, b, d, e = (float(v) for v in spec.normalized_coefficients(chart, pole))
    fr = FrozenCoefficients(a, b, d, e)
    lp = _LocalProblem(spec, chart, cls, fr, pole, h_box)
    P = chart.to_local(np.atleast_2d(np.asarray(points if points is not None else qg[None, :], dtype=float)))
    opts = dict(n_time=n_time, order=order, panels=panels)

    def base_defect(s, X):
        ch = lp.kernel(s, X, np.broadcast_to(pole, X.shape), deriv=True)
        return lp.defect(X, *ch)

    def make_defect(prev):
        def D(s, X):
            r = _duhamel_integral(lp, prev, s, X, True, **opts)
            return lp.defect(X, *(r[k] for k in _KEYS))
        return D

    terms = [lp.kernel(t, P, np.broadcast_to(pole, P.shape))]
    D = base_defect
    for _ in range(1, N):
        terms.append(_duhamel_integral(lp, D, t, P, False, **opts)["u"])
        D = make_defect(D)
    remainder = float(np.max(np.abs(D(t, P))))
    norms = [float(np.max(np.abs(v))) for v in terms]
    ratios = [norms[i + 1] / norms[i] if norms[i] > 0 else 0.0 for i in range(len(norms) - 1)]
    return DuhamelSeries(pole, float(t), N, chart.name, cls, fr, P, terms, norms, ratios, remainder)


# ---------------------------------------------------------------------------
# global kernel


@dataclass
class DegenerateKernel:
    """Kernel from a source on an infinity face or corner.

    The quadratic coordinate started at 0 stays there, so the kernel is a
    1-D density along the face times a delta in the transverse coordinate
    (``kind="infinity-edge"``) or a point mass (``kind="infinity-corner"``).
    ``tangential`` maps tangential local coordinates to the frozen 1-D density.
    """

    kind: str
    src: np.ndarray
    chart_name: str
    t: float
    tangential: Callable | None = None

    def value(self, dst) -> float:
        """Density at an interior destination: the singular kernel has none."""
        return 0.0


@dataclass
class GlobalKernelValue:
    """H_t(src, dst) = H-tilde - A^t e_t with its two parts."""

    value: float
    uncorrected: float
    correction: float
    defect_sup: float


def _boundary_chart(spec: OperatorSpec, pt) -> tuple:
    # (chart, kind) of the boundary piece containing pt, or (None, "interior")
    pt = np.asarray(pt, dtype=float)
    for c in spec.corners:
        if np.allclose(pt, c.point, atol=1e-12):
            return c.chart, "corner"
    for f in spec.faces:
        if f.contains(pt):
            return f.chart, "edge"
    return None, "interior"


def _degenerate_source(spec: OperatorSpec, src, t: float) -> DegenerateKernel | None:
    chart, where = _boundary_chart(spec, src)
    if chart is None:
        return None
    kinds = chart.cls.kinds
    loc = chart.to_local(np.asarray(src, dtype=float))
    zero_quad = [i for i, k in enumerate(kinds) if k == "quadratic" and abs(loc[i]) < 1e-12]
    if not zero_quad:
        return None
    free = [i for i in range(2) if i not in zero_quad]
    if not free:
        return DegenerateKernel("infinity-corner", np.asarray(src, dtype=float), chart.name, t)
    i = free[0]
    fr = spec.frozen_coefficients(chart, loc)
    from .models2d import factor_density

    def tangential(x, kind=kinds[i], diff=fr.diffusion(i), drift=fr.drift(i), x0=float(loc[i])):
        return factor_density(kind, diff, drift, t, x0, x)

    return DegenerateKernel("infinity-edge", np.asarray(src, dtype=float), chart.name, t, tangential)


def _gaussian_kernel(spec: OperatorSpec, dst, t: float, P, deriv: bool = False):
    # frozen full-covariance Gaussian kernel K(P, dst) of the interior operator
    A, B, C, Dx, Dy = (float(np.ravel(v)[0]) for v in spec.global_coefficients(np.asarray(dst, dtype=float)[None, :]))
    S = 2.0 * t * np.array([[A, B / 2.0], [B / 2.0, C]])
    Si = np.linalg.inv(S)
    r = np.asarray(dst, dtype=float) - P - t * np.array([Dx, Dy])
    val = np.exp(-0.5 * np.einsum("...i,ij,...j->...", r, Si, r)) / (2 * math.pi * math.sqrt(np.linalg.det(S)))
    if not deriv:
        return val
    g = val[..., None] * (r @ Si)  # d/dP of the exponent is +Si r
    return val, g


def _local_kernel_grad(nb: Neighborhood, spec: OperatorSpec, dst_loc, t: float, P_loc):
    # leading local kernel (frozen at dst) with its global gradient at local points P_loc
    a, b, d, e = (float(v) for v in spec.normalized_coefficients(nb.chart, dst_loc))
    lp = _LocalProblem(spec, nb.chart, nb.cls, FrozenCoefficients(a, b, d, e), np.asarray(dst_loc), (0.0, 1.0))
    K, K1, K2, *_ = lp.kernel(t, P_loc, np.broadcast_to(dst_loc, P_loc.shape), deriv=True)
    grad = np.stack([K1, K2], -1) @ nb.chart.matrix
    return K, grad


def _commutator(spec, P, cut, K, gK):
    # [phi, L] K = -K L(phi) - 2 grad(phi)^T Sigma grad(K)
    val, g, H = cut
    A, B, C, Dx, Dy = spec.global_coefficients(P)
    Lphi = A * H[:, 0, 0] + B * H[:, 0, 1] + C * H[:, 1, 1] + Dx * g[:, 0] + Dy * g[:, 1]
    cross = 2 * A * g[:, 0] * gK[:, 0] + B * (g[:, 0] * gK[:, 1] + g[:, 1] * gK[:, 0]) + 2 * C * g[:, 1] * gK[:, 1]
    return -K * Lphi - cross


def kernel_defect(cover: CoverGrid, t: float, P, dst) -> np.ndarray:
    """Commutator part e_t(P) of (d_t - L) H-tilde(., dst), leading kernel terms."""
    spec = cover.spec
    P = np.atleast_2d(np.asarray(P, dtype=float))
    dst = np.asarray(dst, dtype=float)
    out = np.zeros(len(P))
    inside = cover.inside(P)
    for k, nb in enumerate(cover.neighborhoods):
        ck = float(cover.chi(k, dst[None, :])[0])
        if ck == 0.0:
            continue
        loc = nb.chart.to_local(P)
        val, g, H = nb.phi(P, derivs=True)
        sel = inside & (np.abs(g).sum(-1) + np.abs(H).sum((-1, -2)) > 0) & nb.model_valid(loc)
        if not np.any(sel):
            continue
        K, gK = _local_kernel_grad(nb, spec, nb.chart.to_local(dst), t, loc[sel])
        jac = abs(nb.chart.jacobian)
        out[sel] += ck * jac * _commutator(spec, P[sel], (val[sel], g[sel], H[sel]), K, gK)
    w = 1.0 - float(cover.phi_U(dst[None, :])[0])
    if w > 0:
        val, g, H = cover.psi(P, derivs=True)
        sel = inside & (np.abs(g).sum(-1) + np.abs(H).sum((-1, -2)) > 0)
        if np.any(sel):
            K, gK = _interior_kernel(spec, dst, t, P[sel])
            out[sel] += w * _commutator(spec, P[sel], (val[sel], g[sel], H[sel]), K, gK)
    return out


def _interior_kernel(spec: OperatorSpec, dst, t: float, P):
    if spec.constant:
        ch = spec.interior_chart
        a, b, d, e = (float(v) for v in spec.normalized_coefficients(ch, ch.to_local(dst)))
        lp = _LocalProblem(spec, ch, ch.cls, FrozenCoefficients(a, b, d, e), ch.to_local(dst), (0.0, 1.0))
        loc = ch.to_local(P)
        K, K1, K2, *_ = lp.kernel(t, loc, np.broadcast_to(ch.to_local(dst), loc.shape), deriv=True)
        return K, np.stack([K1, K2], -1) @ ch.matrix
    return _gaussian_kernel(spec, dst, t, P, deriv=True)


def global_kernel(cover: CoverGrid, t: float, src, dst, N: int = 1, correct: bool = True, lattice_n: int = 64,
                  dt: float = 1e-3, **duhamel):
    """Global heat kernel H_t(src, dst) from local kernels glued by the cutoffs.

    H-tilde = sum_n phi_n(src) q^n_t(src, dst) chi_n(dst) + psi(src) q^U_t(src, dst) (1 - phi_U(dst))
    where q^n is the local kernel in chart n with pole ``dst`` (N Duhamel terms)
    and q^U the interior kernel frozen at ``dst``.  The correction A^t e_t
    solves (d_t - L) w = e_t, w(0) = 0 on a lattice, with e_t the commutator
    defect of H-tilde.

    Parameters:
        src: evaluation point (may lie on the boundary).
        dst: interior point.

    Returns:
        :class:`GlobalKernelValue`, or a :class:`DegenerateKernel` when ``src``
        lies on an infinity face or corner.
    """
    spec = cover.spec
    if not t > 0:
        raise ValueError("t must be positive")
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if not spec.contains(dst[None, :])[0] or _boundary_chart(spec, dst)[0] is not None:
        raise ValueError("dst must be an interior point")
    deg = _degenerate_source(spec, src, t)
    if deg is not None:
        return deg
    if not spec.contains(src[None, :], tol=1e-12)[0]:
        raise ValueError("src must lie in the closed domain")
    total = 0.0
    for k, nb in enumerate(cover.neighborhoods):
        ck = float(cover.chi(k, dst[None, :])[0])
        pk = float(nb.phi(src[None, :])[0])
        if ck == 0.0 or pk == 0.0:
            continue
        ser = duhamel_local_kernel(spec, dst, t, N=N, points=src[None, :], chart=nb.chart, **duhamel)
        total += pk * ck * abs(nb.chart.jacobian) * float(ser.value[0])
    w = 1.0 - float(cover.phi_U(dst[None, :])[0])
    ps = float(cover.psi(src[None, :])[0])
    if w > 0 and ps > 0:
        total += ps * w * float(_interior_kernel(spec, dst, t, src[None, :])[0][0])
    if not correct:
        return GlobalKernelValue(total, total, 0.0, float("nan"))
    grid = make_grid(spec, n=lattice_n, dt=dt)
    lat = grid.active_points
    sup = [0.0]

    def forcing(s, x, y):
        e = kernel_defect(cover, s, lat, dst)
        sup[0] = max(sup[0], float(np.max(np.abs(e))))
        return e

    res = fd_solve(spec, grid, f=None, g=forcing, T=float(t))
    corr = float(res.at(src[None, :])[0])
    return GlobalKernelValue(total - corr, total, corr, sup[0])


# ---------------------------------------------------------------------------
# short-time limits at boundary points


@dataclass
class DeltaVerdict:
    """Classification of lim_{t -> 0} int q_t(p, l) f(l) dl at a boundary point."""

    verdict: str  # "Delta", "Zero" or "Inconclusive"
    point: np.ndarray
    cls: BoundaryClass
    times: list
    values: list
    f_at_p: float


def _laguerre(n: int, alpha: float):
    from scipy import special

    return special.roots_genlaguerre(n, alpha)


def delta_limit_integral(spec: OperatorSpec, p, f: Callable, t: float, n: int = 48) -> float:
    """int K^{(l)}_t(p, l) f(l) dl with the model kernel frozen at the destination l.

    ``p`` is a boundary point; its boundary chart supplies the model class.
    Only the continuous part of the kernel is integrated; a quadratic
    coordinate started at 0 has none, so the integral is 0 there.
    """
    from scipy import special

    chart, _ = _boundary_chart(spec, p)
    if chart is None:
        raise ValueError("p must be a boundary point")
    if not t > 0:
        raise ValueError("t must be positive")
    kinds = chart.cls.kinds
    pl = chart.to_local(np.asarray(p, dtype=float))
    if any(k == "quadratic" and abs(pl[i]) < 1e-12 for i, k in enumerate(kinds)):
        return 0.0
    fr = spec.frozen_coefficients(chart, pl)
    # per axis: nodes, weights and the log of the reference weight density in x
    axes = []
    for i, kind in enumerate(kinds):
        diff, drift = fr.diffusion(i), fr.drift(i)
        tau = diff * t
        if kind == "kimura":
            if abs(pl[i]) > 1e-12:
                raise ValueError("p must lie on a face of the Kimura coordinate")
            delta = drift / diff
            alpha = delta - 1.0 if delta > 0 else 0.0
            w, wt = _laguerre(n, alpha)
            x = tau * w
            logref = alpha * np.log(w) - w - math.log(tau)
        elif kind == "euclid":
            xi, wt = np.polynomial.hermite.hermgauss(n)
            s = math.sqrt(4.0 * tau)
            x = pl[i] + drift * t + s * xi
            logref = -xi * xi - math.log(s)
        else:
            xi, wt = np.polynomial.hermite.hermgauss(n)
            s = math.sqrt(4.0 * tau)
            x = pl[i] * np.exp(s * xi)
            logref = -xi * xi - math.log(s) - np.log(x)
        axes.append((x, wt, logref))
    (x1, w1, r1), (x2, w2, r2) = axes
    L = np.stack(np.meshgrid(x1, x2, indexing="ij"), -1).reshape(-1, 2)
    W = np.outer(w1, w2).ravel()
    R = np.add.outer(r1, r2).ravel()
    G = chart.to_global(L)
    ok = spec.contains(G, tol=1e-12)
    if not np.any(ok):
        return 0.0
    L, W, R, G = L[ok], W[ok], R[ok], G[ok]
    with np.errstate(all="ignore"):
        a, b, d, e = spec.normalized_coefficients(chart, L)
    diffs, drifts = (np.asarray(a, float), np.asarray(b, float)), (np.asarray(d, float), np.asarray(e, float))
    valid = np.isfinite(a) & np.isfinite(b) & np.isfinite(d) & np.isfinite(e) & (diffs[0] > 0) & (diffs[1] > 0)
    logk = np.zeros(len(L))
    with np.errstate(all="ignore"):
        for i, kind in enumerate(kinds):
            x = L[:, i]
            df = np.where(valid, diffs[i], 1.0)
            dr = np.where(valid, drifts[i], 0.0)
            tau = df * t
            if kind == "kimura":
                delta = np.maximum(dr / df, 0.0)
                # x^(delta-1) e^(-x/tau) / (tau^delta Gamma(delta)); 1/Gamma(0) = 0
                logk += (delta - 1.0) * np.log(x) - x / tau - delta * np.log(tau) + np.log(special.rgamma(delta))
            elif kind == "euclid":
                logk += -((x - pl[i] - dr * t) ** 2) / (4 * tau) - 0.5 * np.log(4 * math.pi * tau)
            else:
                ell = np.log(x) - np.log(pl[i])
                logk += -(ell**2) / (4 * tau) - 0.5 * np.log(4 * math.pi * tau) - np.log(x)
        ratio = np.where(valid, np.exp(logk - R), 0.0)
    ratio = np.nan_to_num(ratio, nan=0.0, posinf=0.0)
    fv = np.asarray(f(G[:, 0], G[:, 1]), dtype=float)
    return float(np.sum(W * ratio * fv))


def delta_limit_classify(spec: OperatorSpec, p, f: Callable | None = None,
                         times=(1e-1, 1e-2, 1e-3, 1e-4), tol: float = 0.01, n: int = 48) -> DeltaVerdict:
    """Classify the short-time limit of delta_limit_integral at a boundary point.

    "Delta" when the values approach f(p) within ``tol`` with non-increasing
    error over the last two times, "Zero" when they approach 0 likewise,
    else "Inconclusive".  The default test function is exp(-|l - p|^2).
    """
    p = np.asarray(p, dtype=float)
    if f is None:
        f = lambda x, y: np.exp(-((x - p[0]) ** 2 + (y - p[1]) ** 2))  # noqa: E731
    fp = float(np.asarray(f(np.array([p[0]]), np.array([p[1]])), dtype=float)[0])
    times = sorted((float(s) for s in times), reverse=True)
    vals = [delta_limit_integral(spec, p, f, s, n=n) for s in times]
    cls = classify_boundary(spec, p)

    def settles(target):
        err = [abs(v - target) for v in vals]
        return err[-1] <= tol and (len(err) < 2 or err[-1] <= err[-2] + 1e-12)

    if settles(fp):
        verdict = "Delta"
    elif settles(0.0):
        verdict = "Zero"
    else:
        verdict = "Inconclusive"
    return DeltaVerdict(verdict, p, cls, times, vals, fp)

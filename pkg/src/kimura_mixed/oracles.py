"""Independent ground truth: a monotone finite-difference solver and path simulation.

The FD solver discretizes L on a tensor lattice in global coordinates with
implicit Euler in time.  The second-order part is split into directional
second differences along e1, e2 and the diagonal e1 -+ e2 that carries the
mixed term; all off-diagonal weights must be nonnegative, which is checked at
assembly and gives a discrete maximum principle.  Degenerate faces need no
boundary condition: rows on a Kimura face only see the inward drift, rows on
an infinity face only couple along the face.

Path simulation uses Euler-Maruyama with full truncation at Kimura faces and
log-coordinate steps for the distance to infinity faces; constant-coefficient
model specs are sampled exactly.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .geometry import OperatorSpec
from .models2d import BoundaryTag

__all__ = [
    "FDGrid",
    "FDResult",
    "MonotonicityError",
    "NumericalError",
    "IntegrationError",
    "make_grid",
    "assemble_operator",
    "fd_solve",
    "exact_cir_sample",
    "PathEnsemble",
    "mc_paths",
    "write_paths_csv",
    "write_field_csv",
    "resolve_threads",
]


class MonotonicityError(ValueError):
    """The assembled stencil has a negative off-diagonal weight."""


class NumericalError(RuntimeError):
    """The sparse solve failed or produced non-finite values."""


class IntegrationError(RuntimeError):
    """A simulated path left the domain."""


def resolve_threads(threads: int | None) -> int:
    """Thread count from the argument, else ``KIMURA_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("KIMURA_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


# ---------------------------------------------------------------------------
# grids


def graded_nodes(n: int, grading: float) -> np.ndarray:
    """n + 1 nodes on [0, 1] from u -> (1-g) u + g (3u^2 - 2u^3).

    With g = 1 the spacing near either end scales like the square root of the
    distance; the map is symmetric, so node i and node n - i add up to 1.
    """
    if not 0.0 <= grading <= 1.0:
        raise ValueError(f"grading must be in [0, 1], got {grading}")
    u = np.linspace(0.0, 1.0, n + 1)
    x = (1 - grading) * u + grading * (3 * u**2 - 2 * u**3)
    x[0], x[-1] = 0.0, 1.0
    return x


@dataclass
class FDGrid:
    """Tensor lattice in global coordinates with an activity mask.

    Parameters:
        xs, ys: node coordinates per axis.
        active: boolean (nx, ny) mask of nodes inside the domain.
        dt: time step of the implicit Euler scheme.
        dirichlet: optional (nx, ny) mask of nodes held at zero.
    """

    xs: np.ndarray
    ys: np.ndarray
    active: np.ndarray
    dt: float
    dirichlet: np.ndarray | None = None
    grading: float = 0.0

    @property
    def shape(self) -> tuple:
        return (len(self.xs), len(self.ys))

    @property
    def points(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.stack([X, Y], -1)

    @property
    def active_points(self) -> np.ndarray:
        return self.points[self.active]

    def with_dirichlet(self, mask: np.ndarray) -> "FDGrid":
        return FDGrid(self.xs, self.ys, self.active, self.dt, mask & self.active, self.grading)

    def locate(self, pts) -> np.ndarray:
        """Indices into ``active_points`` of the nodes nearest to ``pts``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ap = self.active_points
        d2 = ((ap[None, :, :] - pts[:, None, :]) ** 2).sum(-1)
        return np.argmin(d2, axis=1)

    def interpolate(self, values: np.ndarray, pts) -> np.ndarray:
        """Bilinear interpolation of nodal values (inactive nodes use the nearest active value)."""
        full = np.full(self.shape, np.nan)
        full[self.active] = values
        if not np.all(self.active):
            # fill outside nodes so that cells cut by the domain boundary interpolate sanely
            ii, jj = np.nonzero(~self.active)
            ap_idx = np.argwhere(self.active)
            for i, j in zip(ii, jj):
                k = np.argmin((ap_idx[:, 0] - i) ** 2 + (ap_idx[:, 1] - j) ** 2)
                full[i, j] = full[tuple(ap_idx[k])]
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator((self.xs, self.ys), full, method="linear", bounds_error=False, fill_value=None)
        return interp(pts)


def _model_box(spec: OperatorSpec, extent: float):
    lim = []
    for kind in spec.model_class.kinds:
        if kind == "kimura":
            lim.append((0.0, extent))
        elif kind == "euclid":
            lim.append((-extent / 2, extent / 2))
        else:
            lim.append((0.0, extent))
    return lim


def _has_mixed_term(spec: OperatorSpec) -> bool:
    pts = spec.interior_samples(64)
    return bool(np.max(np.abs(spec.global_coefficients(pts)[1])) > 0.0)


def make_grid(spec: OperatorSpec, n: int = 64, dt: float = 1e-3, grading: float | None = None,
              extent: float = 4.0) -> FDGrid:
    """Lattice for ``spec`` with n intervals per axis.

    The default grading is 1 (square-root spacing at the faces) when the
    operator has no mixed term and 0 otherwise; a mixed term is discretized
    on the diagonal neighbours, which is monotone only when they are collinear
    with the diagonal, i.e. on a uniform lattice.
    """
    if n < 4:
        raise ValueError("need at least 4 intervals per axis")
    if dt <= 0:
        raise ValueError("dt must be positive")
    mixed = _has_mixed_term(spec)
    if grading is None:
        grading = 0.0 if mixed else 1.0
    if mixed and grading != 0.0:
        raise MonotonicityError("a mixed second-order term requires a uniform lattice (grading = 0)")
    if spec.domain in ("triangle", "square"):
        xs = graded_nodes(n, grading)
        ys = xs.copy()
    else:
        (x0, x1), (y0, y1) = _model_box(spec, extent)
        kinds = spec.model_class.kinds
        xs = x0 + (x1 - x0) * (graded_nodes(n, grading) if kinds[0] != "euclid" else np.linspace(0, 1, n + 1))
        ys = y0 + (y1 - y0) * (graded_nodes(n, grading) if kinds[1] != "euclid" else np.linspace(0, 1, n + 1))
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    active = spec.contains(np.stack([X, Y], -1), tol=1e-12)
    if spec.domain == "model":
        active = np.ones_like(X, dtype=bool)
    return FDGrid(xs, ys, active, float(dt), None, float(grading))


# ---------------------------------------------------------------------------
# assembly


def assemble_operator(spec: OperatorSpec, grid: FDGrid, check: bool = True, tol: float = 1e-10) -> sps.csr_matrix:
    """Sparse matrix of L on the active nodes (rows sum to zero).

    Interior rows use central differences, switching the drift to upwind
    where central weights would be negative.  Rows with a missing axis
    neighbour (face nodes) write the drift as a nonnegative combination of the
    available neighbour displacements.  Far-field edges of model boxes are
    frozen (zero rows).

    Raises:
        MonotonicityError: a diffusion term without neighbours, a drift pointing
            out of the domain, or a non-collinear diagonal pair.
    """
    nx, ny = grid.shape
    act = grid.active
    idx = -np.ones((nx, ny), dtype=np.int64)
    idx[act] = np.arange(int(act.sum()))
    pts = grid.points[act]
    A, B, C, Dx, Dy = (np.asarray(v, dtype=float) for v in spec.global_coefficients(pts))
    ii, jj = np.nonzero(act)
    xs, ys = grid.xs, grid.ys
    rows, cols, vals = [], [], []

    def nb(i, j):
        if 0 <= i < nx and 0 <= j < ny and act[i, j]:
            return int(idx[i, j])
        return -1

    def fail(msg, i, j):
        if check:
            raise MonotonicityError(f"{msg} at node ({xs[i]:.6g}, {ys[j]:.6g})")

    far = _far_field_mask(spec, grid)
    for k, (i, j) in enumerate(zip(ii, jj)):
        if far[i, j]:
            continue
        a, b, c, dx, dy = A[k], B[k], C[k], Dx[k], Dy[k]
        scale = 1.0 + abs(a) + abs(b) + abs(c)
        entries: dict[int, float] = {}

        def put(col, w):
            entries[col] = entries.get(col, 0.0) + w

        sgn = -1 if b < 0 else 1
        kappa = abs(b) / 2.0
        alpha, beta = a - kappa, c - kappa
        if alpha < -tol * scale or beta < -tol * scale:
            fail(f"diagonal split not monotone (alpha={alpha:.3g}, beta={beta:.3g})", i, j)
        alpha, beta = max(alpha, 0.0), max(beta, 0.0)
        E, W, N, S = nb(i + 1, j), nb(i - 1, j), nb(i, j + 1), nb(i, j - 1)
        # diffusion along the axes
        for diff, plus, minus, coords, pos in ((alpha, E, W, xs, i), (beta, N, S, ys, j)):
            if diff <= tol * scale:
                continue
            if plus < 0 or minus < 0:
                fail("diffusion without neighbours on both sides", i, j)
                continue
            s_m, s_p = _second_weights(coords[pos] - coords[pos - 1], coords[pos + 1] - coords[pos])
            put(minus, diff * s_m)
            put(plus, diff * s_p)
        # mixed term along the diagonal (1, sgn)
        if kappa > tol * scale:
            dp, dm = nb(i + 1, j + sgn), nb(i - 1, j - sgn)
            if dp < 0 or dm < 0:
                fail("mixed term without diagonal neighbours", i, j)
            else:
                vp = (xs[i + 1] - xs[i], sgn * (ys[j + sgn] - ys[j]))
                vm = (xs[i] - xs[i - 1], sgn * (ys[j] - ys[j - sgn]))
                if max(abs(vp[0] - vp[1]), abs(vm[0] - vm[1]), abs(vp[0] - vm[0])) > 1e-12:
                    fail("diagonal neighbours are not collinear", i, j)
                h = vp[0]
                put(dp, kappa / h**2)
                put(dm, kappa / h**2)
        # drift
        if E >= 0 and W >= 0 and N >= 0 and S >= 0:
            for drift, plus, minus, coords, pos in ((dx, E, W, xs, i), (dy, N, S, ys, j)):
                hm, hp = coords[pos] - coords[pos - 1], coords[pos + 1] - coords[pos]
                f_m, f_p = _first_weights(hm, hp)
                base_m = entries.get(minus, 0.0)
                base_p = entries.get(plus, 0.0)
                if base_m + drift * f_m >= 0 and base_p + drift * f_p >= 0:
                    put(minus, drift * f_m)
                    put(plus, drift * f_p)
                    # center weight of the nonuniform central difference
                    put(k, -drift * (f_m + f_p))
                elif drift > 0:
                    put(plus, drift / hp)
                else:
                    put(minus, -drift / hm)
        elif dx != 0.0 or dy != 0.0:
            cand = []
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    m = nb(i + di, j + dj) if (di or dj) else -1
                    if m >= 0:
                        cand.append((m, xs[i + di] - xs[i], ys[j + dj] - ys[j]))
            coef = _cone_weights(np.array([[v[1] for v in cand], [v[2] for v in cand]]), np.array([dx, dy]))
            if coef is None:
                fail(f"drift ({dx:.3g}, {dy:.3g}) points out of the domain", i, j)
            else:
                cut = 1e-12 * coef.max()
                for (m, _, _), w in zip(cand, coef):
                    if w > cut:
                        put(m, w)
        total = 0.0
        for col, w in entries.items():
            if col == k:
                continue
            if w < -tol * scale / _min_spacing(grid) ** 2:
                fail(f"negative off-diagonal weight {w:.3g}", i, j)
            rows.append(k)
            cols.append(col)
            vals.append(w)
            total += w
        rows.append(k)
        cols.append(k)
        vals.append(-total)
    n = len(pts)
    return sps.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _cone_weights(V: np.ndarray, d: np.ndarray):
    """Nonnegative c with V c = d (columns of V are displacements), or None."""
    from scipy.optimize import nnls

    c, res = nnls(V, d)
    if res > 1e-9 * (1.0 + np.linalg.norm(d)):
        return None
    return c


def _far_field_mask(spec: OperatorSpec, grid: FDGrid) -> np.ndarray:
    """Rows frozen at artificial box edges of model domains."""
    mask = np.zeros(grid.shape, dtype=bool)
    if spec.domain != "model":
        return mask
    kinds = spec.model_class.kinds
    mask[-1, :] = True
    mask[:, -1] = True
    if kinds[0] == "euclid":
        mask[0, :] = True
    if kinds[1] == "euclid":
        mask[:, 0] = True
    return mask


def _min_spacing(grid):
    return min(np.min(np.diff(grid.xs)), np.min(np.diff(grid.ys)))


def _second_weights(hm, hp):
    """3-point weights (minus, plus) of u'' on spacings hm (left) and hp (right)."""
    return 2.0 / (hm * (hm + hp)), 2.0 / (hp * (hm + hp))


def _first_weights(hm, hp):
    """3-point central weights (minus, plus) of u'; the center weight is minus their sum."""
    return -hp / (hm * (hm + hp)), hm / (hp * (hm + hp))


# ---------------------------------------------------------------------------
# solve


@dataclass
class FDResult:
    grid: FDGrid
    times: np.ndarray
    values: np.ndarray  # (n_times, n_active)
    meta: dict = field(default_factory=dict)

    def at(self, pts, time_index: int = -1) -> np.ndarray:
        return self.grid.interpolate(self.values[time_index], pts)


def _sample_data(f, pts):
    if f is None:
        return np.zeros(len(pts))
    if callable(f):
        return np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float) * np.ones(len(pts))
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(len(pts), float(arr))
    return arr.copy()


def fd_solve(
    spec: OperatorSpec,
    grid: FDGrid,
    f=None,
    g: Callable | float | None = None,
    T: float = 0.1,
    save_every: int | None = None,
    check: bool = True,
) -> FDResult:
    """Solve (d_t - L) u = g, u(0) = f with implicit Euler on ``grid``.

    Parameters:
        f: initial data as callable (x, y) -> values, scalar or nodal array.
        g: forcing as callable (t, x, y) -> values, scalar or None.
        T: final time; the step is adjusted so that T is hit exactly.
        save_every: store every k-th step (default: only t = 0 and t = T).

    Raises:
        MonotonicityError: the stencil is not monotone.
        NumericalError: the factorization or solve fails.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    pts = grid.active_points
    Lmat = assemble_operator(spec, grid, check=check)
    n_steps = max(1, int(math.ceil(T / grid.dt - 1e-9)))
    dt = T / n_steps
    u = _sample_data(f, pts)
    hold = np.zeros(len(pts), dtype=bool)
    if grid.dirichlet is not None:
        hold = grid.dirichlet[grid.active]
        Lmat = Lmat.tolil()
        for r in np.nonzero(hold)[0]:
            Lmat.rows[r] = []
            Lmat.data[r] = []
        Lmat = Lmat.tocsr()
        u[hold] = 0.0
    system = (sps.identity(len(pts), format="csc") - dt * Lmat.tocsc()).tocsc()
    try:
        lu = spla.splu(system)
    except RuntimeError as exc:
        raise NumericalError(f"sparse factorization failed: {exc}") from exc
    times = [0.0]
    values = [u.copy()]
    for step in range(1, n_steps + 1):
        t = step * dt
        rhs = u.copy()
        if g is not None:
            gv = np.asarray(g(t, pts[:, 0], pts[:, 1]) if callable(g) else g, dtype=float) * np.ones(len(pts))
            gv[hold] = 0.0
            rhs = rhs + dt * gv
        u = lu.solve(rhs)
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"non-finite values at step {step} (t = {t:.4g})")
        if (save_every and step % save_every == 0) or step == n_steps:
            times.append(t)
            values.append(u.copy())
    return FDResult(grid, np.array(times), np.array(values), {"dt": dt, "n_steps": n_steps})


# ---------------------------------------------------------------------------
# sampling


def exact_cir_sample(d: float, t: float, x, rng: np.random.Generator, size=None) -> np.ndarray:
    """Exact draw from the Kimura kernel p^d_t(x, .) of x d^2 + d d.

    Poisson mixture of gammas: N ~ Poisson(x / t), then t * Gamma(d + N).
    This is (t/2) times a noncentral chi-square with 2d degrees of freedom
    and noncentrality 2x/t.  For d = 0 and N = 0 the draw is exactly 0.
    """
    if d < 0 or t <= 0:
        raise ValueError(f"need d >= 0 and t > 0, got d={d}, t={t}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    lam = x / t if size is None else np.broadcast_to(x / t, size)
    n = rng.poisson(lam)
    k = d + n
    out = np.where(k > 0, t * rng.gamma(np.where(k > 0, k, 1.0)), 0.0)
    return out if np.ndim(out) else float(out)


@dataclass
class PathEnsemble:
    """Recorded paths and per-path diagnostics.

    Attributes:
        times: recording times, shape (n_times,).
        paths: global coordinates, shape (n_paths, n_times, 2).
        min_infinity_distance: per path, minimum over all steps of the
            distance to the nearest infinity face (inf when there is none).
    """

    times: np.ndarray
    paths: np.ndarray
    min_infinity_distance: np.ndarray
    meta: dict = field(default_factory=dict)


def _path_rngs(seed: int, start: int, stop: int):
    return [np.random.default_rng(np.random.SeedSequence([seed, i])) for i in range(start, stop)]


def _simulate_chunk_model(spec, start, T, n_rec, seed, lo, hi):
    fr = spec.frozen
    kinds = spec.model_class.kinds
    rec_dt = T / n_rec
    out = np.empty((hi - lo, n_rec + 1, 2))
    out[:, 0, :] = start
    for p, rng in enumerate(_path_rngs(seed, lo, hi)):
        cur = np.array(start, dtype=float)
        for s in range(1, n_rec + 1):
            for i, kind in enumerate(kinds):
                diff = (fr.a, fr.b)[i]
                drift = (fr.d, fr.e)[i]
                if kind == "kimura":
                    cur[i] = exact_cir_sample(drift / diff, diff * rec_dt, cur[i], rng)
                elif kind == "euclid":
                    cur[i] = cur[i] + drift * rec_dt + math.sqrt(2 * diff * rec_dt) * rng.standard_normal()
                else:
                    cur[i] = cur[i] * math.exp(math.sqrt(2 * diff * rec_dt) * rng.standard_normal())
            out[p, s] = cur
    return out, _min_face_distance(spec, out)


def _min_face_distance(spec, paths):
    faces = [f for f in spec.faces if f.tag is BoundaryTag.INFINITY_EDGE]
    if not faces:
        return np.full(paths.shape[0], np.inf)
    lv = np.stack([f.level(paths) for f in faces], 0)
    return lv.min(axis=(0, 2))


def _simulate_chunk_em(spec, start, T, dt, every, seed, lo, hi, max_overshoot):
    n_steps = int(round(T / dt))
    rngs = _path_rngs(seed, lo, hi)
    noise = np.stack([r.standard_normal((n_steps, 2)) for r in rngs], 0) if rngs else np.zeros((0, n_steps, 2))
    m = hi - lo
    cur = np.tile(np.asarray(start, dtype=float), (m, 1))
    n_rec = n_steps // every
    out = np.empty((m, n_rec + 1, 2))
    out[:, 0] = cur
    inf_faces = [f for f in spec.faces if f.tag is BoundaryTag.INFINITY_EDGE]
    min_dist = np.full(m, np.inf)
    for f in inf_faces:
        min_dist = np.minimum(min_dist, f.level(cur))
    sq = math.sqrt(dt)
    for s in range(n_steps):
        proj = _project(spec, cur)
        A, B, C, Dx, Dy = spec.global_coefficients(proj)
        # Sigma Sigma^T = 2 [[A, B/2], [B/2, C]] by Cholesky, clipped at degenerate rows
        l11 = np.sqrt(np.maximum(2 * A, 0.0))
        l21 = np.where(l11 > 0, B / np.where(l11 > 0, l11, 1.0), 0.0)
        l22 = np.sqrt(np.maximum(2 * C - l21**2, 0.0))
        z = noise[:, s, :]
        dW1 = l11 * z[:, 0] * sq
        dW2 = (l21 * z[:, 0] + l22 * z[:, 1]) * sq
        new = cur + np.stack([Dx * dt + dW1, Dy * dt + dW2], -1)
        for f in inf_faces:
            # exact positivity for the distance to the face: step its logarithm
            row = f.chart.matrix[f.normal_index]
            lvl = f.level(cur)
            sig = (row[0] ** 2 * A + row[0] * row[1] * B + row[1] ** 2 * C)
            mu = row[0] * Dx + row[1] * Dy
            noise_s = row[0] * dW1 + row[1] * dW2
            safe = np.maximum(lvl, 1e-300)
            log_inc = (mu / safe - sig / safe**2) * dt + noise_s / safe
            near = lvl < 0.5
            target = lvl * np.exp(log_inc)
            cur_lvl = f.level(new)
            shift = np.where(near, target - cur_lvl, 0.0)
            new = new + shift[:, None] * row[None, :] / float(row @ row)
            min_dist = np.minimum(min_dist, f.level(new))
        cur = new
        if not np.all(spec.contains(cur, tol=max_overshoot)):
            bad = cur[~spec.contains(cur, tol=max_overshoot)][0]
            raise IntegrationError(f"path left the domain at step {s + 1}: {bad}")
        if (s + 1) % every == 0:
            out[:, (s + 1) // every] = cur
    return out, min_dist


def _project(spec: OperatorSpec, pts):
    """Nearest point of the domain (full truncation for coefficient evaluation)."""
    p = np.array(pts, dtype=float)
    if spec.domain == "square":
        return np.clip(p, 0.0, 1.0)
    if spec.domain == "triangle":
        p = np.maximum(p, 0.0)
        over = p.sum(-1) > 1.0
        if np.any(over):
            q = p[over]
            excess = (q.sum(-1) - 1.0) / 2.0
            q = np.maximum(q - excess[:, None], 0.0)
            q /= np.maximum(q.sum(-1, keepdims=True), 1.0)
            p[over] = q
        return p
    for i, kind in enumerate(spec.model_class.kinds):
        if kind == "kimura":
            p[..., i] = np.maximum(p[..., i], 0.0)
    return p


def mc_paths(
    spec: OperatorSpec,
    start,
    T: float,
    n_paths: int,
    dt: float = 1e-3,
    rng_seed: int = 0,
    record_every: int | None = None,
    threads: int | None = None,
    chunk: int = 256,
    exact: bool | None = None,
) -> PathEnsemble:
    """Simulate ``n_paths`` diffusion paths of ``spec`` from ``start`` up to time T.

    Path i draws from the stream ``SeedSequence([rng_seed, i])``; paths are
    processed in fixed chunks, so results are bit-identical for any thread count.

    Parameters:
        exact: sample constant-coefficient model specs exactly (default: when possible).
        record_every: record every k-th step (default: about 100 records).

    Raises:
        ValueError: ``start`` is not inside the domain.
        IntegrationError: a path leaves the domain by more than the truncation allowance.
    """
    start = np.asarray(start, dtype=float)
    if not bool(spec.contains(start)) or any(f.contains(start) for f in spec.faces):
        raise ValueError(f"start {start} must be an interior point")
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    if n_paths < 0:
        raise ValueError("n_paths must be nonnegative")
    threads = resolve_threads(threads)
    use_exact = spec.constant and spec.frozen is not None if exact is None else exact
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * T:
        raise ValueError("T must be an integer multiple of dt")
    every = record_every or max(1, n_steps // 100)
    bounds = [(lo, min(lo + chunk, n_paths)) for lo in range(0, n_paths, chunk)]
    overshoot = 10 * math.sqrt(dt)

    def work(b):
        lo, hi = b
        if use_exact:
            return _simulate_chunk_model(spec, start, T, n_steps // every, rng_seed, lo, hi)
        return _simulate_chunk_em(spec, start, T, dt, every, rng_seed, lo, hi, overshoot)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, bounds))
    else:
        results = [work(b) for b in bounds]
    n_rec = n_steps // every
    times = np.arange(n_rec + 1) * (T / n_rec)
    if results:
        paths = np.concatenate([r[0] for r in results], 0)
        mind = np.concatenate([r[1] for r in results], 0)
    else:
        paths = np.zeros((0, n_rec + 1, 2))
        mind = np.zeros(0)
    meta = {"seed": rng_seed, "dt": dt, "T": T, "exact": bool(use_exact), "n_paths": n_paths}
    return PathEnsemble(times, paths, mind, meta)


# ---------------------------------------------------------------------------
# export


def write_paths_csv(ens: PathEnsemble, path) -> None:
    """CSV with header t,x,y,path_id."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "path_id"])
        for pid in range(ens.paths.shape[0]):
            for k, t in enumerate(ens.times):
                w.writerow([repr(float(t)), repr(float(ens.paths[pid, k, 0])), repr(float(ens.paths[pid, k, 1])), pid])


def write_field_csv(res: FDResult, path, every: int = 1) -> None:
    """CSV with header t,x,y,u over the stored time levels."""
    pts = res.grid.active_points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "u"])
        for k in range(0, len(res.times), every):
            for p, v in zip(pts, res.values[k]):
                w.writerow([repr(float(res.times[k])), repr(float(p[0])), repr(float(p[1])), repr(float(v))])

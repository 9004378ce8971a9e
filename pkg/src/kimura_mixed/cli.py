"""Command-line front end: kernel evaluation, solves, path simulation and validation suites.

Numeric output is CSV with a header row; metadata and reports are JSON.
``--threads`` falls back to the KIMURA_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import SchemaError, load_operator_config, triangle_instance, unit_square_instance
from .models2d import BoundaryClass, FrozenCoefficients, ModelKernel2D, model_kernel, model_kernel_atoms

__all__ = ["RunConfig", "build_parser", "main"]

EXIT_USAGE = 2
EXIT_CONTRACTION = 3
EXIT_FAILED = 1


class UsageError(Exception):
    """Bad command-line input; reported on stderr with exit status 2."""


@dataclass
class RunConfig:
    """Run-level parameters shared by the subcommands.

    Attributes:
        operator: built-in name (``triangle``, ``square``) or a config path.
        gamma, gamma_prime: Hoelder exponents, 0 < gamma' <= gamma, gamma + gamma' < 1.
        epsilon: cover scale.
        T: final time.
        N: Duhamel series order.
        grids: free-form grid settings (from the ``[grids]`` section).
        seed: RNG seed; required by stochastic subcommands.
    """

    operator: str = "triangle"
    gamma: float = 0.5
    gamma_prime: float | None = None
    epsilon: float = 0.05
    T: float = 0.1
    N: int = 2
    grids: dict = field(default_factory=dict)
    seed: int | None = None
    output: str | None = None
    fmt: str = "csv"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise UsageError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.gamma_prime is None:
            self.gamma_prime = min(self.gamma, (1 - self.gamma) / 2)
        if not (0 < self.gamma_prime <= self.gamma and self.gamma + self.gamma_prime < 1):
            raise UsageError(f"need 0 < gamma' <= gamma and gamma + gamma' < 1, got gamma={self.gamma}, "
                             f"gamma'={self.gamma_prime}")
        if not self.epsilon > 0:
            raise UsageError("epsilon must be positive")
        if not self.T > 0:
            raise UsageError("T must be positive")
        if not 1 <= self.N <= 4:
            raise UsageError("N must lie in 1..4")

    def require_seed(self) -> int:
        if self.seed is None:
            raise UsageError("--seed is required for stochastic subcommands")
        return int(self.seed)

    @classmethod
    def from_sources(cls, args: argparse.Namespace, cp: configparser.ConfigParser | None = None) -> "RunConfig":
        """Config-file ``[run]``/``[grids]`` values, overridden by explicit flags."""
        vals: dict = {}
        if cp is not None and "run" in cp:
            run = dict(cp["run"])
            allowed = {"gamma", "gamma_prime", "epsilon", "t", "n", "seed"}
            bad = sorted(set(run) - allowed)
            if bad:
                raise SchemaError("unknown keys in [run]", bad)
            conv = {"gamma": float, "gamma_prime": float, "epsilon": float, "t": float, "n": int, "seed": int}
            for k, v in run.items():
                try:
                    vals[{"t": "T", "n": "N"}.get(k, k)] = conv[k](v)
                except ValueError:
                    raise SchemaError("non-numeric value in [run]", [k]) from None
        grids = dict(cp["grids"]) if cp is not None and "grids" in cp else {}
        for key in ("gamma", "gamma_prime", "epsilon", "T", "N", "seed"):
            v = getattr(args, key, None)
            if v is not None:
                vals[key] = v
        return cls(operator=getattr(args, "operator", None) or "triangle", grids=grids,
                   output=getattr(args, "out", None), **vals)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# helpers


def _threads(args) -> int:
    from .oracles import resolve_threads

    return resolve_threads(getattr(args, "threads", None))


def _point(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse point {text!r}; use x,y") from None
    if len(vals) != 2:
        raise UsageError(f"point {text!r} needs two coordinates")
    return np.array(vals)


def _points(text: str) -> np.ndarray:
    return np.array([_point(p) for p in text.split(";") if p.strip()])


def _load_operator(source: str):
    if source == "triangle":
        return triangle_instance(), None
    if source == "square":
        return unit_square_instance(), None
    if not os.path.exists(source):
        raise UsageError(f"unknown operator {source!r}: not a built-in name or a config file")
    return load_operator_config(source)


def _expr(text: str, with_t: bool):
    """Vectorised callable from a sympy expression in x, y (and t)."""
    import sympy as sp

    x, y, t = sp.symbols("x y t")
    try:
        e = sp.sympify(text, locals={"x": x, "y": y, "t": t})
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise UsageError(f"cannot parse expression {text!r}: {exc}") from None
    extra = e.free_symbols - {x, y, t}
    if extra or (not with_t and t in e.free_symbols):
        raise UsageError(f"expression {text!r} may only use x, y" + (", t" if with_t else ""))
    fn = sp.lambdify((t, x, y), e, "numpy")
    return e, (lambda tt, xx, yy: np.broadcast_to(np.asarray(fn(tt, xx, yy), dtype=float), np.broadcast(xx, yy).shape))


def _apply_L(spec, fexpr):
    """L f for a sympy expression f(x, y) as a vectorised callable."""
    import sympy as sp

    x, y = sp.symbols("x y")
    derivs = [sp.diff(fexpr, x, 2), sp.diff(fexpr, x, y), sp.diff(fexpr, y, 2), sp.diff(fexpr, x), sp.diff(fexpr, y)]
    fns = [sp.lambdify((x, y), d, "numpy") for d in derivs]

    def Lf(xx, yy):
        pts = np.stack(np.broadcast_arrays(xx, yy), -1)
        A, B, C, Dx, Dy = spec.global_coefficients(pts)
        d = [np.broadcast_to(np.asarray(fn(xx, yy), dtype=float), pts.shape[:-1]) for fn in fns]
        return A * d[0] + B * d[1] + C * d[2] + Dx * d[3] + Dy * d[4]

    return Lf


def _write_csv(rows, header, path):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    finally:
        if path:
            fh.close()


def _fmt(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# subcommands


def cmd_eval_kernel(args) -> int:
    """Model kernel K_t(src, dst) for a class, or the global kernel of an operator."""
    if not args.t > 0:
        raise UsageError("--t must be positive")
    src = _point(args.src)
    dsts = _points(args.dst)
    rows = []
    if args.operator:
        from .parametrix import DegenerateKernel, build_cover, global_kernel

        spec, _ = _load_operator(args.operator)
        cover = build_cover(spec, args.epsilon if args.epsilon is not None else 0.05)
        for dst in dsts:
            try:
                r = global_kernel(cover, args.t, src, dst, N=args.N or 1)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            if isinstance(r, DegenerateKernel):
                rows.append([_fmt(args.t), *map(_fmt, src), *map(_fmt, dst), "0.0", r.kind])
            else:
                rows.append([_fmt(args.t), *map(_fmt, src), *map(_fmt, dst), _fmt(r.value), ""])
    else:
        if not args.cls:
            raise UsageError("give --class (model kernel) or --operator (global kernel)")
        try:
            cls = BoundaryClass.from_name(args.cls)
            mk = ModelKernel2D(cls, FrozenCoefficients(args.a, args.b, args.d, args.e), args.t)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        for dst in dsts:
            try:
                val = float(model_kernel(mk, src, dst))
                atoms = model_kernel_atoms(mk, src, dst)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            on = {"face0": dst[0] == 0.0 and dst[1] != 0.0, "face1": dst[1] == 0.0 and dst[0] != 0.0,
                  "corner": dst[0] == 0.0 and dst[1] == 0.0}
            flags = "|".join(k for k, v in sorted(atoms.items()) if on[k] and float(v) > 0)
            rows.append([_fmt(args.t), *map(_fmt, src), *map(_fmt, dst), _fmt(val), flags])
    _write_csv(rows, ["t", "src_x", "src_y", "dst_x", "dst_y", "value", "atom_flags"], args.out)
    return 0


def _solve_points(spec, cfg: RunConfig, args) -> np.ndarray:
    if args.points:
        return _points(args.points)
    n = int(cfg.grids.get("points", 16))
    return spec.interior_samples(n, rng=np.random.default_rng(cfg.seed or 0), margin=0.05)


def cmd_solve(args) -> int:
    """(d_t - L) w = g, w(0) = f by the parametrix Neumann series or the FD oracle."""
    from .oracles import fd_solve, make_grid
    from .parametrix import ContractionError, build_cover, neumann_solve

    spec, cp = _load_operator(args.operator)
    cfg = RunConfig.from_sources(args, cp)
    fexpr, f = _expr(args.f, with_t=False)
    _, g = _expr(args.g, with_t=True)
    pts = _solve_points(spec, cfg, args)
    t0 = time.perf_counter()
    meta = {"method": args.method, "config": cfg.to_dict(), "f": args.f, "g": args.g}
    if args.method == "fd":
        n = int(cfg.grids.get("n", args.n))
        dt = float(cfg.grids.get("dt", args.dt))
        res = fd_solve(spec, make_grid(spec, n, dt=dt), f=lambda x, y: f(0.0, x, y), g=g, T=cfg.T)
        values = res.at(pts)
        meta.update(n=n, dt=dt, residual=None)
    else:
        Lf = _apply_L(spec, fexpr)
        # w = f + v with (d_t - L) v = g + L f, v(0) = 0
        src = lambda t, x, y: g(t, x, y) + Lf(x, y)  # noqa: E731
        try:
            res = neumann_solve(build_cover(spec, cfg.epsilon), src, cfg.T, eval_points=pts,
                                max_terms=int(cfg.grids.get("max_terms", 6)))
        except ContractionError as exc:
            print(f"kimura-mixed solve: error: {exc}\nsuggestion: reduce --T or --epsilon, or use --method fd",
                  file=sys.stderr)
            return EXIT_CONTRACTION
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        values = res.values + f(0.0, pts[:, 0], pts[:, 1])
        meta.update(residual=res.residual, ratio=res.ratio, terms=res.terms, converged=res.converged,
                    norms=res.norms)
    meta["runtime"] = time.perf_counter() - t0
    rows = [[_fmt(cfg.T), _fmt(p[0]), _fmt(p[1]), _fmt(v)] for p, v in zip(pts, values)]
    _write_csv(rows, ["t", "x", "y", "value"], args.out)
    meta_path = args.meta or (args.out + ".json" if args.out else None)
    if meta_path:
        with open(meta_path, "w") as fh:
            json.dump(_json_safe(meta), fh, sort_keys=True, indent=1)
    return 0


def _json_safe(v):
    from .validation import _jsonable

    return _jsonable(v)


def cmd_simulate(args) -> int:
    """Monte Carlo paths of the operator's diffusion, written as CSV."""
    from .oracles import IntegrationError, mc_paths, write_paths_csv

    spec, cp = _load_operator(args.operator)
    cfg = RunConfig.from_sources(args, cp)
    seed = cfg.require_seed()
    try:
        ens = mc_paths(spec, _point(args.start), cfg.T, args.n, dt=args.dt, rng_seed=seed, threads=_threads(args),
                       record_every=args.record_every)
    except (ValueError, IntegrationError) as exc:
        raise UsageError(str(exc)) from None
    out = args.out or "/dev/stdout"
    write_paths_csv(ens, out)
    if args.summary:
        hits = int(np.sum(ens.min_infinity_distance <= 1e-12)) if args.n else 0
        print(json.dumps({"n_paths": args.n, "seed": seed, "infinity_hits": hits,
                          "min_infinity_distance": _json_safe(float(ens.min_infinity_distance.min()) if args.n else math.inf)},
                         sort_keys=True), file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    """Run one validation suite; JSON-lines reports, optional CSV summary, exit 0 iff all pass."""
    from .validation import SUITES, exit_code, run_suite, write_csv

    if args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from {', '.join(sorted(SUITES))}")
    if args.operator not in (None, "triangle"):
        raise UsageError("validation suites run on the built-in triangle")
    config = {"threads": _threads(args)}
    for key in ("seed", "B", "gamma", "epsilon", "samples", "paths"):
        v = getattr(args, key, None)
        if v is not None:
            config[key] = v
    reports = run_suite(args.suite, config)
    lines = [r.to_json() for r in reports]
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("".join(line + "\n" for line in lines))
    else:
        for line in lines:
            print(line)
    if args.csv:
        write_csv(reports, args.csv)
    return exit_code(reports)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kimura-mixed", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $KIMURA_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    ek = sub.add_parser("eval-kernel", help="evaluate a model or global heat kernel")
    ek.add_argument("--class", dest="cls", help="model class: c_reg, e_reg, c_mix, e_inf, c_inf, interior")
    ek.add_argument("--a", type=float, default=1.0, help="diffusion coefficient of the first coordinate")
    ek.add_argument("--b", type=float, default=1.0, help="diffusion coefficient of the second coordinate")
    ek.add_argument("--d", type=float, default=0.0, help="drift of the first coordinate")
    ek.add_argument("--e", type=float, default=0.0, help="drift of the second coordinate")
    ek.add_argument("--t", type=float, required=True, help="time (positive)")
    ek.add_argument("--src", required=True, help="source point x,y")
    ek.add_argument("--dst", required=True, help="destination point(s) x,y[;x,y...]")
    ek.add_argument("--operator", help="global kernel of this operator (triangle, square or config path)")
    ek.add_argument("--epsilon", type=float, help="cover scale for the global kernel")
    ek.add_argument("--N", type=int, help="Duhamel order for the global kernel")
    ek.add_argument("--out", help="CSV output path (default stdout)")
    ek.set_defaults(func=cmd_eval_kernel)

    so = sub.add_parser("solve", help="solve (d_t - L) w = g, w(0) = f")
    so.add_argument("--operator", default="triangle", help="triangle, square or config path")
    so.add_argument("--method", choices=("parametrix", "fd"), default="parametrix", help="solver")
    so.add_argument("--f", default="0", help="initial data, expression in x, y")
    so.add_argument("--g", default="0", help="forcing, expression in t, x, y")
    so.add_argument("--T", type=float, help="final time")
    so.add_argument("--epsilon", type=float, help="cover scale")
    so.add_argument("--gamma", type=float, help="Hoelder exponent")
    so.add_argument("--gamma-prime", dest="gamma_prime", type=float, help="auxiliary Hoelder exponent")
    so.add_argument("--N", type=int, help="Duhamel order")
    so.add_argument("--seed", type=int, help="seed for the sample points")
    so.add_argument("--points", help="evaluation points x,y;x,y (default: interior samples)")
    so.add_argument("--n", type=int, default=64, help="FD intervals per axis")
    so.add_argument("--dt", type=float, default=1e-3, help="FD time step")
    so.add_argument("--out", help="CSV output path (default stdout)")
    so.add_argument("--meta", help="metadata JSON path (default: OUT.json)")
    so.set_defaults(func=cmd_solve)

    si = sub.add_parser("simulate", help="simulate diffusion paths")
    si.add_argument("--operator", default="triangle", help="triangle, square or config path")
    si.add_argument("--start", required=True, help="interior start point x,y")
    si.add_argument("--T", type=float, help="final time")
    si.add_argument("--n", type=int, default=1000, help="number of paths")
    si.add_argument("--dt", type=float, default=1e-3, help="time step")
    si.add_argument("--seed", type=int, help="RNG seed (required)")
    si.add_argument("--record-every", dest="record_every", type=int, help="record every k-th step")
    si.add_argument("--summary", action="store_true", help="print a JSON summary to stderr")
    si.add_argument("--out", help="CSV output path (default stdout)")
    si.set_defaults(func=cmd_simulate)

    va = sub.add_parser("validate", help="run a validation suite")
    va.add_argument("--suite", required=True, help="kernels, models, parametrix, oracles, limits or bounds")
    va.add_argument("--operator", help="operator for the limits suite (triangle)")
    va.add_argument("--B", type=float, help="upper end of the d range for the bounds suite")
    va.add_argument("--gamma", type=float, help="Hoelder exponent for the bounds suite")
    va.add_argument("--epsilon", type=float, help="cover scale for the parametrix suite")
    va.add_argument("--seed", type=int, help="seed for stochastic checks")
    va.add_argument("--samples", type=int, help="sampler draws")
    va.add_argument("--paths", type=int, help="Monte Carlo paths")
    va.add_argument("--out", help="JSON-lines output path (default stdout)")
    va.add_argument("--csv", help="CSV summary path")
    va.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except (UsageError, SchemaError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

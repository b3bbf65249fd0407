"""Command line front end: config validation, dispatch, manifests, CSV and SVG output."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import FbmaError

log = logging.getLogger("fbma")

SUBCOMMANDS = ("solve", "check-structure", "radial", "lift-ot", "minkowski", "reconstruct", "landscape")
SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["subcommand"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "subcommand": {"enum": list(SUBCOMMANDS)},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["interval", "box", "ball", "polygon", "vertices"]},
                "lo": {"oneOf": [_num, {"type": "array", "items": _num}]},
                "hi": {"oneOf": [_num, {"type": "array", "items": _num}]},
                "n": {"type": "integer", "minimum": 1, "maximum": 3},
                "radius": _pos,
                "sides": {"type": "integer", "minimum": 3},
                "resolution": {"type": "integer", "minimum": 8},
                "vertices": {"type": "array", "items": {"type": "array", "items": _num}, "minItems": 2},
                "density": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {"kind": {"enum": ["uniform", "distance_power"]}, "alpha": {"type": "number", "minimum": 0}},
                },
            },
        },
        "pair": {
            "type": "object",
            "additionalProperties": False,
            "required": ["tag"],
            "properties": {
                "tag": {"enum": ["reconstruction", "exponential", "transport", "borderline", "landscape_demo",
                                 "power", "custom"]},
                "params": {"type": "object"},
                "spec": {"type": "object"},
            },
        },
        "Lambda": _pos,
        "schedule": {"type": "array", "items": _pos},
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "placement": {"enum": ["lattice", "sunflower"]},
                "quad_order": {"type": "integer", "minimum": 1, "maximum": 8},
                "quad_level": {"type": "integer", "minimum": 0, "maximum": 3},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"grad": _pos, "normalization": _pos, "max_iter": {"type": "integer", "minimum": 1}},
        },
        "starts": {"type": "integer", "minimum": 1},
        "checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"ot_trials": {"type": "integer", "minimum": 0}, "vanishing_order": {"type": "number"},
                           "doubling": {"type": "boolean"}},
        },
        "radial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["solve", "hemisphere", "probe"]},
                "n": {"type": "integer", "minimum": 1},
                "form": {"enum": ["eigenvalue", "hemisphere", "gauss"]},
                "lam": _pos, "k": {"type": "number", "minimum": 0},
                "rho": {"oneOf": [_pos, {"const": "inf"}]},
                "radius": _pos,
                "a": _pos,
                "m_grid": {"type": "array", "items": _pos, "minItems": 2},
            },
        },
        "reconstruct": {"type": "object", "additionalProperties": False,
                        "properties": {"k": {"type": "number", "minimum": 0}}},
        "lift": {"type": "object", "additionalProperties": False,
                 "properties": {"alpha": {"type": "number", "minimum": 0}, "beta": _num,
                                "samples": {"type": "integer", "minimum": 10}}},
        "minkowski": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": {"type": "object", "additionalProperties": False, "required": ["kind"],
                      "properties": {"kind": {"enum": ["constant", "radial_bump"]}, "value": _pos,
                                     "amplitude": {"type": "number", "minimum": 0}, "width": _pos}},
                "samples": {"type": "integer", "minimum": 5},
            },
        },
        "landscape": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1}, "nu": _num, "Lambda": _pos,
                "rho_minus": _pos, "rho_plus": _pos, "C": _pos,
                "x_range": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
                "D_range": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
            },
        },
    },
}


class ConfigError(Exception):
    """Schema or syntax problem in a config file; carries the offending line."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line

    def __str__(self):
        base = super().__str__()
        return f"line {self.line}: {base}" if self.line else base


def _locate(text, path):
    """Best-effort line of a JSON path: follow the keys through the raw text."""
    pos = 0
    line = None
    for key in path:
        if isinstance(key, int):
            continue
        idx = text.find(f'"{key}"', pos)
        if idx < 0:
            break
        pos = idx + 1
        line = text.count("\n", 0, idx) + 1
    return line


def load_config(path):
    """Read and validate a JSON config; raises :class:`ConfigError`."""
    import jsonschema

    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, exc.lineno) from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path_ = list(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = [k for k in err.instance if k not in err.schema.get("properties", {})]
            path_ = path_ + extra[:1]
        where = "/".join(str(p) for p in path_) or "<root>"
        raise ConfigError(f"{where}: {err.message}", _locate(text, path_) or 1)
    return cfg


# ---------------------------------------------------------------------------
# builders


def build_domain(spec):
    from .convex_core import Polytope
    from .structure import WeightedDomain

    spec = spec or {"kind": "interval", "lo": -1.0, "hi": 1.0}
    kind = spec["kind"]
    if kind == "interval":
        P = Polytope.interval(float(spec.get("lo", -1.0)), float(spec.get("hi", 1.0)))
    elif kind == "box":
        P = Polytope.box(spec["lo"], spec["hi"])
    elif kind == "ball":
        P = Polytope.ball(int(spec.get("n", 2)), float(spec.get("radius", 1.0)), int(spec.get("resolution", 64)))
    elif kind == "polygon":
        P = Polytope.regular_polygon(int(spec["sides"]), float(spec.get("radius", 1.0)))
    else:
        P = Polytope(np.asarray(spec["vertices"], dtype=float))
    dens = spec.get("density", {"kind": "uniform"})
    if dens["kind"] == "distance_power" and dens.get("alpha", 0) > 0:
        return WeightedDomain.distance_power(P, float(dens["alpha"]))
    return WeightedDomain(P)


def build_pair(spec, n):
    from .structure import StructuralPair

    spec = spec or {"tag": "reconstruction"}
    tag, p = spec["tag"], spec.get("params", {})
    if tag == "reconstruction":
        return StructuralPair.reconstruction(float(p.get("k", 0.0)))
    if tag == "exponential":
        return StructuralPair.exponential(float(p.get("a", 1.0)))
    if tag == "transport":
        return StructuralPair.transport(int(p.get("n", n)), float(p.get("alpha", 0.0)), float(p.get("beta", 2.0)))
    if tag == "borderline":
        return StructuralPair.borderline(int(p.get("n", n)))
    if tag == "landscape_demo":
        return StructuralPair.landscape_demo(int(p.get("n", 4)))
    if tag == "power":
        return StructuralPair.power(float(p["F_exponent"]), p.get("G_exponent"))
    return StructuralPair.from_dict(spec["spec"])


def build_solve_config(cfg, seed):
    from .solver import SolveConfig

    mesh, tol = cfg.get("mesh", {}), cfg.get("tolerances", {})
    return SolveConfig(
        Lambda=float(cfg.get("Lambda", 1.0)),
        N=int(mesh.get("N", 100)),
        placement=mesh.get("placement", "lattice"),
        quad_order=int(mesh.get("quad_order", 4)),
        quad_level=int(mesh.get("quad_level", 0)),
        grad_tol=float(tol.get("grad", 1e-7)),
        normalization_tol=float(tol.get("normalization", 1e-9)),
        max_iter=int(tol.get("max_iter", 2000)),
        starts=int(cfg.get("starts", 1)),
        seed=seed,
        schedule=list(cfg.get("schedule", [])),
    )


# ---------------------------------------------------------------------------
# output helpers


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "fbma"
    return plt


def save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt

    plt.close(fig)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    return str(o)


def _solution_outputs(out, f, omega, history, stem=""):
    files = []
    p = out / f"{stem}nodes.csv"
    ne = f.node_envelope_values()
    write_csv(p, [f"y{k}" for k in range(f.n)] + ["c", "envelope"],
              [list(y) + [c, e] for y, c, e in zip(f.nodes, f.values, ne)])
    files.append(p)
    if omega is not None:
        p = out / f"{stem}omega.csv"
        write_csv(p, [f"x{k}" for k in range(f.n)], omega.vertices.tolist())
        files.append(p)
    if history:
        p = out / f"{stem}history.csv"
        keys = list(history[0].keys())
        write_csv(p, keys, [[h[k] for k in keys] for h in history])
        files.append(p)
    if omega is not None and f.n <= 2:
        plt = _figure()
        fig, ax = plt.subplots(figsize=(5, 4))
        lo, hi = omega.vertices.min(0), omega.vertices.max(0)
        pad = 0.1 * (hi - lo)
        if f.n == 1:
            X = np.linspace(lo[0] - pad[0], hi[0] + pad[0], 400)[:, None]
            U = f.primal(X)
            ax.plot(X[:, 0], U)
            ax.axhline(0, color="0.6", lw=0.5)
            write_csv(out / f"{stem}u_profile.csv", ["x", "u"], np.column_stack([X[:, 0], U]).tolist())
            files.append(out / f"{stem}u_profile.csv")
            ax.set_xlabel("x")
            ax.set_ylabel("u")
        else:
            g = [np.linspace(lo[k] - pad[k], hi[k] + pad[k], 120) for k in range(2)]
            XX, YY = np.meshgrid(*g)
            U = f.primal(np.column_stack([XX.ravel(), YY.ravel()])).reshape(XX.shape)
            ax.contour(XX, YY, U, levels=12, linewidths=0.6)
            V = np.vstack([omega.vertices, omega.vertices[:1]])
            ax.plot(V[:, 0], V[:, 1], "k-", lw=1)
            ax.set_aspect("equal")
        p = out / f"{stem}solution.svg"
        save_svg(fig, p)
        files.append(p)
    return files


# ---------------------------------------------------------------------------
# runners: each returns (status, ok, payload, files)


def run_solve(cfg, out, seed):
    from .solver import el_residual, minimize_energy, ot_optimality_check

    W = build_domain(cfg.get("domain"))
    pair = build_pair(cfg.get("pair"), W.P.n)
    sc = build_solve_config(cfg, seed)
    res = minimize_energy(sc, pair, W)
    payload = res.to_dict()
    files = _solution_outputs(out, res.f, res.omega, res.history)
    if res.converged:
        payload["el_residual"] = el_residual(res, pair, W).to_dict()
        trials = cfg.get("checks", {}).get("ot_trials", 0)
        if trials:
            payload["ot_check"] = ot_optimality_check(res, trials, pair, W, seed=seed).to_dict()
    return res.status, res.converged, payload, files


def run_check_structure(cfg, out, seed):
    from .structure import doubling_check, vanishing_order_check

    W = build_domain(cfg.get("domain"))
    pair = build_pair(cfg.get("pair"), W.P.n)
    from .structure import classify_structure

    cls = classify_structure(pair, W.P.n)
    payload = {"classification": cls.to_dict()}
    checks = cfg.get("checks", {})
    if "vanishing_order" in checks:
        payload["vanishing_order"] = vanishing_order_check(W, float(checks["vanishing_order"])).to_dict()
    if checks.get("doubling"):
        payload["doubling_constant"] = doubling_check(W, seed=seed)
    p = out / "classification.json"
    p.write_text(json.dumps(payload, indent=2, default=_json_default, sort_keys=True))
    return "verified", True, payload, [p]


def run_radial(cfg, out, seed):
    from .radial import (RadialProblem, dual_radial_probe, hemisphere_residual, hemisphere_residual_closed_form,
                         ode_residual, probe_is_monotone, probe_to_csv, radial_solve)

    rc = cfg.get("radial", {})
    mode = rc.get("mode", "solve")
    n = int(rc.get("n", 1))
    if mode == "hemisphere":
        a = float(rc.get("a", 1.0))
        r = np.arange(1, 10) / 10
        res = hemisphere_residual(a, n, r)
        closed = hemisphere_residual_closed_form(a, n, r)
        ok = abs(res - closed) <= 1e-10 * max(1.0, closed)
        p = out / "hemisphere.csv"
        write_csv(p, ["a", "n", "residual", "closed_form"], [[a, n, res, closed]])
        return ("verified" if ok else "mismatch"), ok, {"residual": res, "closed_form": closed}, [p]
    if mode == "probe":
        grid = rc.get("m_grid", [2.0, 1.0, 0.5, 0.25, 0.125, 0.0625])
        rows = dual_radial_probe(n, float(rc.get("lam", 1.0)), grid)
        p = out / "probe.csv"
        probe_to_csv(rows, p)
        mono = probe_is_monotone(rows)
        return ("verified" if mono else "not-monotone"), mono, {
            "monotone": mono, "rows": [r.__dict__ for r in rows]}, [p]
    rho = rc.get("rho", 1.0)
    prob = RadialProblem(n, rc.get("form", "eigenvalue"), lam=float(rc.get("lam", 1.0)), k=float(rc.get("k", 0.0)),
                         rho=float("inf") if rho == "inf" else float(rho), radius=float(rc.get("radius", 1.0)))
    prof = radial_solve(prob)
    p = out / "profile.csv"
    prof.to_csv(p)
    payload = prof.to_dict()
    payload["ode_residual"] = ode_residual(prof, np.linspace(0.05, 0.95, 19) * prof.R)
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(prof.r, prof.u)
    ax.set_xlabel("r")
    ax.set_ylabel("u")
    save_svg(fig, out / "profile.svg")
    return "converged", True, payload, [p, out / "profile.svg"]


def run_reconstruct(cfg, out, seed):
    from .apps import reconstruct

    W = build_domain(cfg.get("domain"))
    k = float(cfg.get("reconstruct", {}).get("k", 0.0))
    rec = reconstruct(W.P, k, build_solve_config(cfg, seed))
    files = _solution_outputs(out, rec.f, rec.omega, rec.solve.history)
    return rec.solve.status, rec.converged, rec.to_dict(), files


def _curvature(spec):
    spec = spec or {"kind": "constant"}
    if spec["kind"] == "constant":
        val = float(spec.get("value", 1.0))
        return lambda Y: np.full(len(np.atleast_2d(Y)), val)
    amp, width = float(spec.get("amplitude", 0.5)), float(spec.get("width", 0.3))
    return lambda Y: 1.0 + amp * np.exp(-np.sum(np.atleast_2d(Y) ** 2, axis=1) / width)


def run_minkowski(cfg, out, seed):
    from .apps import MinkowskiInstance, minkowski_solve

    W = build_domain(cfg.get("domain") or {"kind": "ball", "n": 2})
    mc = cfg.get("minkowski", {})
    inst = MinkowskiInstance(W.P, _curvature(mc.get("K")))
    sc = build_solve_config(cfg, seed)
    res = minkowski_solve(inst, sc, samples=int(mc.get("samples", 40)), seed=seed)
    files = _solution_outputs(out, res.f, res.omega, res.solve.history)
    S = res.surface()
    p = out / "surface.csv"
    write_csv(p, [f"x{k}" for k in range(res.f.n)] + ["height"], S.tolist())
    files.append(p)
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.scatter(S[:, 0], S[:, -1], s=1)
    ax.set_xlabel("x0")
    ax.set_ylabel("height")
    save_svg(fig, out / "surface.svg")
    files.append(out / "surface.svg")
    return ("verified" if res.verified else res.solve.status), res.verified, res.to_dict(), files


def run_lift(cfg, out, seed):
    from .apps import lift_to_csv, ot_cone_lift

    W = build_domain(cfg.get("domain"))
    lc = cfg.get("lift", {})
    lift = ot_cone_lift(W.P, float(lc.get("alpha", 0.0)), float(lc.get("beta", 2.0)),
                        build_solve_config(cfg, seed), samples=int(lc.get("samples", 200)), seed=seed)
    p = out / "lift.csv"
    lift_to_csv(lift, p)
    rep = lift.report
    ok = rep["status"] == "converged" and rep["fraction_within_5pct"] >= 0.9 and rep["min_phi_t"] > 0
    return ("verified" if ok else rep["status"]), ok, rep, [p]


def run_landscape(cfg, out, seed):
    from .functionals import LandscapeParams, ehat_landscape
    from .structure import StructuralPair

    lc = cfg.get("landscape", {})
    n = int(lc.get("n", 4))
    params = LandscapeParams(n=n, nu=float(lc.get("nu", 5.0)), Lambda=float(lc.get("Lambda", 1.0)),
                             rho_minus=float(lc.get("rho_minus", 1.0)), rho_plus=float(lc.get("rho_plus", 1.0)),
                             C=float(lc.get("C", 1.0)))
    pair = build_pair(cfg["pair"], n) if "pair" in cfg else StructuralPair.landscape_demo(n)
    xr = lc.get("x_range", [-3, 2, 200])
    Dr = lc.get("D_range", [-3, 8, 200])
    land = ehat_landscape(params, pair, np.logspace(xr[0], xr[1], int(xr[2])), np.logspace(Dr[0], Dr[1], int(Dr[2])))
    A = land.find_two_component_level()
    p = out / "landscape.csv"
    land.to_csv(p)
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.contourf(np.log10(land.D), np.log10(land.x), land.values, levels=30)
    if A is not None:
        ax.contour(np.log10(land.D), np.log10(land.x), np.nan_to_num(land.values, nan=np.inf), levels=[A],
                   colors="k", linewidths=1)
    ax.set_xlabel("log10 D")
    ax.set_ylabel("log10 x")
    save_svg(fig, out / "landscape.svg")
    payload = {"params": params.to_dict(), "level": A,
               "components": None if A is None else land.components(A)}
    return ("verified" if A is not None else "no-level"), A is not None, payload, [p, out / "landscape.svg"]


RUNNERS = {
    "solve": run_solve,
    "check-structure": run_check_structure,
    "radial": run_radial,
    "lift-ot": run_lift,
    "minkowski": run_minkowski,
    "reconstruct": run_reconstruct,
    "landscape": run_landscape,
}


# ---------------------------------------------------------------------------
# entry points


def _versions():
    import scipy

    return {"fbma": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def run_config(path, out=None, seed=None, threads=None, subcommand=None):
    """Validate, dispatch and write the manifest. Returns the process exit code."""
    started = time.time()
    manifest = {"config_path": str(path), "versions": _versions(), "status": None, "outputs": []}
    try:
        cfg = load_config(path)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        out_dir = Path(out or os.environ.get("FBMA_OUT_DIR") or "fbma-out")
        _write_manifest(out_dir, {**manifest, "status": "config-error", "error": str(exc), "exit_code": 2})
        return 2
    if subcommand and subcommand != cfg["subcommand"]:
        msg = f"subcommand {subcommand!r} does not match config subcommand {cfg['subcommand']!r}"
        print(f"config error: {msg}", file=sys.stderr)
        out_dir = Path(out or os.environ.get("FBMA_OUT_DIR") or cfg.get("output") or "fbma-out")
        _write_manifest(out_dir, {**manifest, "status": "config-error", "error": msg, "exit_code": 2})
        return 2
    seed = int(seed if seed is not None else cfg.get("seed", 0))
    out_dir = Path(out or os.environ.get("FBMA_OUT_DIR") or cfg.get("output") or "fbma-out")
    threads = threads or (int(os.environ["FBMA_THREADS"]) if os.environ.get("FBMA_THREADS") else None)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest.update({"inputs": cfg, "seed": seed, "threads": threads, "subcommand": cfg["subcommand"]})
    code = 1
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            status, ok, payload, files = RUNNERS[cfg["subcommand"]](cfg, out_dir, seed)
        manifest.update({"status": status, "result": payload,
                         "outputs": sorted(str(Path(f).name) for f in files)})
        code = 0 if ok else 1
    except FbmaError as exc:
        log.error("%s failed: %s", cfg["subcommand"], exc)
        manifest.update({"status": type(exc).__name__, "error": str(exc)})
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.exception("numerical failure")
        manifest.update({"status": "numerical-failure", "error": f"{type(exc).__name__}: {exc}"})
    manifest["exit_code"] = code
    manifest["elapsed"] = time.time() - started
    _write_manifest(out_dir, manifest)
    return code


def _write_manifest(out_dir, manifest):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default, sort_keys=True))


def build_parser():
    parser = argparse.ArgumentParser(prog="fbma", description="Free boundary Monge-Ampere solver")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run",) + SUBCOMMANDS:
        sp = sub.add_parser(name, help="run the subcommand named in the config" if name == "run" else None)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", help="output directory (env FBMA_OUT_DIR)")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--threads", type=int, help="BLAS thread cap (env FBMA_THREADS)")
        sp.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        import warnings

        warnings.simplefilter("ignore", RuntimeWarning)
    sub = None if args.command == "run" else args.command
    return run_config(args.config, args.out, args.seed, args.threads, sub)


if __name__ == "__main__":
    sys.exit(main())

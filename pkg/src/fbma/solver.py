"""Minimization of the discrete energy over intercepts, with optimality diagnostics."""

from __future__ import annotations

import math
import time
import warnings
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .convex_core import (
    PiecewiseAffineConvex,
    Polytope,
    _cell_polytopes,
    _cell_simplices,
    negative_set,
    primal_bounding_box,
    simplex_rule,
)
from .exceptions import (
    EmptyFreeBoundaryError,
    HypothesisViolation,
    InvalidInputError,
    NormalizationFailure,
    ReplacementInvalid,
    TargetUnreachable,
)
from .functionals import DEFAULT_QUAD, QuadratureOptions, energy_and_gradient, functional_I, functional_J
from .normalize import affine_replacement, boundary_contact_replacement, normalize_translation
from .structure import classify_structure

CONVERGED = "converged"
DIVERGED = "diverged-diam"
NORM_FAIL = "normalization-failure"
MAX_ITER = "max-iter"


@dataclass
class SolveConfig:
    """Solver settings.

    ``grad_tol`` bounds the scaled L1 norm of the gradient, which equals the
    Euler-Lagrange mass-balance residual at a translation-critical point.
    """

    Lambda: float = 1.0
    N: int = 100
    placement: str = "lattice"
    max_iter: int = 2000
    grad_tol: float = 1e-7
    normalization_tol: float = 1e-9
    armijo: float = 1e-4
    memory: int = 10
    replacement_every: int = 10
    starts: int = 1
    seed: int = 0
    schedule: list = field(default_factory=list)
    quad_order: int = 4
    quad_level: int = 0
    boundary_level: int = 0
    diam_limit: float = 1e3
    collapse_limit: float = 1e-6
    require_structure: bool = False
    refinement_check: bool = True
    refinement_diam_tol: float = 0.03
    refinement_v0_tol: float = 0.05
    nodes: np.ndarray | None = None

    def __post_init__(self):
        if self.Lambda <= 0 and not self.schedule:
            raise InvalidInputError("Lambda must be positive")
        if self.grad_tol <= 0 or self.normalization_tol <= 0:
            raise InvalidInputError("tolerances must be positive")
        if self.starts < 1 or self.max_iter < 1:
            raise InvalidInputError("starts and max_iter must be >= 1")

    @property
    def quad(self):
        return QuadratureOptions(self.quad_order, self.quad_level, self.boundary_level)

    def to_dict(self):
        d = asdict(self)
        d["nodes"] = None if self.nodes is None else np.asarray(self.nodes).tolist()
        return d


@dataclass
class SolveResult:
    """Final state of a solve together with its history and diagnostics."""

    f: PiecewiseAffineConvex
    omega: Polytope | None
    report: object
    history: list
    status: str
    config: SolveConfig
    classification: object = None
    normalization: object = None
    starts: list = field(default_factory=list)
    message: str = ""
    elapsed: float = 0.0

    @property
    def converged(self):
        return self.status == CONVERGED

    def window(self):
        """Observed ranges of v(0) and diam(Omega) along the run."""
        v0 = [h["v0"] for h in self.history]
        dm = [h["diam"] for h in self.history]
        return {"v0": [min(v0), max(v0)], "diam": [min(dm), max(dm)]} if self.history else {}

    def primal(self, X):
        return self.f.primal(X)

    def to_dict(self):
        return {
            "status": self.status,
            "message": self.message,
            "elapsed": self.elapsed,
            "report": None if self.report is None else self.report.to_dict(),
            "function": self.f.to_dict(),
            "omega": None if self.omega is None else self.omega.to_dict(),
            "classification": None if self.classification is None else self.classification.to_dict(),
            "normalization": None if self.normalization is None else self.normalization.to_dict(),
            "starts": self.starts,
            "window": self.window(),
            "config": self.config.to_dict(),
            "iterations": len(self.history),
        }


# ---------------------------------------------------------------------------
# node placement


def place_nodes(P, N, rule="lattice", seed=0):
    """Slope nodes covering P: its vertices, boundary points and interior points.

    ``lattice`` uses a jittered hexagonal (2-D) or cubic (3-D) lattice,
    ``sunflower`` a golden-angle spiral mapped into P (2-D only).
    """
    n = P.n
    if n == 1:
        lo, hi = P.vertices[:, 0]
        return np.linspace(lo, hi, N)[:, None]
    rng = np.random.default_rng(seed)
    area = P.volume
    bpts = P.boundary_points(512)
    perim = float(np.sum(np.linalg.norm(np.roll(bpts, -1, 0) - bpts, axis=1))) if n == 2 else None
    if n == 2:
        # area*(2/sqrt3)/h^2 + perim/h = N
        a, b = area * 2 / math.sqrt(3), perim
        inv_h = (-b + math.sqrt(b * b + 4 * a * N)) / (2 * a)
        h = 1.0 / inv_h
        nb = max(int(round(perim / h)), len(P.vertices))
        bnd = P.boundary_points(nb)
        bnd = np.vstack([P.vertices, bnd])
        if rule == "sunflower":
            k = np.arange(N - len(bnd)) + 0.5
            r = np.sqrt(k / len(k))
            th = k * math.pi * (3 - math.sqrt(5))
            c = P.centroid
            dirs = np.column_stack([np.cos(th), np.sin(th)])
            reach = np.array([_ray_exit(P, c, d) for d in dirs])
            inner = c + (r * (1 - h / (2 * reach.clip(min=h))) * reach)[:, None] * dirs
        else:
            lo, hi = P.vertices.min(0), P.vertices.max(0)
            xs = np.arange(lo[0] - h, hi[0] + h, h)
            ys = np.arange(lo[1] - h, hi[1] + h, h * math.sqrt(3) / 2)
            X, Y = np.meshgrid(xs, ys)
            X = X + (np.arange(len(ys))[:, None] % 2) * h / 2
            pts = np.column_stack([X.ravel(), Y.ravel()])
            pts = pts + rng.uniform(-0.05, 0.05, pts.shape) * h
            inner = pts[P.boundary_distance(pts) > 0.45 * h]
    else:
        vol = P.volume
        h = (vol / N) ** (1 / 3)
        bnd = np.vstack([P.vertices, P.boundary_points(max(int(N * 0.3), 20), seed=seed)])
        lo, hi = P.vertices.min(0), P.vertices.max(0)
        grids = np.meshgrid(*[np.arange(lo[k], hi[k] + h, h) for k in range(3)])
        pts = np.column_stack([g.ravel() for g in grids])
        pts = pts + rng.uniform(-0.05, 0.05, pts.shape) * h
        inner = pts[P.boundary_distance(pts) > 0.45 * h]
    nodes = np.vstack([bnd, inner])
    from .convex_core import _dedup_rows
    return _dedup_rows(nodes, 1e-9)


def _ray_exit(P, c, d):
    with np.errstate(divide="ignore"):
        t = (P.b - P.A @ c) / (P.A @ d)
    return float(np.min(t[t > 0]))


def gauge(P, Y):
    """Minkowski gauge of P (origin interior) at points Y."""
    Y = np.atleast_2d(Y)
    return np.max(Y @ (P.A / P.b[:, None]).T, axis=1).clip(min=0.0)


def enemy_start(P, nodes, delta=1.0, C=1.0):
    """Dual of max(support_P - C, -delta): delta + (C - delta) * gauge_P."""
    return delta + (C - delta) * gauge(P, nodes)


# ---------------------------------------------------------------------------
# one descent run


class _Objective:
    """Reduced energy: intercepts are renormalized before evaluation."""

    def __init__(self, pair, W, config, translate):
        self.pair, self.W, self.config, self.translate = pair, W, config, translate
        self.quad = config.quad

    def evaluate(self, f):
        if self.translate:
            f, norm = normalize_translation(f, self.pair, self.W, tol=self.config.normalization_tol,
                                            quad_opts=self.quad)
        else:
            norm = None
        rep = energy_and_gradient(f, self.pair, self.W, self.config.Lambda, self.quad)
        return f, rep, norm


def _diam(f):
    try:
        om = negative_set(f)
    except Exception:  # noqa: BLE001 - degenerate free set counts as divergence
        return math.inf, None
    return om.diameter, om


def _run(f0, pair, W, config, translate, log_every=0):
    obj = _Objective(pair, W, config, translate)
    status, message = MAX_ITER, ""
    try:
        f, rep, norm = obj.evaluate(f0.canonicalize())
    except NormalizationFailure as exc:
        return f0, None, [], NORM_FAIL, str(exc), None
    if rep.divergent:
        return f, rep, [], NORM_FAIL, "initial energy diverges", norm
    d0, om = _diam(f)
    v00 = float(f.dual(np.zeros((1, f.n)))[0])
    history = []
    S, Yk = deque(maxlen=config.memory), deque(maxlen=config.memory)
    stall = 0
    for it in range(config.max_iter):
        g = rep.gradient
        measure = rep.scaled_grad_norm
        diam, om = _diam(f)
        v0 = float(f.dual(np.zeros((1, f.n)))[0])
        history.append({"iter": it, "E": rep.E, "grad": measure, "diam": diam, "v0": v0,
                        "inf_v": float(np.min(f.node_envelope_values())), "J": rep.J, "I": rep.I})
        if measure <= config.grad_tol:
            status = CONVERGED
            break
        if diam > config.diam_limit * d0 or v0 < config.collapse_limit * v00:
            status, message = DIVERGED, f"diam {diam:.3g} (start {d0:.3g}), v(0) {v0:.3g}"
            break
        # L-BFGS two-loop direction
        q = g.copy()
        alphas = []
        for s, y in reversed(list(zip(S, Yk))):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        if S:
            q *= (S[-1] @ Yk[-1]) / (Yk[-1] @ Yk[-1])
        else:
            q *= min(1.0, 0.1 * (1.0 + float(np.max(np.abs(f.values)))) / max(float(np.max(np.abs(g))), 1e-300))
        for (s, y), a in zip(zip(S, Yk), reversed(alphas)):
            b = (y @ q) / (y @ s)
            q += (a - b) * s
        d = -q
        slope = float(g @ d)
        if slope >= 0:
            S.clear()
            Yk.clear()
            d = -g * min(1.0, 0.1 / max(float(np.max(np.abs(g))), 1e-300))
            slope = float(g @ d)
        step = 1.0
        accepted = False
        while step > 1e-14:
            trial = f.with_values(f.values + step * d)
            try:
                f_new, rep_new, norm_new = obj.evaluate(trial.canonicalize())
            except (NormalizationFailure, EmptyFreeBoundaryError):
                step *= 0.5
                continue
            if rep_new.divergent or not np.isfinite(rep_new.E):
                step *= 0.5
                continue
            if rep_new.E <= rep.E + config.armijo * step * slope:
                accepted = True
                break
            # below energy roundoff Armijo cannot discriminate; fall back on the gradient measure
            if (abs(rep_new.E - rep.E) <= 1e-13 * (1 + abs(rep.E))
                    and rep_new.scaled_grad_norm < measure):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            status, message = MAX_ITER, "line search stalled"
            if measure <= 100 * config.grad_tol:
                message += " near tolerance"
            break
        # replacement keeps u on the free set and lowers J
        if config.replacement_every and (it + 1) % config.replacement_every == 0:
            try:
                f_rep = boundary_contact_replacement(f_new)
                if np.any(f_rep.values != f_new.values):
                    f_rep, rep_rep, norm_rep = obj.evaluate(f_rep)
                    if rep_rep.E <= rep_new.E:
                        f_new, rep_new, norm_new = f_rep, rep_rep, norm_rep
            except (ReplacementInvalid, NormalizationFailure, EmptyFreeBoundaryError):
                pass
        s_vec = f_new.values - f.values
        y_vec = rep_new.gradient - g
        if s_vec @ y_vec > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec)
            Yk.append(y_vec)
        if rep.E - rep_new.E <= 1e-15 * (1 + abs(rep.E)) and rep_new.scaled_grad_norm >= 0.9 * measure:
            stall += 1
        else:
            stall = 0
        f, rep, norm = f_new, rep_new, norm_new
        if stall >= 20:
            message = "energy stagnated"
            break
    return f, rep, history, status, message, norm


def _initial_functions(P, nodes, config):
    rng = np.random.default_rng(config.seed)
    params = [(1.0, 1.0)]
    while len(params) < config.starts:
        delta = float(np.exp(rng.uniform(np.log(0.3), np.log(3.0))))
        C = delta * float(np.exp(rng.uniform(0.0, np.log(4.0))))
        params.append((delta, C))
    return [(d, C, PiecewiseAffineConvex(nodes, enemy_start(P, nodes, d, C))) for d, C in params]


def _refinement_verdict(f, delta, C, pair, W, config, translate):
    """Compare with a solve on about half the nodes.

    A genuine solution has a free set whose diameter (and, when g varies,
    whose ``v(0)``) settles as nodes are added; growth beyond the tolerances
    marks a minimizing sequence that escapes to infinity.
    """
    from dataclasses import replace

    P = W.P
    Nc = max(P.n + 2, config.N // 2)
    nodes = place_nodes(P, Nc, config.placement, config.seed)
    d = 1.0 if delta is None else delta
    c = 1.0 if C is None else C
    f0 = PiecewiseAffineConvex(nodes, enemy_start(P, nodes, d, c))
    cfg = replace(config, N=Nc, refinement_check=False)
    fc, _, _, status_c, _, _ = _run(f0, pair, W, cfg, translate)
    if status_c not in (CONVERGED, MAX_ITER):
        return {"coarse_N": Nc, "coarse_status": status_c, "diverging": False, "message": "inconclusive"}
    d_f, _ = _diam(f)
    d_c, _ = _diam(fc)
    growth = d_f / d_c - 1.0
    out = {"coarse_N": Nc, "coarse_status": status_c, "diam_coarse": d_c, "diam_fine": d_f, "diam_growth": growth}
    diverging = growth > config.refinement_diam_tol
    if translate:
        v_f = float(f.dual(np.zeros((1, f.n)))[0])
        v_c = float(fc.dual(np.zeros((1, f.n)))[0])
        decay = 1.0 - v_f / v_c
        out.update({"v0_coarse": v_c, "v0_fine": v_f, "v0_decay": decay})
        diverging = diverging or decay > config.refinement_v0_tol
    out["diverging"] = bool(diverging)
    out["message"] = (f"free set diameter {d_c:.4g} -> {d_f:.4g} from {Nc} to {f.N} nodes"
                      + (f", v(0) {out['v0_coarse']:.4g} -> {out['v0_fine']:.4g}" if translate else ""))
    return out


def minimize_energy(config, pair, W, initial=None):
    """Minimize ``-log I + Lambda J`` over intercepts at fixed slope nodes.

    Each start descends with L-BFGS and Armijo backtracking on the energy of
    the translation-normalized function; the best converged start is
    returned. With constant g the energy is translation invariant and the
    final function is recentered so the free set is in John position.

    A converged (or stalled) start is re-solved on about half the nodes; if
    the free set keeps growing, or ``v(0)`` keeps falling, the start is
    reported as diverging.
    """
    t0 = time.perf_counter()
    P = W.P
    cls = classify_structure(pair, P.n)
    if cls.label == "none":
        msg = f"pair fails the structural checks ({cls.witness})"
        if config.require_structure:
            raise HypothesisViolation(msg)
        warnings.warn(msg + "; solving anyway", RuntimeWarning, stacklevel=2)
    translate = not pair.g_constant
    if pair.g_constant:
        grid = W.grid
        bary = (grid.points * (grid.weights * grid.density)[:, None]).sum(0) / W.H
        if np.linalg.norm(bary) > 1e-8 * P.diameter:
            raise HypothesisViolation(
                "with linear G a solution exists only if the density barycenter of P is the origin "
                f"(found {bary.tolist()})")
    if config.schedule:
        return _continuation(config, pair, W, initial)
    nodes = config.nodes if config.nodes is not None else place_nodes(P, config.N, config.placement, config.seed)
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    if nodes.shape[1] != P.n:
        nodes = nodes.reshape(-1, P.n)
    starts = [(None, None, initial)] if initial is not None else _initial_functions(P, nodes, config)
    best, runs = None, []
    for delta, C, f0 in starts:
        f, rep, hist, status, message, norm = _run(f0, pair, W, config, translate)
        refinement = None
        if config.refinement_check and status in (CONVERGED, MAX_ITER) and config.nodes is None:
            refinement = _refinement_verdict(f, delta, C, pair, W, config, translate)
            if refinement.get("diverging"):
                status, message = DIVERGED, refinement["message"]
        runs.append({"delta": delta, "C": C, "status": status, "message": message,
                     "E": None if rep is None else rep.E, "iterations": len(hist), "refinement": refinement})
        cand = (f, rep, hist, status, message, norm)
        if best is None or _better(cand, best):
            best = cand
    f, rep, hist, status, message, norm = best
    omega = None
    if status == CONVERGED:
        if not translate:
            try:
                f, norm = normalize_translation(f, pair, W, quad_opts=config.quad)
                rep = energy_and_gradient(f, pair, W, config.Lambda, config.quad)
            except Exception as exc:  # noqa: BLE001 - report, keep result
                message = f"recentering failed: {exc}"
    try:
        omega = negative_set(f)
    except EmptyFreeBoundaryError:
        omega = None
    return SolveResult(f, omega, rep, hist, status, config, cls, norm, runs, message,
                       time.perf_counter() - t0)


def _better(a, b):
    ca, cb = a[3] == CONVERGED, b[3] == CONVERGED
    if ca != cb:
        return ca
    ea = math.inf if a[1] is None else a[1].E
    eb = math.inf if b[1] is None else b[1].E
    return ea < eb


def _continuation(config, pair, W, initial):
    """Solve along a decreasing Lambda schedule, warm-starting each stage."""
    from dataclasses import replace

    stages, last_ok, result = [], None, None
    current = initial
    for Lam in config.schedule:
        cfg = replace(config, Lambda=float(Lam), schedule=[])
        result = minimize_energy(cfg, pair, W, initial=current)
        stages.append({"Lambda": float(Lam), "status": result.status})
        if result.converged:
            last_ok = float(Lam)
            current = result.f
        else:
            break
    result.starts = stages
    result.message = (result.message + f"; last successful Lambda {last_ok}").strip("; ")
    return result


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class ELResidual:
    per_node: np.ndarray
    total: float
    mu_sum: float
    nu_sum: float
    boundary_violations: list

    def to_dict(self):
        return {"total": self.total, "mu_sum": self.mu_sum, "nu_sum": self.nu_sum,
                "boundary_violations": self.boundary_violations}


def el_residual(result, pair, W, tol=1e-8):
    """Per-node ``|mu(V_i) - nu_i|`` of the two probability measures, and their sum.

    Nodes whose cell misses the free set but carry ``nu_i > tol`` are listed
    as violations of the gradient-image condition.
    """
    f = result.f if hasattr(result, "f") else result
    cfg = getattr(result, "config", None)
    quad = cfg.quad if cfg is not None else DEFAULT_QUAD
    Lam = cfg.Lambda if cfg is not None else 1.0
    rep = energy_and_gradient(f, pair, W, Lam, quad)
    per = np.abs(rep.mu - rep.nu)
    bad = [int(i) for i in np.flatnonzero((rep.mu == 0) & (rep.nu > tol))]
    return ELResidual(per, math.fsum(per), math.fsum(rep.mu), math.fsum(rep.nu), bad)


def _cell_quadrature(f, quad):
    lo, hi = primal_bounding_box(f)
    cells = _cell_polytopes(f, lo, hi, clip_negative=True)
    simp, owner = _cell_simplices(cells, f.n)
    bary, w = simplex_rule(f.n, quad.order, quad.level)
    pts = np.einsum("qk,skn->sqn", bary, simp)
    vol = np.abs(np.linalg.det(simp[:, 1:] - simp[:, :1])) / math.factorial(f.n)
    return pts.reshape(-1, f.n), (vol[:, None] * w[None, :]).ravel(), np.repeat(owner, len(w))


@dataclass
class OTCheck:
    worst_margin: float
    margins: list
    skipped: int

    def to_dict(self):
        return {"worst_margin": self.worst_margin, "margins": self.margins, "skipped": self.skipped}


def ot_optimality_check(result, trials, pair, W, seed=0, amplitude=0.1, candidates=None):
    """Test ``int u dmu + int v dnu <= int u' dmu + int v' dnu`` on random convex competitors.

    Competitors are perturbed envelopes matched to the solution's J (concave
    G) or I (linear G) by an affine replacement. ``dmu`` lives on the free set
    and ``dnu`` on the nodes; returns the smallest right-minus-left margin.
    """
    f = result.f
    cfg = result.config
    quad = cfg.quad
    rep = energy_and_gradient(f, pair, W, cfg.Lambda, quad)
    X, wx, owner = _cell_quadrature(f, quad)
    negu = np.maximum(-f.primal(X), 0.0)
    dens = wx * pair.f(negu)
    dens = dens / math.fsum(dens)
    u = f.primal(X)
    lhs = math.fsum(dens * u) + math.fsum(rep.nu * f.values)
    rng = np.random.default_rng(seed)
    if candidates is None:
        candidates = []
        for _ in range(trials):
            a = rng.normal(size=f.n)
            Q = rng.normal(size=(f.n, f.n))
            Q = Q @ Q.T / f.n
            bump = 0.5 * np.einsum("ij,jk,ik->i", f.nodes, Q, f.nodes) + f.nodes @ a * 0.1
            noise = rng.uniform(-1, 1, f.N) * 0.2
            candidates.append(f.values + amplitude * (bump + noise))
    margins, skipped = [], 0
    J0, I0 = rep.J, rep.I
    for c_hat in candidates:
        cand = PiecewiseAffineConvex(f.nodes, c_hat, merge=False).canonicalize()
        try:
            if pair.g_constant:
                cand, _, _ = affine_replacement(cand, "I", I0, pair, W, quad_opts=quad)
            else:
                cand, _, _ = affine_replacement(cand, "J", J0, pair, W, quad_opts=quad)
        except (TargetUnreachable, NormalizationFailure, EmptyFreeBoundaryError):
            skipped += 1
            continue
        rhs = math.fsum(dens * cand.primal(X)) + math.fsum(rep.nu * cand.values)
        margins.append(rhs - lhs)
    worst = min(margins) if margins else math.nan
    return OTCheck(worst, margins, skipped)

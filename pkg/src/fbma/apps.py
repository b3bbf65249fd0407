"""Application drivers: reconstruction, hemispherical Minkowski problem, cone lift, identity checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, least_squares, minimize

from .convex_core import PiecewiseAffineConvex, Polytope, negative_set, primal_bounding_box
from .exceptions import (
    BarycenterError,
    HypothesisViolation,
    IdentityUndefined,
    InvalidInputError,
)
from .functionals import _I_parts, energy_and_gradient
from .solver import SolveConfig, minimize_energy
from .structure import StructuralPair, WeightedDomain


# ---------------------------------------------------------------------------
# shared helpers


def _lambda_g_constant(f, pair, H, quad):
    """Multiplier of a critical point with constant g: ``H / int_Omega f(-u)``."""
    _, per_f, _, _ = _I_parts(f, pair, quad)
    return H / math.fsum(per_f)


def normalize_multiplier(f, pair, H, quad):
    """Scale intercepts by ``s`` (``u -> s u(x/s)``) until the multiplier equals 1.

    Returns ``(scaled function, s, multiplier before)``. Only meaningful for
    pairs with constant g, where the multiplier is ``H / int f(-u)``.
    """
    lam0 = _lambda_g_constant(f, pair, H, quad)

    def resid(log_s):
        return math.log(_lambda_g_constant(f.with_values(f.values * math.exp(log_s)), pair, H, quad))

    lo, hi = -1.0, 1.0
    while resid(lo) * resid(hi) > 0:
        lo, hi = 2 * lo, 2 * hi
        if hi > 200:
            raise InvalidInputError("multiplier normalization failed to bracket")
    log_s = brentq(resid, lo, hi, xtol=1e-14, rtol=1e-14)
    s = math.exp(log_s)
    return f.with_values(f.values * s), s, lam0


def recenter_free_set(f):
    """Translate u so that its free set has centroid 0; returns ``(function, shift)``."""
    omega = negative_set(f)
    c = omega.centroid
    return f.tilted(c), c


def aligned_distance(u1, u2, X, x0=None):
    """``min_t sup_X |u1(x + t) - u2(x)|`` over translations t.

    ``u1`` and ``u2`` are callables on point arrays; the sup is over the
    sample set ``X``.
    """
    X = np.atleast_2d(X)
    target = u2(X)

    def gap(t):
        return float(np.max(np.abs(u1(X + t) - target)))

    t0 = np.zeros(X.shape[1]) if x0 is None else np.asarray(x0, float)
    res = minimize(gap, t0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000})
    return min(res.fun, gap(t0)), res.x


def _barycenter(P):
    return P.centroid


# ---------------------------------------------------------------------------
# reconstruction / eigenvalue


@dataclass
class Reconstruction:
    """Normalized solution ``det D^2 u = (-u)^k`` with gradient image P."""

    f: PiecewiseAffineConvex
    omega: Polytope
    k: float
    scale: float
    multiplier_before: float
    multiplier_after: float
    solve: object

    @property
    def converged(self):
        return self.solve.converged

    def u(self, X):
        return self.f.primal(np.atleast_2d(X))

    def to_dict(self):
        return {"k": self.k, "scale": self.scale, "multiplier_before": self.multiplier_before,
                "multiplier_after": self.multiplier_after, "omega": self.omega.to_dict(),
                "function": self.f.to_dict(), "solve": self.solve.to_dict()}


def reconstruct(P, k=0.0, config=None):
    """Solve ``det D^2 u = (-u)^k`` on a free set with ``grad u`` onto P, normalized to multiplier 1.

    Runs the minimization with ``F = s^(k+1)/(k+1)``, ``G = s`` and uniform
    density, rescales to multiplier one and recenters the free set at its
    centroid. P must have centroid 0.
    """
    if k < 0:
        raise InvalidInputError("k must be >= 0")
    c = _barycenter(P)
    if np.linalg.norm(c) > 1e-9 * P.diameter:
        raise HypothesisViolation(
            f"P must have barycenter 0 for a solution to exist (barycenter {c.tolist()})")
    config = config or SolveConfig(Lambda=1.0)
    pair = StructuralPair.reconstruction(k)
    W = WeightedDomain(P)
    res = minimize_energy(config, pair, W)
    f, s, lam0 = normalize_multiplier(res.f, pair, W.H, config.quad)
    f, _ = recenter_free_set(f)
    lam1 = _lambda_g_constant(f, pair, W.H, config.quad)
    return Reconstruction(f, negative_set(f), float(k), s, lam0, lam1, res)


# ---------------------------------------------------------------------------
# identities


@dataclass
class IdentityResult:
    mode: str
    value: float
    expected: float
    residual: float

    def to_dict(self):
        return {"mode": self.mode, "value": self.value, "expected": self.expected, "residual": self.residual}


def identity_check(result, mode, pair, W, a=None):
    """Relative residual of the closed-form identity satisfied at critical points.

    ``homogeneous``: with F homogeneous of degree k and G linear or a power,
    scaling criticality gives ``Lambda J = n + k``.
    ``exponential``: with ``F = (e^{as} - 1)/a`` and ``G = s``, summing the
    mass balance gives ``I = H |Omega| / (Lambda |P| - H a)``.
    """
    cfg = result.config
    rep = energy_and_gradient(result.f, pair, W, cfg.Lambda, cfg.quad)
    n = result.f.n
    if mode == "homogeneous":
        k = pair.homogeneity
        if k is None:
            raise InvalidInputError("F is not homogeneous")
        value, expected = cfg.Lambda * rep.J, n + k
    elif mode == "exponential":
        a = pair.params.get("a") if a is None else a
        if a is None:
            raise InvalidInputError("exponential mode needs the rate a")
        denom = cfg.Lambda * W.P.volume - W.H * a
        if denom <= 0:
            raise IdentityUndefined(
                f"Lambda |P| - H a = {denom:.4g} <= 0; increase Lambda above {W.H * a / W.P.volume:.4g}")
        value, expected = rep.I, W.H * rep.omega_volume / denom
    else:
        raise InvalidInputError(f"unknown identity mode {mode!r}")
    return IdentityResult(mode, float(value), float(expected), abs(value - expected) / abs(expected))


# ---------------------------------------------------------------------------
# spherical geometry


def gnomonic(xi):
    """Radial projection ``s``: upper hemisphere to the tangent plane at the north pole."""
    xi = np.atleast_2d(xi)
    return xi[:, :-1] / xi[:, -1:]


def gnomonic_inverse(y):
    y = np.atleast_2d(y)
    z = np.hstack([y, np.ones((len(y), 1))])
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def rotation_to_pole(eta):
    """Rotation along the great circle carrying unit vector ``eta`` to the north pole."""
    eta = np.asarray(eta, float)
    eta = eta / np.linalg.norm(eta)
    d = len(eta)
    pole = np.zeros(d)
    pole[-1] = 1.0
    c = float(eta @ pole)
    w = pole - c * eta
    s = float(np.linalg.norm(w))
    if s < 1e-15:
        return np.eye(d)
    w /= s
    # rotate in the plane spanned by eta and w by the angle between eta and pole
    R = np.eye(d) + (c - 1) * (np.outer(eta, eta) + np.outer(w, w)) + s * (np.outer(w, eta) - np.outer(eta, w))
    return R


@dataclass
class SphericalCap:
    """Geodesic ball of angular radius ``angle`` about unit vector ``center`` in S^n (n = 1, 2)."""

    center: np.ndarray
    angle: float

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.center = self.center / np.linalg.norm(self.center)
        if len(self.center) not in (2, 3):
            raise InvalidInputError("caps are supported on S^1 and S^2")
        if not 0 < self.angle < math.pi / 2:
            raise InvalidInputError("cap angle must lie in (0, pi/2)")

    @property
    def n(self):
        return len(self.center) - 1

    @property
    def diameter(self):
        return 2 * self.angle

    def quadrature(self, m=48):
        """Points on the cap and their spherical area weights."""
        from numpy.polynomial.legendre import leggauss

        x, w = leggauss(m)
        phi = 0.5 * self.angle * (x + 1)
        wphi = 0.5 * self.angle * w
        R = rotation_to_pole(self.center).T  # pole -> center
        if self.n == 1:
            ang = np.concatenate([-phi, phi])
            wt = np.concatenate([wphi, wphi])
            pts = np.column_stack([np.sin(ang), np.cos(ang)])
        else:
            na = 2 * m
            alpha = 2 * math.pi * np.arange(na) / na
            P, A = np.meshgrid(phi, alpha, indexing="ij")
            pts = np.column_stack([(np.sin(P) * np.cos(A)).ravel(), (np.sin(P) * np.sin(A)).ravel(),
                                   np.cos(P).ravel()])
            wt = (np.sin(P) * wphi[:, None] * (2 * math.pi / na)).ravel()
        return pts @ R.T, wt


def spherical_barycenter_offset(points, weights, K, convention="density"):
    """``s`` of the weighted barycenter direction; zero iff the north pole is the barycenter.

    ``density`` weights by ``1/K`` (the translation condition of the
    Legendre problem), ``curvature`` by ``K / x_{n+1}^{2(n+2)}``.
    """
    n = points.shape[1] - 1
    Kv = K(points)
    if convention == "density":
        w = weights / Kv
    elif convention == "curvature":
        w = weights * Kv / points[:, -1] ** (2 * (n + 2))
    else:
        raise InvalidInputError(f"unknown convention {convention!r}")
    vec = (points * w[:, None]).sum(0)
    return vec[:-1] / vec[-1]


@dataclass
class Recentering:
    rotation: np.ndarray
    eta: np.ndarray
    offset: np.ndarray
    residual: float
    convention: str
    other_residual: float

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "eta": self.eta.tolist(), "offset": self.offset.tolist(),
                "residual": self.residual, "convention": self.convention, "other_residual": self.other_residual}


def spherical_recenter(cap, K, convention="density", tol=1e-10, grid=9):
    """Find the rotation ``R_eta`` (eta in the cap) after which the north pole is the weighted barycenter.

    ``K`` is a positive function of unit vectors in the original position.
    A coarse grid over the cap seeds a least-squares solve of ``b(eta) = 0``.
    """
    if cap.diameter >= math.pi / 2:
        raise HypothesisViolation(f"cap diameter {cap.diameter:.4f} must be < pi/2")
    pts, wts = cap.quadrature()
    to_pole = rotation_to_pole(cap.center)
    local = gnomonic(pts @ to_pole.T)  # cap chart centered at its center
    r_max = math.tan(cap.angle)
    other = "curvature" if convention == "density" else "density"

    def eta_of(z):
        return to_pole.T @ gnomonic_inverse(z)[0]

    def b(z, conv=convention):
        R = rotation_to_pole(eta_of(z))
        return spherical_barycenter_offset(pts @ R.T, wts, K, conv)

    n = cap.n
    axes = [np.linspace(-r_max, r_max, grid)] * n
    cand = np.column_stack([g.ravel() for g in np.meshgrid(*axes)])
    cand = cand[np.linalg.norm(cand, axis=1) < r_max]
    z0 = min(cand, key=lambda z: np.linalg.norm(b(z)))
    sol = least_squares(b, z0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    z = sol.x
    if np.linalg.norm(z) >= r_max:
        raise HypothesisViolation("barycenter rotation left the cap")
    eta = eta_of(z)
    R = rotation_to_pole(eta)
    off = b(z)
    return Recentering(R, eta, off, float(np.linalg.norm(off)), convention, float(np.linalg.norm(b(z, other))))


# ---------------------------------------------------------------------------
# hemispherical Minkowski problem


@dataclass
class MinkowskiInstance:
    """Gradient image P and curvature K (a positive function of slopes y in P)."""

    P: Polytope
    K: object
    label: str = "K"

    def density(self, Y):
        Y = np.atleast_2d(Y)
        n = Y.shape[1]
        return 1.0 / (self.K(Y) * (1 + np.sum(Y * Y, axis=1)) ** ((n + 2) / 2))

    def barycenters(self, order=4, level=3):
        """Normalized barycenters under the two weightings: density ``h`` and ``K (1+|y|^2)^((n+2)/2)``."""
        W = WeightedDomain(self.P, self.density, order=order, level=level)
        g = W.grid
        Y = g.points
        n = Y.shape[1]
        wh = g.weights * g.density
        wk = g.weights * self.K(Y) * (1 + np.sum(Y * Y, axis=1)) ** ((n + 2) / 2)
        return (Y * wh[:, None]).sum(0) / wh.sum(), (Y * wk[:, None]).sum(0) / wk.sum()


@dataclass
class MinkowskiResult:
    f: PiecewiseAffineConvex
    omega: Polytope
    scale: float
    multiplier_before: float
    curvature_error: np.ndarray
    samples: np.ndarray
    gauss_image_margin: float
    barycenters: dict
    solve: object

    @property
    def max_curvature_error(self):
        return float(np.max(self.curvature_error)) if self.curvature_error.size else math.nan

    @property
    def verified(self):
        return self.solve.converged and self.max_curvature_error <= 0.05 and self.gauss_image_margin >= -1e-9

    def surface(self, m=60):
        """Points ``(x, -u(x))`` of the graph over a grid covering the free set."""
        lo, hi = self.omega.vertices.min(0), self.omega.vertices.max(0)
        axes = [np.linspace(lo[k], hi[k], m) for k in range(self.f.n)]
        X = np.column_stack([g.ravel() for g in np.meshgrid(*axes)])
        X = X[self.omega.contains(X)]
        return np.column_stack([X, -self.f.primal(X)])

    def to_dict(self):
        return {"scale": self.scale, "multiplier_before": self.multiplier_before,
                "max_curvature_error": self.max_curvature_error, "gauss_image_margin": self.gauss_image_margin,
                "barycenters": {k: np.asarray(v).tolist() for k, v in self.barycenters.items()},
                "verified": self.verified, "omega": self.omega.to_dict(), "solve": self.solve.to_dict()}


def local_quadratic_hessian(u, x0, radius, m=17):
    """Gradient and Hessian at ``x0`` from a least-squares quadratic fit of ``u`` on a grid patch."""
    x0 = np.asarray(x0, float)
    n = len(x0)
    axes = [np.linspace(-radius, radius, m)] * n
    D = np.column_stack([g.ravel() for g in np.meshgrid(*axes)])
    D = D[np.linalg.norm(D, axis=1) <= radius * (1 + 1e-12)]
    cols = [np.ones(len(D))] + [D[:, i] for i in range(n)]
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    cols += [D[:, i] * D[:, j] * (0.5 if i == j else 1.0) for i, j in pairs]
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, u(x0 + D), rcond=None)
    grad = coef[1:n + 1]
    Hm = np.zeros((n, n))
    for c, (i, j) in zip(coef[n + 1:], pairs):
        Hm[i, j] = Hm[j, i] = c
    return grad, Hm


def minkowski_solve(inst, config=None, samples=40, ring=0.3, fit_radius=None, seed=0):
    """Hemisphere whose Gauss curvature at normal ``s^-1(y)`` is ``K(y)``.

    Solves the free boundary problem with ``f = g = 1`` and density
    ``h = 1/(K (1+|y|^2)^((n+2)/2))``, normalizes the multiplier to 1, and
    compares a fitted-Hessian curvature of the graph with K at interior
    samples (points within ``ring`` of the boundary, relative to the
    inradius, are skipped).
    """
    b_density, b_curv = inst.barycenters()
    scale = inst.P.diameter
    bary = {"density": b_density, "curvature": b_curv}
    if np.linalg.norm(b_density) > 1e-8 * scale:
        failing = "density" + (" and curvature" if np.linalg.norm(b_curv) > 1e-8 * scale else "")
        raise BarycenterError(
            f"translation criticality fails: {failing} barycenter nonzero "
            f"(density {b_density.tolist()}, curvature {b_curv.tolist()})")
    config = config or SolveConfig(Lambda=1.0, N=300)
    W = WeightedDomain(inst.P, inst.density)
    pair = StructuralPair.reconstruction(0)
    res = minimize_energy(config, pair, W)
    f, s, lam0 = normalize_multiplier(res.f, pair, W.H, config.quad)
    f, _ = recenter_free_set(f)
    omega = negative_set(f)
    n = f.n
    rng = np.random.default_rng(seed)
    inr = omega.rho_minus
    h_fit = fit_radius or 0.24 * inr
    pts = []
    lo, hi = omega.vertices.min(0), omega.vertices.max(0)
    while len(pts) < samples:
        x = rng.uniform(lo, hi)
        if omega.boundary_distance(x[None])[0] > max(ring * inr, h_fit):
            pts.append(x)
    pts = np.array(pts)
    u = f.primal
    errs = []
    margin = math.inf
    for x in pts:
        grad, Hm = local_quadratic_hessian(u, x, h_fit)
        Ks = np.linalg.det(Hm) / (1 + grad @ grad) ** ((n + 2) / 2)
        Kt = float(inst.K(grad[None])[0])
        errs.append(abs(Ks - Kt) / Kt)
        slope = f.nodes[int(np.argmax(f.nodes @ x - f.values))]
        margin = min(margin, float(inst.P.boundary_distance(slope[None])[0]))
    return MinkowskiResult(f, omega, s, lam0, np.array(errs), pts, margin, bary, res)


# ---------------------------------------------------------------------------
# cone lift


@dataclass
class ConeLift:
    """Homogeneous lift ``phi(t y', t) = (t v(y'))^(1+gamma)`` of a 1-D dual solution."""

    v: object
    P: Polytope
    alpha: float
    beta: float
    h: object
    solve: object = None
    report: dict = field(default_factory=dict)

    @property
    def gamma(self):
        n = self.P.n
        return (n + 1 + self.alpha) / (n + 1 + self.beta)

    @property
    def degree(self):
        return 1 + self.gamma

    def in_cone(self, Z):
        Z = np.atleast_2d(Z)
        return (Z[:, -1] > 0) & self.P.contains(Z[:, :-1] / np.where(Z[:, -1:] > 0, Z[:, -1:], 1.0))

    def __call__(self, Z):
        Z = np.atleast_2d(np.asarray(Z, float))
        t = Z[:, -1]
        y = Z[:, :-1] / t[:, None]
        return (t * self.v(y)) ** (1 + self.gamma)

    def rho(self, Z):
        Z = np.atleast_2d(Z)
        t = Z[:, -1]
        return t ** self.alpha * self.h(Z[:, :-1] / t[:, None])


def _fd_hessian(fun, z, eps):
    d = len(z)
    E = np.eye(d) * eps
    f0 = fun(z[None])[0]
    grad = np.array([(fun((z + E[i])[None])[0] - fun((z - E[i])[None])[0]) / (2 * eps) for i in range(d)])
    Hm = np.zeros((d, d))
    for i in range(d):
        Hm[i, i] = (fun((z + E[i])[None])[0] - 2 * f0 + fun((z - E[i])[None])[0]) / eps**2
        for j in range(i + 1, d):
            Hm[i, j] = Hm[j, i] = (fun((z + E[i] + E[j])[None])[0] - fun((z + E[i] - E[j])[None])[0]
                                   - fun((z - E[i] + E[j])[None])[0] + fun((z - E[i] - E[j])[None])[0]) / (4 * eps**2)
    return grad, Hm


def lift_residual(lift, samples=200, ring=0.2, eps=1e-3, seed=0):
    """Finite-difference check of ``phi_t^beta det D^2 phi / rho^alpha = const``.

    Samples lie in the cone over the part of P at distance > ``ring`` (times
    the inradius) from the boundary, with height in [0.5, 2]. Returns the
    fitted constant, per-sample relative deviations and the smallest
    ``phi_t`` (positive means the gradient lands in the upper half space).
    """
    rng = np.random.default_rng(seed)
    P = lift.P
    inr = P.rho_minus
    lo, hi = P.vertices.min(0), P.vertices.max(0)
    Z = []
    while len(Z) < samples:
        y = rng.uniform(lo, hi)
        if P.boundary_distance(y[None])[0] > ring * inr:
            t = rng.uniform(0.5, 2.0)
            Z.append(np.append(t * y, t))
    Z = np.array(Z)
    q, top = [], math.inf
    for z in Z:
        grad, Hm = _fd_hessian(lift, z, eps)
        top = min(top, grad[-1])
        q.append(grad[-1] ** lift.beta * np.linalg.det(Hm) / lift.rho(z[None])[0])
    q = np.array(q)
    const = float(np.median(q))
    dev = np.abs(q / const - 1)
    return const, dev, top, Z


def ot_cone_lift(P, alpha, beta, config=None, samples=200, seed=0):
    """Solve the dual equation for the transport pair and lift it to the cone over P.

    Requires ``beta > alpha >= 0``. Only n = 1 is supported for the residual
    check, where v is smoothed by a cubic spline through the node values.
    """
    if not (beta > alpha >= 0):
        raise HypothesisViolation(f"need beta > alpha >= 0 (got alpha={alpha}, beta={beta})")
    if P.n != 1:
        raise InvalidInputError("the cone lift is implemented for n = 1")
    config = config or SolveConfig(Lambda=1.0, N=81, grad_tol=1e-8)
    W = WeightedDomain.distance_power(P, alpha) if alpha > 0 else WeightedDomain(P)
    pair = StructuralPair.transport(P.n, alpha, beta)
    res = minimize_energy(config, pair, W)
    y = res.f.nodes[:, 0]
    order = np.argsort(y)
    spline = CubicSpline(y[order], res.f.node_envelope_values()[order])

    def v(Y):
        return spline(np.atleast_2d(Y)[:, 0])

    h = W.h if alpha > 0 else (lambda Y: np.ones(len(np.atleast_2d(Y))))
    lift = ConeLift(v, P, alpha, beta, h, res)
    const, dev, top, Z = lift_residual(lift, samples=samples, seed=seed)
    rng = np.random.default_rng(seed + 1)
    homog = 0.0
    for t in (0.5, 2.0, 3.0):
        z = Z[rng.integers(len(Z))]
        homog = max(homog, abs(lift(t * z)[0] - t ** lift.degree * lift(z)[0]) / abs(lift(z)[0]))
    lift.report = {"gamma": lift.gamma, "degree": lift.degree, "constant": const,
                   "fraction_within_5pct": float(np.mean(dev <= 0.05)), "max_deviation": float(dev.max()),
                   "min_phi_t": top, "homogeneity_error": homog, "status": res.status}
    return lift


def lift_to_csv(lift, path, m=40):
    """Samples ``(z1, z2, phi)`` on the cone over P with height in (0, 1]."""
    P = lift.P
    lo, hi = P.vertices[:, 0].min(), P.vertices[:, 0].max()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z1", "z2", "phi"])
        for t in np.linspace(1.0 / m, 1.0, m):
            for y in np.linspace(lo, hi, m)[1:-1]:
                z = np.array([t * y, t])
                w.writerow([repr(float(z[0])), repr(float(z[1])), repr(float(lift(z)[0]))])

"""Normalizations of a dual function: translation criticality, boundary contact, target matching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convex_core import (
    _cell_polytopes,
    john_ellipsoid,
    negative_set,
    primal_bounding_box,
    support_function,
)
from .exceptions import EmptyFreeBoundaryError, NormalizationFailure, ReplacementInvalid, TargetUnreachable
from .functionals import DEFAULT_QUAD, _facet_samples, functional_I, functional_J


@dataclass
class NormalizationResult:
    """Outcome of a translation normalization.

    ``residual`` is ``|int g(v) y h dy| / H`` after the shift, ``path`` the
    values of ``G(J)`` at accepted ascent steps.
    """

    x_star: np.ndarray
    t: float
    pre: float
    post: float
    residual: float
    relative_residual: float
    iterations: int
    path: list = field(default_factory=list)
    mode: str = "ascent"

    def to_dict(self):
        return {"x_star": np.asarray(self.x_star).tolist(), "t": self.t, "pre": self.pre, "post": self.post,
                "residual": self.residual, "relative_residual": self.relative_residual,
                "iterations": self.iterations, "mode": self.mode}


def _dg(pair, s):
    eps = 1e-5
    return (pair.g(s * (1 + eps)) - pair.g(s * (1 - eps))) / (2 * eps * s)


def translation_residual(f, pair, W, quad_opts=DEFAULT_QUAD):
    """``(|int g(v) y h dy| / H, same divided by the g-mass times diam P)``."""
    samp = _facet_samples(f, W, quad_opts)
    vq = np.einsum("kj,kj->k", samp.bary, f.values[samp.vertex])
    H = math.fsum(samp.weights)
    gw = pair.g(vq) * samp.weights
    vec = np.array([math.fsum(gw * samp.points[:, k]) for k in range(f.n)])
    r = float(np.linalg.norm(vec))
    return r / H, r / (math.fsum(gw) * W.P.diameter)


def normalize_translation(f, pair, W, tol=1e-10, max_iter=100, quad_opts=DEFAULT_QUAD):
    """Shift ``v -> v - <x*, .>`` so that ``int g(v) y h dy = 0``.

    For constant g the condition does not involve x; the shift then puts the
    free set in John position (and a nonzero h-barycenter is an error).
    Otherwise ``x -> G(J(v - <x, .>))`` is concave and is maximized by damped
    Newton ascent, which keeps ``x`` inside the free set.
    """
    samp = _facet_samples(f, W, quad_opts)
    vq = np.einsum("kj,kj->k", samp.bary, f.values[samp.vertex])
    Y, w = samp.points, samp.weights
    H = math.fsum(w)
    n = f.n

    if pair.g_constant:
        bary = np.array([math.fsum(w * Y[:, k]) for k in range(n)]) / H
        if np.linalg.norm(bary) > 1e-8 * W.P.diameter:
            raise NormalizationFailure(
                "density barycenter of P is not at the origin; no translation-critical function exists")
        omega = negative_set(f)
        x_star = john_ellipsoid(omega).center
        out = f.tilted(x_star)
        res, rel = translation_residual(out, pair, W, quad_opts)
        J = functional_J(f, pair, W, quad_opts)
        return out, NormalizationResult(x_star, 0.0, J, J, res, rel, 0, [], "john")

    def phi(x):
        s = vq - Y @ x
        if np.any(s <= 0) and pair.singular_at_zero:
            return -math.inf, s
        with np.errstate(divide="ignore", invalid="ignore"):
            Gs = pair.G(s)
        if not np.all(np.isfinite(Gs)):
            return -math.inf, s
        return math.fsum(w * Gs) / H, s

    x = np.zeros(n)
    val, s = phi(x)
    if not np.isfinite(val):
        raise NormalizationFailure("starting function is not positive on P")
    pre = val
    path = [val]
    scale = W.P.diameter
    it = 0
    rel = math.inf
    def gradient(s):
        gs = pair.g(s) * w
        grad = -np.array([math.fsum(gs * Y[:, k]) for k in range(n)]) / H
        return gs, grad, float(np.linalg.norm(grad)) * H / (math.fsum(gs) * scale)

    for it in range(1, max_iter + 1):
        gs, grad, rel = gradient(s)
        if rel <= tol:
            break
        hs = _dg(pair, s) * w
        Hess = (Y * hs[:, None]).T @ Y / H
        try:
            step = -np.linalg.solve(Hess, grad)
            if grad @ step <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = grad * (1.0 / max(np.linalg.norm(grad), 1e-300)) * 1e-2 * scale
        alpha = 1.0
        while alpha > 1e-14:
            cand, s_c = phi(x + alpha * step)
            if np.isfinite(cand) and cand >= val + 1e-4 * alpha * (grad @ step):
                break
            alpha *= 0.5
        else:
            # G(J) is flat to roundoff here; take the full step if it shrinks the gradient
            cand, s_c = phi(x + step)
            if not np.isfinite(cand) or gradient(s_c)[2] >= rel:
                break
            alpha = 1.0
        x = x + alpha * step
        val, s = cand, s_c
        path.append(val)
    margin = float(np.min(s)) / max(float(np.max(np.abs(vq))), 1e-300)
    if rel > max(tol, 1e-6) or margin < 1e-10:
        raise NormalizationFailure(
            f"translation maximizer not found in the interior (residual {rel:.2e}, margin {margin:.2e})")
    out = f.tilted(x)
    res, rel = translation_residual(out, pair, W, quad_opts)
    return out, NormalizationResult(x, 0.0, float(pair.G_inv(pre)), float(pair.G_inv(val)), res, rel, it, path)


def conjugate_on_free_set(f):
    """Intercepts of the conjugate of u restricted to the closure of {u < 0}.

    The restricted conjugate at ``p_i`` is ``max_x (<p_i, x> - u(x))`` over the
    closed free set; the maximum of this concave piecewise-affine function is
    attained at a vertex of some clipped cell.
    """
    lo, hi = primal_bounding_box(f)
    cells = _cell_polytopes(f, lo, hi, clip_negative=True)
    verts = np.vstack([c for c in cells if len(c)])
    u = f.primal(verts)
    vals = np.max(f.nodes @ verts.T - u[None, :], axis=1)
    return np.minimum(vals, f.values), cells


def boundary_contact_replacement(f, pair=None, W=None, tol=1e-9, quad_opts=DEFAULT_QUAD):
    """Replace v by the conjugate of u restricted to the closed free set.

    The primal function is unchanged on the free set, so I and the free set
    are preserved while J can only decrease. With ``pair`` and ``W`` given,
    these facts are checked numerically.
    """
    new_vals, _ = conjugate_on_free_set(f)
    out = f.with_values(new_vals)
    omega = negative_set(f)
    # the new envelope dominates the support function of the free set
    env = out.envelope()
    probe = np.vstack([out.nodes, np.einsum("mkn->mn", out.nodes[env.simplices]) / (out.n + 1)])
    supp = support_function(omega, probe)
    scale = 1.0 + float(np.max(np.abs(f.values)))
    if np.any(out.dual(probe) < supp - tol * scale):
        raise ReplacementInvalid("replacement falls below the support function of the free set")
    if pair is not None and W is not None:
        I0, I1 = functional_I(f, pair, quad_opts), functional_I(out, pair, quad_opts)
        if abs(I1 - I0) > 1e-8 * abs(I0):
            raise ReplacementInvalid(f"I changed under replacement ({I0} -> {I1})")
        J0, J1 = functional_J(f, pair, W, quad_opts), functional_J(out, pair, W, quad_opts)
        if J1 > J0 + tol * scale:
            raise ReplacementInvalid(f"J increased under replacement ({J0} -> {J1})")
    on_bd = np.abs(W.P.boundary_distance(out.nodes)) <= 1e-12 if W is not None else None
    if on_bd is not None and on_bd.any():
        gap = np.abs(out.values[on_bd] - support_function(omega, out.nodes[on_bd]))
        if np.max(gap) > 1e-8 * scale:
            raise ReplacementInvalid("replacement differs from the support function on the boundary of P")
    return out


def _bisect(fun, lo, hi, target, rtol, max_iter=200):
    mid = fm = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if abs(fm - target) <= rtol * abs(target):
            return mid, fm
        if fm < target:
            lo, flo = mid, fm
        else:
            hi = mid
    return mid, fm


def affine_replacement(f, target, value, pair, W, rtol=1e-10, t_max=1e6, quad_opts=DEFAULT_QUAD):
    """Find ``v + t - <x_t, .>`` whose J (``target="J"``) or I (``target="I"``) equals ``value``.

    Returns ``(new function, t, x_t)``. For J the translation is renormalized
    at every trial shift; for I a plain shift suffices.
    """
    if value <= 0:
        raise TargetUnreachable("target value must be positive")
    n = f.n
    floor = -float(np.min(f.node_envelope_values()))
    if target == "J":
        if pair.g_constant:
            t = value - functional_J(f, pair, W, quad_opts)
            if f.values.min() + t <= 0:
                raise TargetUnreachable("shift would make v non-positive")
            return f.shifted(t), t, np.zeros(n)

        def J_of(t):
            g, _ = normalize_translation(f.shifted(t), pair, W, quad_opts=quad_opts)
            return functional_J(g, pair, W, quad_opts)

        fun = J_of
    elif target == "I":
        def I_of(t):
            return functional_I(f.shifted(t), pair, quad_opts)

        fun = I_of
    else:
        raise ValueError(f"unknown target {target!r}")
    raw = fun

    def fun(t):
        try:
            return raw(t)
        except (NormalizationFailure, EmptyFreeBoundaryError):
            return -math.inf

    lo = floor + 1e-9 * (1 + abs(floor))
    hi = lo + 1.0
    if fun(lo) > value:
        raise TargetUnreachable("target below the reachable range")
    while fun(hi) < value:
        hi = lo + 2 * (hi - lo)
        if hi - lo > t_max:
            raise TargetUnreachable("no bracket for the target within the shift range")
    t, _ = _bisect(fun, lo, hi, value, rtol)
    g = f.shifted(t)
    x_t = np.zeros(n)
    if target == "J":
        g, res = normalize_translation(g, pair, W, quad_opts=quad_opts)
        x_t = res.x_star
    return g, t, x_t

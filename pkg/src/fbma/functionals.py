"""The energy -log I + Lambda J, its gradient in the intercepts, and the lower-bound landscape."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.integrate import quad

from .convex_core import (
    DivergentIntegral,
    _cell_polytopes,
    _cell_simplices,
    integrate_until_divergence,
    primal_bounding_box,
    simplex_rule,
)
from .exceptions import EmptyFreeBoundaryError, InvalidInputError


class DivergentJ(float):
    """J whose G-average diverged to -inf; the float value is ``G^-1(-inf)``."""

    def __new__(cls, value, level=0):
        obj = super().__new__(cls, value)
        obj.level = level
        obj.divergent = True
        return obj

    def __repr__(self):
        return f"DivergentJ({float(self)}, level={self.level})"


@dataclass(frozen=True)
class QuadratureOptions:
    """Simplex-rule order, uniform refinement level, and extra levels on boundary facets."""

    order: int = 4
    level: int = 0
    boundary_level: int = 0

    def to_dict(self):
        return {"order": self.order, "level": self.level, "boundary_level": self.boundary_level}


DEFAULT_QUAD = QuadratureOptions()


# ---------------------------------------------------------------------------
# quadrature over the envelope subdivision (integrals over P)


@dataclass
class _FacetSamples:
    points: np.ndarray      # (K, n)
    weights: np.ndarray     # (K,) volume * rule weight * h
    vertex: np.ndarray      # (K, n+1) node indices of the owning facet
    bary: np.ndarray        # (K, n+1)


def _facet_samples(f, W, quad_opts):
    env = f.envelope()
    S = env.simplices
    n = f.n
    groups = [(np.ones(len(S), dtype=bool), quad_opts.level)]
    if quad_opts.boundary_level > 0:
        on_bd = np.abs(W.P.boundary_distance(f.nodes)) <= 1e-9
        touch = on_bd[S].any(axis=1)
        groups = [(~touch, quad_opts.level), (touch, quad_opts.level + quad_opts.boundary_level)]
    pts, wts, vert, bar = [], [], [], []
    for mask, level in groups:
        if not mask.any():
            continue
        bary, w = simplex_rule(n, quad_opts.order, level)
        V = f.nodes[S[mask]]
        P = np.einsum("qk,mkn->mqn", bary, V).reshape(-1, n)
        pts.append(P)
        wts.append((env.volumes[mask][:, None] * w[None, :]).ravel())
        vert.append(np.repeat(S[mask], len(w), axis=0))
        bar.append(np.tile(bary, (int(mask.sum()), 1)))
    points = np.vstack(pts)
    weights = np.concatenate(wts) * W.h(points)
    return _FacetSamples(points, weights, np.vstack(vert), np.vstack(bar))


def _J_parts(f, pair, W, quad_opts):
    samp = _facet_samples(f, W, quad_opts)
    vq = np.einsum("kj,kj->k", samp.bary, f.values[samp.vertex])
    H = math.fsum(samp.weights)
    with np.errstate(divide="ignore", invalid="ignore"):
        Gv = pair.G(vq)
    if np.any(np.isnan(Gv)) or np.any(np.isneginf(Gv)) or (np.any(vq <= 0) and pair.singular_at_zero):
        return samp, vq, H, DivergentIntegral(quad_opts.level)
    if pair.singular_at_zero:
        env = f.node_envelope_values()
        if env.min() <= 0:
            # v touches zero at a node: refine towards it until G(v) crosses the floor
            focus = f.nodes[int(np.argmin(env))]

            def integrand(Y):
                with np.errstate(divide="ignore", invalid="ignore"):
                    return pair.G(np.maximum(f.dual(Y), 0.0))

            val, _ = integrate_until_divergence(W.P, integrand, focus, W.h, max_level=40)
            if isinstance(val, DivergentIntegral):
                return samp, vq, H, val
    mean = math.fsum(samp.weights * Gv) / H
    return samp, vq, H, mean


def functional_J(f, pair, W, quad_opts=DEFAULT_QUAD):
    """``G^-1((1/H) int_P G(v) h dy)`` for the envelope v of ``f``.

    Returns a :class:`DivergentJ` when the average diverges (v reaching 0
    with singular G).
    """
    _, _, _, mean = _J_parts(f, pair, W, quad_opts)
    if mean == -math.inf:
        return DivergentJ(float(pair.G_inv(-math.inf)), getattr(mean, "level", quad_opts.level))
    return float(pair.G_inv(mean))


# ---------------------------------------------------------------------------
# quadrature over the cells of u inside {u < 0}


def _I_parts(f, pair, quad_opts):
    """Return (I, per-node int f(-u) over V_i cap Omega, |Omega|)."""
    n = f.n
    lo, hi = primal_bounding_box(f)
    cells = _cell_polytopes(f, lo, hi, clip_negative=True)
    simp, owner = _cell_simplices(cells, n)
    N = f.N
    if len(simp) == 0:
        raise EmptyFreeBoundaryError("u >= 0 everywhere")
    bary, w = simplex_rule(n, quad_opts.order, quad_opts.level)
    pts = np.einsum("qk,skn->sqn", bary, simp)
    vol = np.abs(np.linalg.det(simp[:, 1:] - simp[:, :1])) / math.factorial(n)
    keep = vol > 0
    pts, vol, owner = pts[keep], vol[keep], owner[keep]
    # u is affine on each cell: u = <p_i, x> - c_i
    negu = f.values[owner][:, None] - np.einsum("sqn,sn->sq", pts, f.nodes[owner])
    negu = np.maximum(negu, 0.0)
    wq = vol[:, None] * w[None, :]
    Fvals = wq * pair.F(negu)
    fvals = wq * pair.f(negu)
    I = math.fsum(Fvals.ravel())
    if I <= 0:
        raise EmptyFreeBoundaryError("u >= 0 everywhere")
    per_F = np.bincount(owner, weights=Fvals.sum(1), minlength=N)
    per_f = np.bincount(owner, weights=fvals.sum(1), minlength=N)
    omega_vol = math.fsum(vol)
    return I, per_f, per_F, omega_vol


def functional_I(f, pair, quad_opts=DEFAULT_QUAD):
    """``int_{u<0} F(-u) dx`` for ``u = max_i(<p_i, x> - c_i)``."""
    return _I_parts(f, pair, quad_opts)[0]


# ---------------------------------------------------------------------------
# energy


@dataclass
class EnergyReport:
    """Energy, its pieces and gradient at one intercept vector."""

    I: float
    J: float
    E: float
    Lambda: float
    lam: float
    H: float
    gradient: np.ndarray | None
    mu: np.ndarray | None = None
    nu: np.ndarray | None = None
    omega_volume: float = math.nan
    quadrature: dict = field(default_factory=dict)
    divergent: bool = False
    weights: tuple = (math.nan, math.nan)

    @property
    def scaled_grad_norm(self):
        """L1 gradient over the mean of its two masses; equals ``el_residual`` when these agree."""
        if self.gradient is None:
            return math.inf
        return float(np.sum(np.abs(self.gradient))) / (0.5 * (self.weights[0] + self.weights[1]))

    @property
    def grad_norm(self):
        return math.inf if self.gradient is None else float(np.linalg.norm(self.gradient))

    @property
    def mass_balance(self):
        """Per-node residuals mu_i - nu_i."""
        return None if self.mu is None else self.mu - self.nu

    @property
    def el_residual(self):
        return math.inf if self.mu is None else math.fsum(np.abs(self.mu - self.nu))

    def to_dict(self):
        return {"I": self.I, "J": self.J, "E": self.E, "Lambda": self.Lambda, "lambda": self.lam,
                "H": self.H, "grad_norm": self.grad_norm, "el_residual": self.el_residual,
                "omega_volume": self.omega_volume, "divergent": self.divergent,
                "quadrature": self.quadrature}


def energy_and_gradient(f, pair, W, Lambda, quad_opts=DEFAULT_QUAD, with_gradient=True):
    """Evaluate ``E = -log I + Lambda J`` and its derivative in each intercept.

    Raising ``c_i`` lowers u on the cell of node i, so the first piece has
    derivative ``-(1/I) int_{V_i cap Omega} f(-u)``; the second is
    ``Lambda/(g(J) H) int_P g(v) phi_i h`` with ``phi_i`` the envelope hat
    function of node i.
    """
    I, per_f, _, omega_vol = _I_parts(f, pair, quad_opts)
    samp, vq, H, mean = _J_parts(f, pair, W, quad_opts)
    meta = quad_opts.to_dict()
    if mean == -math.inf:
        J = DivergentJ(float(pair.G_inv(-math.inf)), getattr(mean, "level", quad_opts.level))
        return EnergyReport(I, J, math.inf, Lambda, math.nan, H, None, None, None, omega_vol, meta, True)
    J = float(pair.G_inv(mean))
    E = -math.log(I) + Lambda * J
    gJ = float(pair.g(J))
    lam = gJ * H / (Lambda * I) if Lambda > 0 else math.inf
    if not with_gradient:
        return EnergyReport(I, J, E, Lambda, lam, H, None, None, None, omega_vol, meta)
    gv = pair.g(vq) * samp.weights
    contrib = (gv[:, None] * samp.bary).ravel()
    nu_raw = np.bincount(samp.vertex.ravel(), weights=contrib, minlength=f.N)
    total_f = math.fsum(per_f)
    grad = -per_f / I + Lambda * nu_raw / (gJ * H)
    mu = per_f / total_f
    nu = nu_raw / math.fsum(nu_raw)
    weights = (total_f / I, Lambda * math.fsum(nu_raw) / (gJ * H))
    return EnergyReport(I, J, E, Lambda, lam, H, grad, mu, nu, omega_vol, meta, False, weights)


def lambda_of(report, W=None):
    """``g(J) H / (Lambda I)``; the mass is taken from the report (same quadrature as J)."""
    return report.lam if np.isfinite(report.lam) else math.nan


def energy(f, pair, W, Lambda, quad_opts=DEFAULT_QUAD):
    """Energy value only (``+inf`` when J diverges)."""
    return energy_and_gradient(f, pair, W, Lambda, quad_opts, with_gradient=False).E


# ---------------------------------------------------------------------------
# lower-bound landscape


@dataclass(frozen=True)
class LandscapeParams:
    """Inputs of the landscape; ``C`` stands in for the unknown universal constant."""

    n: int
    nu: float
    Lambda: float = 1.0
    rho_minus: float = 1.0
    rho_plus: float = 1.0
    C: float = 1.0
    case: str = "auto"
    window: float = 1.0

    @property
    def eps2(self):
        e = self.rho_minus / (2 * self.n ** 1.5 * self.rho_plus)
        if not 0 < e < 1:
            raise InvalidInputError("eps2 must lie in (0, 1)")
        return e

    def to_dict(self):
        return {"n": self.n, "nu": self.nu, "Lambda": self.Lambda, "rho_minus": self.rho_minus,
                "rho_plus": self.rho_plus, "C": self.C, "case": self.case, "window": self.window}


@dataclass
class Landscape:
    x: np.ndarray
    D: np.ndarray
    values: np.ndarray  # shape (len(x), len(D)); nan where masked
    params: LandscapeParams

    def components(self, level):
        """Connected components of ``{values <= level}`` (4-neighbour).

        Returns a list of ``"bounded"`` / ``"boundary"`` labels, one per
        component; boundary means touching the outer edge of the grid.
        """
        S = np.nan_to_num(self.values, nan=np.inf) <= level
        lab, k = ndimage.label(S)
        edge = set(np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))) - {0}
        return ["boundary" if j in edge else "bounded" for j in range(1, k + 1)]

    def scan(self, levels):
        return [(float(A), self.components(A)) for A in levels]

    def find_two_component_level(self, count=400):
        """First scanned level with exactly one bounded and one boundary component."""
        finite = self.values[np.isfinite(self.values)]
        for A in np.unique(np.quantile(finite, np.linspace(0, 1, count))):
            comps = self.components(A)
            if sorted(comps) == ["boundary", "bounded"]:
                return float(A)
        return None

    def to_csv(self, path):
        X, Dm = np.meshgrid(self.x, self.D, indexing="ij")
        np.savetxt(path, np.column_stack([X.ravel(), Dm.ravel(), self.values.ravel()]),
                   delimiter=",", header="x,D,Ehat", comments="", fmt="%.17g")


def _tail_integral(pair, n, lower):
    val, _ = quad(lambda t: float(pair.G(math.exp(t))) * math.exp(n * t), math.log(lower), math.log(1e12),
                  limit=200)
    return val


def ehat_landscape(params, pair, x, D):
    """Lower-bound energy ``-log(F(x) x^{n-1} D) + Lambda G^-1(bracket)`` on an (x, D) grid.

    ``x`` stands for inf v and ``D`` for the largest John semi-axis; the
    bracket is the case-wise lower bound for ``G(J)`` with ``|Omega|``
    replaced by ``x^{n-1} D``. Cells with ``x > window * D`` or a bracket
    outside the range of G are masked.
    """
    x = np.asarray(x, dtype=float)
    D = np.asarray(D, dtype=float)
    X, Dm = np.meshgrid(x, D, indexing="ij")
    n, nu, C, e2 = params.n, params.nu, params.C, params.eps2
    vol = X ** (n - 1) * Dm
    case = params.case
    if case == "auto":
        case = "H2" if abs(float(pair.G(1.0))) < 1e-12 and float(pair.G(1e8)) > 0 else "H3"
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if case == "H2":
            far = np.maximum(0.0, pair.G(n * params.rho_plus * e2 * Dm)) / C
            small_pen = X ** (-nu) if nu > 0 else np.abs(np.log(X)) + 1
            b_small = C * pair.G(e2 * X) * X ** n / vol - C / vol * small_pen + far
            b_large = pair.G(e2 * X) * X ** n / (C * vol) + far
            bracket = np.where(e2 * X <= 1, b_small, b_large)
        elif case == "H3":
            tail1 = _tail_integral(pair, n, 1.0)
            small_pen = X ** (-nu) if nu > 0 else np.abs(np.log(X)) + 1
            b_small = C * pair.G(X) * X ** n / vol - C / vol * small_pen + C / Dm * tail1
            tails = np.array([_tail_integral(pair, n, n ** -1.5 * xi) for xi in x])[:, None]
            b_large = C * pair.G(X) * X ** n / vol + C / (Dm * X ** (n - 1)) * tails
            bracket = np.where(X <= 1, b_small, b_large)
        else:
            raise InvalidInputError(f"unknown landscape case {case!r}")
        J = pair.G_inv(bracket)
        vals = -np.log(pair.F(X) * vol) + params.Lambda * J
    vals = np.where((X <= params.window * Dm) & np.isfinite(vals), vals, np.nan)
    return Landscape(x, D, vals, params)

"""Convex geometry kernel.

Polytopes and ellipsoids, convex functions stored dually as slope nodes with
intercepts, their lower envelopes and activity cells, and simplex quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, Delaunay, HalfspaceIntersection, QhullError
from scipy.special import roots_jacobi, roots_legendre

from .exceptions import (
    DegenerateDensityError,
    DomainError,
    EmptyFreeBoundaryError,
    InvalidInputError,
)

MERGE_TOL = 1e-12


# ---------------------------------------------------------------------------
# quadrature rules on the reference simplex


def _conical_rule(n, q):
    if n == 1:
        t, w = roots_legendre(q)
        return ((t + 1.0) / 2.0)[:, None], w / 2.0
    t, w = roots_jacobi(q, n - 1, 0)
    u = (t + 1.0) / 2.0
    wu = w / 2.0**n
    sub_x, sub_w = _conical_rule(n - 1, q)
    pts = np.empty((q * len(sub_w), n))
    wts = np.empty(q * len(sub_w))
    k = 0
    for ui, wi in zip(u, wu):
        m = len(sub_w)
        pts[k:k + m, 0] = ui
        pts[k:k + m, 1:] = (1.0 - ui) * sub_x
        wts[k:k + m] = wi * sub_w
        k += m
    return pts, wts


def _split_simplex(verts):
    n = verts.shape[1]
    if n == 1:
        a, b = verts
        m = (a + b) / 2
        return [np.array([a, m]), np.array([m, b])]
    if n == 2:
        v0, v1, v2 = verts
        m01, m12, m02 = (v0 + v1) / 2, (v1 + v2) / 2, (v0 + v2) / 2
        return [np.array(s) for s in (
            (v0, m01, m02), (m01, v1, m12), (m02, m12, v2), (m01, m12, m02))]
    if n == 3:
        x0, x1, x2, x3 = verts
        m = {(i, j): (verts[i] + verts[j]) / 2 for i in range(4) for j in range(i + 1, 4)}
        return [np.array(s) for s in (
            (x0, m[0, 1], m[0, 2], m[0, 3]),
            (m[0, 1], x1, m[1, 2], m[1, 3]),
            (m[0, 2], m[1, 2], x2, m[2, 3]),
            (m[0, 3], m[1, 3], m[2, 3], x3),
            (m[0, 1], m[0, 2], m[0, 3], m[1, 3]),
            (m[0, 1], m[0, 2], m[1, 2], m[1, 3]),
            (m[0, 2], m[0, 3], m[1, 3], m[2, 3]),
            (m[0, 2], m[1, 2], m[1, 3], m[2, 3]),
        )]
    raise InvalidInputError("simplex subdivision implemented for n <= 3")


def _simplex_volume(verts):
    n = verts.shape[1]
    return abs(np.linalg.det(verts[1:] - verts[0])) / math.factorial(n)


@lru_cache(maxsize=None)
def simplex_rule(n, order=4, level=0):
    """Composite collapsed Gauss rule on the reference n-simplex.

    Returns barycentric coordinates ``(Q, n+1)`` and weights summing to one.
    ``order`` Gauss points per collapsed direction give exactness for
    polynomials of degree ``2*order - 1``; ``level`` uniform subdivisions
    give a composite rule used for refinement studies.
    """
    pts, wts = _conical_rule(n, order)
    ref = np.vstack([np.zeros(n), np.eye(n)])
    pieces = [ref]
    for _ in range(level):
        pieces = [child for s in pieces for child in _split_simplex(s)]
    ref_vol = _simplex_volume(ref)
    all_x, all_w = [], []
    for s in pieces:
        bary = np.column_stack([1.0 - pts.sum(1), pts])
        all_x.append(bary @ s)
        all_w.append(wts * (_simplex_volume(s) / ref_vol) * math.factorial(n))
    x = np.vstack(all_x)
    w = np.concatenate(all_w)
    w = w / w.sum()
    bary = np.column_stack([1.0 - x.sum(1), x])
    bary.setflags(write=False)
    w.setflags(write=False)
    return bary, w


def _radial_graded_rule(n, order, level):
    """Rule on a simplex collapsed at vertex 0, geometrically graded towards it.

    Returns barycentric points and weights summing to one.
    """
    t, w = roots_legendre(order)
    r_nodes, r_wts = [], []
    edges = [0.0] + [2.0 ** (-k) for k in range(level, -1, -1)]
    for a, b in zip(edges[:-1], edges[1:]):
        r = a + (b - a) * (t + 1) / 2
        r_nodes.append(r)
        r_wts.append(w * (b - a) / 2 * n * r ** (n - 1))
    r = np.concatenate(r_nodes)
    rw = np.concatenate(r_wts)
    if n == 1:
        face = np.ones((1, 1))
        fw = np.ones(1)
    else:
        fb, fw = simplex_rule(n - 1, order)
        face = fb
    bary = np.zeros((len(r) * len(fw), n + 1))
    wts = np.zeros(len(r) * len(fw))
    k = 0
    for ri, wi in zip(r, rw):
        m = len(fw)
        bary[k:k + m, 0] = 1.0 - ri
        bary[k:k + m, 1:] = ri * face
        wts[k:k + m] = wi * fw
        k += m
    return bary, wts


class DivergentIntegral(float):
    """Sentinel value ``-inf`` carrying the refinement level where a floor was crossed."""

    def __new__(cls, level):
        obj = super().__new__(cls, float("-inf"))
        obj.level = level
        return obj

    def __repr__(self):
        return f"DivergentIntegral(level={self.level})"


# ---------------------------------------------------------------------------
# polytopes and ellipsoids


def _dedup_rows(a, tol=1e-10):
    if len(a) == 0:
        return a
    keep = [0]
    for i in range(1, len(a)):
        if np.min(np.abs(a[keep] - a[i]).max(axis=1)) > tol:
            keep.append(i)
    return a[keep]


class Polytope:
    """Bounded convex polytope given by its vertices.

    Parameters
    ----------
    vertices : array_like of shape (m, n)
        Points whose convex hull is the polytope. Redundant points are dropped.
    rho_minus, rho_plus : float, optional
        Cached inner and outer radii about the origin.
    """

    def __init__(self, vertices, rho_minus=None, rho_plus=None):
        V = np.asarray(vertices, dtype=float)
        if V.size == 0:
            raise InvalidInputError("empty vertex list")
        if V.ndim == 1:
            V = V[:, None]
        n = V.shape[1]
        if n == 1:
            lo, hi = float(V.min()), float(V.max())
            if hi - lo <= MERGE_TOL:
                raise InvalidInputError("degenerate interval")
            self.vertices = np.array([[lo], [hi]])
            self.A = np.array([[-1.0], [1.0]])
            self.b = np.array([-lo, hi])
            self._volume = hi - lo
        else:
            try:
                hull = ConvexHull(V)
            except QhullError as exc:
                raise InvalidInputError("vertices do not affinely span R^n") from exc
            self.vertices = V[hull.vertices]
            eq = _dedup_rows(hull.equations)
            self.A = eq[:, :n]
            self.b = -eq[:, n]
            self._volume = float(hull.volume)
        self.vertices.setflags(write=False)
        self.n = n
        self._rho_minus = rho_minus
        self._rho_plus = rho_plus
        self._simplices = None

    # constructors ---------------------------------------------------------
    @classmethod
    def interval(cls, lo, hi):
        return cls(np.array([[lo], [hi]], dtype=float))

    @classmethod
    def box(cls, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        n = len(lo)
        corners = np.array(np.meshgrid(*[[lo[i], hi[i]] for i in range(n)], indexing="ij"))
        return cls(corners.reshape(n, -1).T)

    @classmethod
    def regular_polygon(cls, m, radius=1.0, phase=0.0):
        t = phase + 2 * np.pi * np.arange(m) / m
        return cls(radius * np.column_stack([np.cos(t), np.sin(t)]))

    @classmethod
    def ball(cls, n, radius=1.0, resolution=64):
        """Polyhedral approximation of the ball inscribed in the round ball."""
        if n == 1:
            return cls.interval(-radius, radius)
        if n == 2:
            return cls.regular_polygon(resolution, radius)
        k = np.arange(resolution) + 0.5
        phi = np.arccos(1 - 2 * k / resolution)
        theta = np.pi * (1 + 5 ** 0.5) * k
        pts = np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
        return cls(radius * pts)

    @classmethod
    def from_halfspaces(cls, A, b, interior=None):
        """Polytope ``{x : A x <= b}`` (must be bounded and full-dimensional)."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        n = A.shape[1]
        if n == 1:
            a = A[:, 0]
            with np.errstate(divide="ignore"):
                ratio = b / a
            if np.any((a == 0) & (b < 0)):
                raise DomainError("empty halfspace intersection")
            hi = np.min(ratio[a > 0]) if np.any(a > 0) else np.inf
            lo = np.max(ratio[a < 0]) if np.any(a < 0) else -np.inf
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi - lo <= MERGE_TOL:
                raise DomainError("unbounded or empty halfspace intersection")
            return cls.interval(lo, hi)
        if interior is None:
            interior, radius = chebyshev_center(A, b)
            if radius <= MERGE_TOL:
                raise DomainError("halfspace intersection has empty interior")
        interior = np.asarray(interior, dtype=float)
        try:
            hs = HalfspaceIntersection(np.column_stack([A, -b]), interior)
        except QhullError as exc:
            raise DomainError("halfspace intersection failed") from exc
        pts = hs.intersections
        pts = pts[np.all(np.isfinite(pts), axis=1)]
        return cls(_dedup_rows(pts, 1e-12))

    # basic geometry -------------------------------------------------------
    @property
    def volume(self):
        return self._volume

    def simplices(self):
        """Triangulation of the polytope as an array ``(k, n+1, n)``."""
        if self._simplices is None:
            if self.n == 1:
                self._simplices = self.vertices[None, :, :].copy()
            else:
                tri = Delaunay(self.vertices)
                s = self.vertices[tri.simplices]
                vol = np.array([_simplex_volume(x) for x in s])
                self._simplices = s[vol > 1e-14 * self._volume]
        return self._simplices

    @property
    def centroid(self):
        s = self.simplices()
        vol = np.array([_simplex_volume(x) for x in s])
        return (s.mean(axis=1) * vol[:, None]).sum(0) / vol.sum()

    def contains(self, X, tol=1e-12):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.all(X @ self.A.T <= self.b + tol, axis=1)

    def boundary_distance(self, Y):
        """Distance to the boundary for points inside (negative outside)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        norms = np.linalg.norm(self.A, axis=1)
        return np.min((self.b - Y @ self.A.T) / norms, axis=1)

    @property
    def rho_minus(self):
        if self._rho_minus is None:
            self._rho_minus = float(self.boundary_distance(np.zeros(self.n))[0])
        return self._rho_minus

    @property
    def rho_plus(self):
        if self._rho_plus is None:
            self._rho_plus = float(np.max(np.linalg.norm(self.vertices, axis=1)))
        return self._rho_plus

    @property
    def diameter(self):
        V = self.vertices
        return float(np.max(np.linalg.norm(V[:, None, :] - V[None, :, :], axis=2)))

    def support(self, x):
        return support_function(self, x)

    def scaled(self, s):
        return Polytope(self.vertices * s)

    def translated(self, x0):
        return Polytope(self.vertices + np.asarray(x0, dtype=float))

    def boundary_points(self, count, seed=0):
        """Deterministic sample of boundary points."""
        if self.n == 1:
            return self.vertices.copy()
        if self.n == 2:
            V = self.vertices
            nxt = np.roll(V, -1, axis=0)
            lengths = np.linalg.norm(nxt - V, axis=1)
            s = np.linspace(0, lengths.sum(), count, endpoint=False)
            cum = np.concatenate([[0], np.cumsum(lengths)])
            k = np.searchsorted(cum, s, side="right") - 1
            t = (s - cum[k]) / lengths[k]
            return V[k] + t[:, None] * (nxt[k] - V[k])
        rng = np.random.default_rng(seed)
        d = rng.normal(size=(count, self.n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        c = self.centroid
        with np.errstate(divide="ignore"):
            t = (self.b[None, :] - c @ self.A.T) / (d @ self.A.T)
        t = np.where(t > 0, t, np.inf).min(axis=1)
        return c + t[:, None] * d

    def to_dict(self):
        return {"dimension": self.n, "vertices": self.vertices.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["vertices"], dtype=float))

    def __repr__(self):
        return f"Polytope(n={self.n}, vertices={len(self.vertices)}, volume={self.volume:.6g})"


def chebyshev_center(A, b):
    """Center and radius of the largest ball inside ``{A x <= b}``."""
    A = np.atleast_2d(A)
    n = A.shape[1]
    norms = np.linalg.norm(A, axis=1)
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=np.column_stack([A, norms]), b_ub=b,
                  bounds=[(None, None)] * n + [(0, None)], method="highs")
    if not res.success:
        raise DomainError("Chebyshev center LP failed: " + res.message)
    return res.x[:n], float(res.x[-1])


@dataclass(frozen=True)
class Ellipsoid:
    """Ellipsoid ``center + {sum_k t_k L_k axes[k] : |t| <= 1}``."""

    center: np.ndarray
    axes: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        axes = np.atleast_2d(np.asarray(self.axes, dtype=float))
        if not np.allclose(axes @ axes.T, np.eye(len(axes)), atol=1e-12):
            raise InvalidInputError("ellipsoid axes must be orthonormal")
        lengths = np.asarray(self.lengths, dtype=float)
        if np.min(lengths) <= 0:
            raise InvalidInputError("semi-axis lengths must be positive")
        order = np.argsort(lengths, kind="stable")
        object.__setattr__(self, "axes", axes[order])
        object.__setattr__(self, "lengths", lengths[order])
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).ravel())

    @property
    def n(self):
        return len(self.lengths)

    @property
    def matrix(self):
        return self.axes.T @ np.diag(self.lengths) @ self.axes

    @property
    def volume(self):
        n = self.n
        return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * float(np.prod(self.lengths))

    def gauge(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float)) - self.center
        return np.linalg.norm((X @ self.axes.T) / self.lengths, axis=1)

    def support(self, x):
        return support_function(self, x)

    def scaled(self, s):
        return Ellipsoid(self.center, self.axes, self.lengths * s)


def support_function(K, x):
    """``sup_{y in K} <x, y>`` for a Polytope or Ellipsoid, vectorized over rows of x."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if isinstance(K, Polytope):
        if len(K.vertices) == 0:
            raise InvalidInputError("empty vertex list")
        val = np.max(X @ K.vertices.T, axis=1)
    elif isinstance(K, Ellipsoid):
        val = X @ K.center + np.linalg.norm((X @ K.axes.T) * K.lengths, axis=1)
    else:
        raise InvalidInputError("support_function expects a Polytope or Ellipsoid")
    return float(val[0]) if single else val


def polar_dual(P):
    """Polar body ``{x : <x, v> <= 1 for every vertex v}``."""
    if not np.all(P.b > MERGE_TOL):
        raise DomainError("origin is not interior to the polytope")
    return Polytope.from_halfspaces(P.vertices, np.ones(len(P.vertices)), interior=np.zeros(P.n))


def john_ellipsoid(omega, check_directions=128):
    """Maximal-volume ellipsoid inscribed in a polytope.

    The log-det program is handed to cvxpy; the result is rescaled so the
    inner containment holds exactly and both containments are verified.
    """
    n = omega.n
    if omega.volume <= MERGE_TOL:
        raise DomainError("degenerate polytope")
    if n == 1:
        lo, hi = omega.vertices[:, 0]
        return Ellipsoid(np.array([(lo + hi) / 2]), np.eye(1), np.array([(hi - lo) / 2]))
    import cvxpy as cp

    A, b = omega.A, omega.b
    scale = omega.diameter
    B = cp.Variable((n, n), PSD=True)
    d = cp.Variable(n)
    cons = [cp.norm(B @ A[k]) + A[k] @ d <= b[k] / scale for k in range(len(b))]
    prob = cp.Problem(cp.Maximize(cp.log_det(B)), cons)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        try:
            prob.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
        except cp.error.SolverError:
            prob.solve()
    if B.value is None:
        raise DomainError("John ellipsoid program failed: " + str(prob.status))
    Bm = (B.value + B.value.T) / 2 * scale
    center = np.asarray(d.value) * scale
    lengths, vecs = np.linalg.eigh(Bm)
    if lengths.min() <= MERGE_TOL * scale:
        raise DomainError("degenerate John ellipsoid")
    E = Ellipsoid(center, vecs.T, lengths)
    slack = b - A @ E.center
    reach = np.linalg.norm((A @ E.axes.T) * E.lengths, axis=1)
    shrink = np.max(reach / slack)
    if shrink > 1:
        E = E.scaled(1 / shrink)
    inner, outer = john_containment(omega, E, check_directions)
    if inner > 1e-8 * scale or outer > 1e-6 * scale:
        raise DomainError(f"John containment failed (inner {inner:.2e}, outer {outer:.2e})")
    return E


def john_containment(omega, E, directions=128):
    """Worst violations of ``E`` inside ``omega`` and ``omega`` inside ``c + n (E - c)``."""
    n = omega.n
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif n == 2:
        t = 2 * np.pi * np.arange(directions) / directions
        dirs = np.column_stack([np.cos(t), np.sin(t)])
    else:
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(directions, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.vstack([dirs, omega.A / np.linalg.norm(omega.A, axis=1, keepdims=True)])
    h_omega = support_function(omega, dirs)
    h_E = support_function(E, dirs)
    c = dirs @ E.center
    inner = float(np.max(h_E - h_omega))
    outer = float(np.max(h_omega - (c + n * (h_E - c))))
    # exact check of the outer containment through vertices
    outer = max(outer, float(np.max(E.gauge(omega.vertices) - n)) * float(E.lengths.min()))
    return inner, outer


# ---------------------------------------------------------------------------
# dual representation of convex functions


@dataclass(frozen=True)
class Envelope:
    """Lower convex envelope of lifted nodes: a simplicial subdivision of conv(nodes).

    ``simplices`` index nodes, ``slopes``/``offsets`` give the affine piece on
    each simplex and ``volumes`` their n-volumes.
    """

    simplices: np.ndarray
    slopes: np.ndarray
    offsets: np.ndarray
    volumes: np.ndarray
    active: np.ndarray

    def neighbors(self, N):
        """Adjacency lists of nodes in the subdivision."""
        s = self.simplices
        k = s.shape[1]
        pairs = np.vstack([s[:, [i, j]] for i in range(k) for j in range(i + 1, k)])
        pairs = np.vstack([pairs, pairs[:, ::-1]])
        pairs = np.unique(pairs, axis=0)
        starts = np.searchsorted(pairs[:, 0], np.arange(N + 1))
        return [pairs[starts[i]:starts[i + 1], 1] for i in range(N)]


def _affine_on_simplices(nodes, values, simplices):
    n = nodes.shape[1]
    V = nodes[simplices]
    M = np.concatenate([V, np.ones(V.shape[:2] + (1,))], axis=2)
    coef = np.linalg.solve(M, values[simplices][..., None])[..., 0]
    return coef[:, :n], coef[:, n]


def lower_envelope(nodes, values, tie_break=1e-9):
    """Lower convex hull of ``{(p_i, c_i)}`` as an :class:`Envelope`.

    Ties (coplanar lifted points) are resolved by lifting with a tiny convex
    quadratic, so nodes lying on the envelope stay in the subdivision.
    Affine pieces are always recomputed from the exact values.
    """
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    N, n = nodes.shape
    span = float(np.ptp(values)) + 1.0
    radius2 = float(np.max(np.sum((nodes - nodes.mean(0)) ** 2, axis=1))) or 1.0
    lifted = values + tie_break * span / radius2 * np.sum((nodes - nodes.mean(0)) ** 2, axis=1)
    if n == 1:
        order = np.lexsort((np.arange(N), nodes[:, 0]))
        hull = []
        for i in order:
            while len(hull) >= 2:
                a, b = hull[-2], hull[-1]
                cross = (nodes[b, 0] - nodes[a, 0]) * (lifted[i] - lifted[a]) - \
                        (lifted[b] - lifted[a]) * (nodes[i, 0] - nodes[a, 0])
                if cross <= 0:
                    hull.pop()
                else:
                    break
            hull.append(i)
        simplices = np.column_stack([hull[:-1], hull[1:]]).astype(np.int64)
    else:
        pts = np.column_stack([nodes, lifted])
        hull = ConvexHull(pts)
        normals = hull.equations[:, n]
        simplices = hull.simplices[normals < -1e-12]
    vol = np.abs(np.linalg.det(nodes[simplices][:, 1:] - nodes[simplices][:, :1])) / math.factorial(n)
    total = float(vol.sum())
    keep = vol > 1e-12 * total
    simplices, vol = simplices[keep], vol[keep]
    slopes, offsets = _affine_on_simplices(nodes, values, simplices)
    if n > 1:
        # canonical vertex and row order, so the (asymmetric) simplex rule places
        # the same samples whatever order Qhull reports; 1-D pieces are already sorted
        simplices = np.sort(simplices, axis=1)
        key = np.lexsort(simplices.T[::-1])
        simplices, slopes, offsets, vol = simplices[key], slopes[key], offsets[key], vol[key]
    active = np.zeros(N, dtype=bool)
    active[np.unique(simplices)] = True
    return Envelope(simplices, slopes, offsets, vol, active)


def merge_nodes(nodes, values, tol=MERGE_TOL):
    """Merge duplicate slope nodes, keeping the smallest value and first-occurrence order."""
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    order = np.lexsort(nodes.T[::-1])
    keep = np.ones(len(nodes), dtype=bool)
    vals = values.copy()
    group = [order[0]]
    for b in list(order[1:]) + [None]:
        if b is not None and np.max(np.abs(nodes[group[-1]] - nodes[b])) <= tol:
            group.append(b)
            continue
        if len(group) > 1:
            root = min(group)
            vals[root] = values[group].min()
            keep[[g for g in group if g != root]] = False
        if b is not None:
            group = [b]
    return nodes[keep], vals[keep]


class PiecewiseAffineConvex:
    """Convex function stored by slope nodes and intercepts.

    The primal function is ``u(x) = max_i(<p_i, x> - c_i)`` and its conjugate
    on ``conv{p_i}`` is the lower convex envelope ``v`` of ``{(p_i, c_i)}``.
    """

    def __init__(self, nodes, values, merge=True):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        values = np.asarray(values, dtype=float).ravel()
        if len(nodes) != len(values):
            raise InvalidInputError("nodes and values must have the same length")
        if len(nodes) < nodes.shape[1] + 1:
            raise InvalidInputError("need at least n+1 nodes")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("intercepts must be finite")
        if merge:
            nodes, values = merge_nodes(nodes, values)
        self.nodes = nodes
        self.values = values
        self._env = None

    @property
    def n(self):
        return self.nodes.shape[1]

    @property
    def N(self):
        return len(self.values)

    def envelope(self):
        if self._env is None:
            self._env = lower_envelope(self.nodes, self.values)
        return self._env

    def with_values(self, values):
        out = PiecewiseAffineConvex.__new__(PiecewiseAffineConvex)
        out.nodes = self.nodes
        out.values = np.asarray(values, dtype=float)
        out._env = None
        return out

    def dual(self, Y):
        """Envelope ``v`` at points of ``conv{p_i}`` (``+inf`` outside)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape[1] != self.n:
            Y = Y.reshape(-1, self.n)
        env = self.envelope()
        vals = np.max(Y @ env.slopes.T + env.offsets, axis=1)
        inside = self._hull_contains(Y)
        return np.where(inside, vals, np.inf)

    def _hull_contains(self, Y, tol=1e-10):
        if self.n == 1:
            lo, hi = self.nodes.min(), self.nodes.max()
            return (Y[:, 0] >= lo - tol) & (Y[:, 0] <= hi + tol)
        if not hasattr(self, "_hull_eq"):
            self._hull_eq = ConvexHull(self.nodes).equations
        eq = self._hull_eq
        return np.all(Y @ eq[:, :-1].T + eq[:, -1] <= tol, axis=1)

    def primal(self, X):
        """``u(x) = max_i(<p_i, x> - c_i)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n:
            X = X.reshape(-1, self.n)
        return np.max(X @ self.nodes.T - self.values, axis=1)

    def node_envelope_values(self):
        env = self.envelope()
        return np.max(self.nodes @ env.slopes.T + env.offsets, axis=1)

    @property
    def is_canonical(self):
        return bool(np.all(self.values <= self.node_envelope_values() + 1e-12 * (1 + np.abs(self.values))))

    def canonicalize(self):
        """Lower every node onto the envelope; the functions u and v are unchanged."""
        return self.with_values(np.minimum(self.values, self.node_envelope_values()))

    def shifted(self, t):
        """``v + t``."""
        return self.with_values(self.values + t)

    def tilted(self, x0):
        """``v - <x0, .>``; the primal becomes ``u(. + x0)``."""
        return self.with_values(self.values - self.nodes @ np.asarray(x0, dtype=float))

    def scaled(self, s):
        return self.with_values(self.values * s)

    def to_dict(self):
        return {"nodes": self.nodes.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["nodes"], dtype=float), np.asarray(data["values"], dtype=float))

    def __repr__(self):
        return f"PiecewiseAffineConvex(n={self.n}, N={self.N})"


# ---------------------------------------------------------------------------
# cells of the primal function


def _clip_polygon(poly, a, b):
    """Convex polygon intersected with ``{a . x <= b}``."""
    if len(poly) == 0:
        return poly
    s = poly @ a - b
    inside = s <= 0
    if inside.all():
        return poly
    if not inside.any():
        return poly[:0]
    out = []
    m = len(poly)
    for k in range(m):
        j = (k + 1) % m
        if inside[k]:
            out.append(poly[k])
        if inside[k] != inside[j]:
            t = s[k] / (s[k] - s[j])
            out.append(poly[k] + t * (poly[j] - poly[k]))
    return np.array(out)


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _cell_polytopes(f, box_lo, box_hi, clip_negative):
    """Vertex sets of the cells of ``f``'s primal inside a box.

    Returns a list (indexed by node) of vertex arrays; 1-D cells are intervals.
    """
    p, c = f.nodes, f.values
    N, n = p.shape
    env = f.envelope()
    cells = [np.zeros((0, n)) for _ in range(N)]
    if n == 1:
        idx = env.simplices[:, 0].tolist() + [env.simplices[-1, 1]]
        breaks = env.slopes[:, 0]
        lo = np.concatenate([[box_lo[0]], breaks])
        hi = np.concatenate([breaks, [box_hi[0]]])
        for k, i in enumerate(idx):
            a, b = max(lo[k], box_lo[0]), min(hi[k], box_hi[0])
            if clip_negative:
                pi, ci = p[i, 0], c[i]
                if pi > 0:
                    b = min(b, ci / pi)
                elif pi < 0:
                    a = max(a, ci / pi)
                elif ci <= 0:
                    b = a
            if b > a:
                cells[i] = np.array([[a], [b]])
        return cells
    nbrs = env.neighbors(N)
    box = np.array(np.meshgrid(*[[box_lo[k], box_hi[k]] for k in range(n)], indexing="ij")).reshape(n, -1).T
    for i in np.flatnonzero(env.active):
        A = p[nbrs[i]] - p[i]
        b = c[nbrs[i]] - c[i]
        if clip_negative:
            A = np.vstack([A, p[i]])
            b = np.append(b, c[i])
        if n == 2:
            poly = np.array([[box_lo[0], box_lo[1]], [box_hi[0], box_lo[1]],
                             [box_hi[0], box_hi[1]], [box_lo[0], box_hi[1]]])
            for a_row, b_val in zip(A, b):
                poly = _clip_polygon(poly, a_row, b_val)
                if len(poly) == 0:
                    break
            if _polygon_area(poly) > 0:
                cells[i] = poly
        else:
            A_all = np.vstack([A, np.eye(n), -np.eye(n)])
            b_all = np.concatenate([b, box_hi, -np.asarray(box_lo)])
            try:
                center, radius = chebyshev_center(A_all, b_all)
            except DomainError:
                continue
            if radius <= 1e-13:
                continue
            hs = HalfspaceIntersection(np.column_stack([A_all, -b_all]), center)
            cells[i] = _dedup_rows(hs.intersections, 1e-13)
    del box
    return cells


def _cell_simplices(cells, n):
    """Fan-triangulate cell vertex sets into simplices; returns (simplices, owner)."""
    simp, owner = [], []
    for i, verts in enumerate(cells):
        if len(verts) == 0:
            continue
        if n == 1:
            simp.append(verts[None])
            owner.append(i)
        elif n == 2:
            if len(verts) < 3:
                continue
            k = len(verts)
            tri = np.stack([np.repeat(verts[:1], k - 2, 0), verts[1:-1], verts[2:]], axis=1)
            simp.append(tri)
            owner.extend([i] * (k - 2))
        else:
            try:
                hull = ConvexHull(verts)
            except QhullError:
                continue
            cen = verts[hull.vertices].mean(0)
            tets = np.concatenate([np.repeat(cen[None, None], len(hull.simplices), 0),
                                   verts[hull.simplices]], axis=1)
            simp.append(tets)
            owner.extend([i] * len(tets))
    if not simp:
        return np.zeros((0, n + 1, n)), np.zeros(0, dtype=np.int64)
    return np.concatenate(simp), np.asarray(owner, dtype=np.int64)


def primal_bounding_box(f, margin=1.0):
    """Box containing ``{u < 0}``."""
    p, c = f.nodes, f.values
    if f.n == 1:
        rho = min(-p.min(), p.max())
    else:
        if not hasattr(f, "_hull_eq"):
            f._hull_eq = ConvexHull(p).equations
        rho = float(np.min(-f._hull_eq[:, -1]))
    if rho <= 0:
        raise DomainError("origin is not interior to the slope hull")
    R = max(float(np.max(c)), 0.0) / rho * (1 + 1e-9) + margin * 1e-9 + 1e-12
    return -np.full(f.n, R), np.full(f.n, R)


@dataclass
class Cell:
    index: int
    vertices: np.ndarray
    volume: float


def activity_cells(f, box=None):
    """Activity cells ``V_i`` of the primal of ``f`` intersected with a box.

    ``box`` is a pair ``(lo, hi)``; cells of boundary nodes are unbounded, so
    a box is required.
    """
    if box is None:
        raise InvalidInputError("activity cells are unbounded without a box")
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box)
    cells = _cell_polytopes(f, lo, hi, clip_negative=False)
    out = []
    for i, verts in enumerate(cells):
        if len(verts) == 0:
            continue
        if f.n == 1:
            vol = float(verts[1, 0] - verts[0, 0])
        elif f.n == 2:
            vol = _polygon_area(verts)
        else:
            vol = float(ConvexHull(verts).volume)
        out.append(Cell(i, verts, vol))
    return out


def negative_set(f):
    """The polytope ``{u < 0}``."""
    p, c = f.nodes, f.values
    n = f.n
    res = linprog(np.r_[np.zeros(n), 1.0], A_ub=np.column_stack([p, -np.ones(len(c))]), b_ub=c,
                  bounds=[(None, None)] * (n + 1), method="highs")
    if not res.success or res.x[-1] >= 0:
        raise EmptyFreeBoundaryError("u >= 0 everywhere")
    return Polytope.from_halfspaces(p, c, interior=res.x[:n])


def legendre_transform(f, box=None):
    """Conjugate of the envelope of ``f`` as node data.

    The returned nodes are the vertices of the activity cells clipped to
    ``box`` (default: a box around the free set and every cell vertex), with
    values ``u`` there. Its own primal reproduces the envelope of ``f`` at all
    active nodes whose cells meet the box.
    """
    if box is None:
        env = f.envelope()
        lo, hi = primal_bounding_box(f)
        pts = np.vstack([env.slopes, lo, hi])
        span = np.max(np.abs(pts)) * 2 + 1.0
        box = (-np.full(f.n, span), np.full(f.n, span))
    cells = activity_cells(f, box)
    verts = _dedup_rows(np.vstack([cell.vertices for cell in cells]), 1e-12)
    return PiecewiseAffineConvex(verts, f.primal(verts))


def conjugate_values(f, X):
    """Evaluate the conjugate of the envelope of ``f`` at points ``X``."""
    return f.primal(X)


# ---------------------------------------------------------------------------
# quadrature grids


@dataclass
class QuadratureGrid:
    """Weighted sample points over a region."""

    points: np.ndarray
    weights: np.ndarray
    density: np.ndarray
    level: int = 0

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise InvalidInputError("quadrature weights must be positive")

    @property
    def volume(self):
        return math.fsum(self.weights)

    @classmethod
    def on_simplices(cls, simplices, density=None, order=4, level=0):
        simplices = np.asarray(simplices, dtype=float)
        n = simplices.shape[2]
        bary, w = simplex_rule(n, order, level)
        pts = np.einsum("qk,skn->sqn", bary, simplices).reshape(-1, n)
        vol = np.abs(np.linalg.det(simplices[:, 1:] - simplices[:, :1])) / math.factorial(n)
        wts = (vol[:, None] * w[None, :]).ravel()
        dens = np.ones(len(pts)) if density is None else np.asarray(density(pts), dtype=float)
        return cls(pts, wts, dens, level)

    @classmethod
    def on_polytope(cls, P, density=None, order=4, level=0):
        return cls.on_simplices(P.simplices(), density, order, level)

    @classmethod
    def graded_at(cls, P, focus, density=None, order=6, level=0):
        """Grid on P geometrically refined towards ``focus`` (a point of P)."""
        focus = np.asarray(focus, dtype=float).ravel()
        if P.n == 1:
            lo, hi = P.vertices[:, 0]
            pieces = [np.array([[focus[0]], [e]]) for e in (lo, hi) if abs(e - focus[0]) > 0]
        else:
            verts = _dedup_rows(np.vstack([P.vertices, focus]), 1e-12)
            tri = Delaunay(verts)
            pieces = []
            fi = int(np.argmin(np.linalg.norm(verts - focus, axis=1)))
            for s in tri.simplices:
                v = verts[s]
                if _simplex_volume(v) <= 1e-14 * P.volume:
                    continue
                if fi in s:
                    k = list(s).index(fi)
                    v = np.vstack([v[k], np.delete(v, k, axis=0)])
                pieces.append(v)
        n = P.n
        pts_all, w_all = [], []
        for v in pieces:
            vol = _simplex_volume(v)
            if np.allclose(v[0], focus):
                bary, w = _radial_graded_rule(n, order, level)
            else:
                bary, w = simplex_rule(n, order, 0)
            pts_all.append(bary @ v)
            w_all.append(vol * w)
        pts = np.vstack(pts_all)
        wts = np.concatenate(w_all)
        dens = np.ones(len(pts)) if density is None else np.asarray(density(pts), dtype=float)
        return cls(pts, wts, dens, level)

    def to_csv(self, path):
        n = self.points.shape[1]
        header = ",".join([f"x{k}" for k in range(n)] + ["weight", "h"])
        np.savetxt(path, np.column_stack([self.points, self.weights, self.density]),
                   delimiter=",", header=header, comments="", fmt="%.17g")


def measure_integrate(grid, integrand, floor=None):
    """``sum_q w_q h_q f(x_q)`` with exactly rounded summation.

    When ``floor`` is given and the integrand drops below it at some sample,
    a :class:`DivergentIntegral` tagged with the grid level is returned.
    """
    vals = np.asarray(integrand(grid.points), dtype=float)
    if floor is not None and (np.any(vals < floor) or np.any(np.isneginf(vals))):
        return DivergentIntegral(grid.level)
    return math.fsum(grid.weights * grid.density * vals)


def integrate_until_divergence(P, integrand, focus, density=None, floor=-1e12, max_level=40):
    """Refine a grid towards ``focus`` until the floor is crossed or levels run out.

    Returns ``(value, levels_tried)``; value is a :class:`DivergentIntegral` on
    divergence.
    """
    history = []
    for level in range(max_level + 1):
        grid = QuadratureGrid.graded_at(P, focus, density, level=level)
        val = measure_integrate(grid, integrand, floor)
        history.append(val)
        if isinstance(val, DivergentIntegral):
            return val, history
    return history[-1], history


def h_barycenter(W):
    """``(1/H) int_P y h(y) dy`` for a weighted domain."""
    grid = W.grid
    H = math.fsum(grid.weights * grid.density)
    if H <= 1e-14 * W.P.volume:
        raise DegenerateDensityError("total mass below floor")
    wd = grid.weights * grid.density
    return np.array([math.fsum(wd * grid.points[:, k]) for k in range(W.P.n)]) / H

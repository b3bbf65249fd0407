"""Nonlinearity data (F, G, h) and numerical checks of their structural properties."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

from .convex_core import Polytope, QuadratureGrid
from .exceptions import DoublingMassGap, InvalidInputError, InvalidPairError

SAMPLE_LO, SAMPLE_HI = 1e-8, 1e8


# ---------------------------------------------------------------------------
# scalar building blocks


@dataclass(frozen=True)
class _Term:
    """One summand of G: ``linear`` (s), ``power`` (-coef s^-m) or ``log`` (log s)."""

    kind: str
    exponent: float = 0.0
    coef: float = 1.0

    def value(self, s):
        if self.kind == "linear":
            return self.coef * s
        if self.kind == "power":
            with np.errstate(divide="ignore"):
                return -self.coef * np.power(s, -self.exponent)
        if self.kind == "log":
            with np.errstate(divide="ignore"):
                return self.coef * np.log(s)
        raise InvalidInputError(f"unknown G term {self.kind!r}")

    def deriv(self, s):
        if self.kind == "linear":
            return self.coef * np.ones_like(s)
        if self.kind == "power":
            with np.errstate(divide="ignore"):
                return self.coef * self.exponent * np.power(s, -self.exponent - 1)
        with np.errstate(divide="ignore"):
            return self.coef / s

    def to_dict(self):
        return {"kind": self.kind, "exponent": self.exponent, "coef": self.coef}


def _numeric_inverse(G, t, lo=-700.0, hi=700.0, iters=120):
    """Inverse of an increasing map on (0, inf) by bisection in log s."""
    t = np.asarray(t, dtype=float)
    a = np.full(t.shape, lo)
    b = np.full(t.shape, hi)
    with np.errstate(over="ignore", invalid="ignore"):
        ok = (G(np.exp(a)) <= t) & (G(np.exp(b)) >= t)
        for _ in range(iters):
            m = 0.5 * (a + b)
            below = G(np.exp(m)) < t
            a = np.where(below, m, a)
            b = np.where(below, b, m)
    out = np.where(ok, np.exp(0.5 * (a + b)), np.nan)
    out = np.where(np.isneginf(t), 0.0, out)
    return out


class StructuralPair:
    """The pair (F, G) with derivatives f, g and the inverse of G.

    Use the catalog constructors (:meth:`power`, :meth:`exponential`,
    :meth:`from_dict`, ...) rather than ``__init__`` directly.
    """

    def __init__(self, F, f, G, g, G_inv, tag, params=None, spec=None, log_F=None):
        self._F, self._f, self._G, self._g, self._Ginv = F, f, G, g, G_inv
        self._logF = log_F
        self.tag = tag
        self.params = dict(params or {})
        self.spec = spec or {}

    # vectorized evaluation ------------------------------------------------
    def F(self, s):
        return self._F(np.asarray(s, dtype=float))

    def log_F(self, s):
        """log F evaluated without overflow for large arguments."""
        s = np.asarray(s, dtype=float)
        if self._logF is not None:
            return self._logF(s)
        with np.errstate(divide="ignore"):
            return np.log(self._F(s))

    def f(self, s):
        return self._f(np.asarray(s, dtype=float))

    def G(self, s):
        return self._G(np.asarray(s, dtype=float))

    def g(self, s):
        return self._g(np.asarray(s, dtype=float))

    def G_inv(self, t):
        return self._Ginv(np.asarray(t, dtype=float))

    @property
    def g_constant(self):
        return bool(self.params.get("g_constant", False))

    @property
    def homogeneity(self):
        """Degree of F when F is a pure power, else ``None``."""
        return self.params.get("k")

    @property
    def singular_at_zero(self):
        with np.errstate(divide="ignore"):
            return bool(np.isneginf(self.G(0.0)) or self.G(1e-300) < -1e12)

    def with_G_shift(self, t):
        """Same pair with G replaced by G + t (J does not depend on this)."""
        G, Ginv = self._G, self._Ginv
        return StructuralPair(self._F, self._f, lambda s: G(s) + t, self._g,
                              lambda y: Ginv(y - t), self.tag, self.params, self.spec, self._logF)

    def to_dict(self):
        return dict(self.spec)

    def __repr__(self):
        return f"StructuralPair({self.tag}, {self.spec})"

    # catalog ----------------------------------------------------------------
    @classmethod
    def from_dict(cls, spec):
        """Build a pair from ``{"F": {...}, "G": {...}}``.

        F kinds: ``power`` (coef * s^exponent), ``exp`` ((e^{a s} - 1)/a),
        ``spline`` (monotone cubic through ``knots``/``values`` with power tails).
        G kinds: ``linear``, ``power`` (-coef s^-exponent), ``log``,
        ``blend`` (sum of ``terms``), ``spline``.
        """
        try:
            Fs, Gs = spec["F"], spec["G"]
        except (KeyError, TypeError) as exc:
            raise InvalidInputError("pair spec needs 'F' and 'G' entries") from exc
        params = {}
        log_F = None
        # F ------------------------------------------------------------------
        kind = Fs.get("kind")
        if kind == "power":
            q = float(Fs["exponent"])
            c = float(Fs.get("coef", 1.0 / q))
            if q < 1 or c <= 0:
                raise InvalidPairError("power F needs exponent >= 1 and coef > 0")
            F = lambda s: c * np.power(np.maximum(s, 0.0), q)  # noqa: E731
            f = lambda s: c * q * np.power(np.maximum(s, 0.0), q - 1)  # noqa: E731
            params["k"] = q
            f_tag = "power"
        elif kind == "exp":
            a = float(Fs["a"])
            if a <= 0:
                raise InvalidPairError("exponential F needs a > 0")
            F = lambda s: np.expm1(a * s) / a  # noqa: E731
            f = lambda s: np.exp(a * s)  # noqa: E731
            log_F = lambda s: a * s + np.log(-np.expm1(-a * s)) - math.log(a)  # noqa: E731
            params["a"] = a
            f_tag = "exponential"
        elif kind == "spline":
            F, f = _spline_F(np.asarray(Fs["knots"], float), np.asarray(Fs["values"], float))
            f_tag = "custom-spline"
        else:
            raise InvalidInputError(f"unknown F kind {kind!r}")
        # G ------------------------------------------------------------------
        kind = Gs.get("kind")
        if kind == "spline":
            G, g = _spline_G(np.asarray(Gs["knots"], float), np.asarray(Gs["values"], float))
            Ginv = lambda t: _numeric_inverse(G, t)  # noqa: E731
            g_tag = "custom-spline"
        else:
            if kind == "blend":
                terms = [_Term(t["kind"], float(t.get("exponent", 0.0)), float(t.get("coef", 1.0)))
                         for t in Gs["terms"]]
            elif kind in ("linear", "log"):
                terms = [_Term(kind, 0.0, float(Gs.get("coef", 1.0)))]
            elif kind == "power":
                m = float(Gs["exponent"])
                terms = [_Term("power", m, float(Gs.get("coef", 1.0 / m)))]
            else:
                raise InvalidInputError(f"unknown G kind {kind!r}")
            if any(t.coef <= 0 or (t.kind == "power" and t.exponent <= 0) for t in terms):
                raise InvalidPairError("G terms need positive coefficients and exponents")
            G = lambda s, terms=terms: sum(t.value(s) for t in terms)  # noqa: E731
            g = lambda s, terms=terms: sum(t.deriv(s) for t in terms)  # noqa: E731
            Ginv = _closed_inverse(terms) or (lambda t, G=G: _numeric_inverse(G, t))
            params["g_constant"] = len(terms) == 1 and terms[0].kind == "linear"
            g_tag = "power" if all(t.kind in ("power", "linear") for t in terms) and len(terms) == 1 else "log-blend"
        tag = f_tag if f_tag != "power" else g_tag
        return cls(F, f, G, g, Ginv, tag, params, spec, log_F)

    @classmethod
    def power(cls, F_exponent, G_exponent=None, F_coef=None, G_coef=None):
        """F = coef s^q (default coef 1/q); G = s, or G = -coef s^-m when ``G_exponent`` is set."""
        Fs = {"kind": "power", "exponent": F_exponent}
        if F_coef is not None:
            Fs["coef"] = F_coef
        if G_exponent is None:
            Gs = {"kind": "linear"}
        else:
            Gs = {"kind": "power", "exponent": G_exponent}
            if G_coef is not None:
                Gs["coef"] = G_coef
        return cls.from_dict({"F": Fs, "G": Gs})

    @classmethod
    def reconstruction(cls, k=0.0):
        """F = s^{k+1}/(k+1), G = s."""
        return cls.power(k + 1.0)

    @classmethod
    def exponential(cls, a=1.0):
        """F = (e^{a s} - 1)/a, G = s."""
        return cls.from_dict({"F": {"kind": "exp", "a": a}, "G": {"kind": "linear"}})

    @classmethod
    def transport(cls, n, alpha, beta):
        """F = s^{1+beta}/(1+beta), G = -s^{-(n+1+alpha)}/(n+1+alpha)."""
        return cls.power(1.0 + beta, n + 1.0 + alpha)

    @classmethod
    def borderline(cls, n):
        """F = s, G = -s^{-(n+1)}: singular enough to fail the strict exponent gap."""
        return cls.power(1.0, n + 1.0, F_coef=1.0, G_coef=1.0)

    @classmethod
    def landscape_demo(cls, n=4):
        """F = s^2/2, G = -s^{-(n+5)} + s."""
        return cls.from_dict({
            "F": {"kind": "power", "exponent": 2.0, "coef": 0.5},
            "G": {"kind": "blend", "terms": [
                {"kind": "power", "exponent": n + 5.0, "coef": 1.0},
                {"kind": "linear", "coef": 1.0}]},
        })


def _closed_inverse(terms):
    if len(terms) != 1:
        return None
    t0 = terms[0]
    if t0.kind == "linear":
        return lambda y: y / t0.coef
    if t0.kind == "log":
        return lambda y: np.exp(y / t0.coef)

    def inv(y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.power(-y / t0.coef, -1.0 / t0.exponent)
        out = np.where(y < 0, out, np.nan)
        return np.where(np.isneginf(y), 0.0, out)

    return inv


def _spline_F(knots, values):
    if knots[0] <= 0 or np.any(np.diff(knots) <= 0) or np.any(np.diff(values) <= 0) or values[0] <= 0:
        raise InvalidPairError("spline F needs increasing positive knots and values")
    spl = PchipInterpolator(np.log(knots), np.log(values))
    d = spl.derivative()
    s0, s1 = knots[0], knots[-1]
    g0, g1 = float(d(np.log(s0))), float(d(np.log(s1)))

    def F(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            ls = np.log(np.maximum(s, 1e-300))
        mid = np.exp(spl(np.clip(ls, np.log(s0), np.log(s1))))
        low = values[0] * np.power(np.maximum(s, 0.0) / s0, g0)
        high = values[-1] * np.power(s / s1, g1)
        return np.where(s < s0, low, np.where(s > s1, high, mid))

    def f(s):
        s = np.asarray(s, dtype=float)
        safe = np.maximum(s, 1e-300)
        ls = np.log(safe)
        slope = np.where(s < s0, g0, np.where(s > s1, g1, d(np.clip(ls, np.log(s0), np.log(s1)))))
        return np.where(s > 0, F(s) * slope / safe, 0.0 if g0 > 1 else np.inf)

    return F, f


def _spline_G(knots, values):
    if knots[0] <= 0 or np.any(np.diff(knots) <= 0) or np.any(np.diff(values) <= 0):
        raise InvalidPairError("spline G needs increasing knots and values")
    spl = PchipInterpolator(knots, values)
    d = spl.derivative()
    s0, s1 = knots[0], knots[-1]
    d0, d1 = float(d(s0)), float(d(s1))

    def G(s):
        s = np.asarray(s, dtype=float)
        mid = spl(np.clip(s, s0, s1))
        return np.where(s < s0, values[0] + d0 * (s - s0), np.where(s > s1, values[-1] + d1 * (s - s1), mid))

    def g(s):
        s = np.asarray(s, dtype=float)
        return np.where(s < s0, d0, np.where(s > s1, d1, d(np.clip(s, s0, s1))))

    return G, g


# ---------------------------------------------------------------------------
# classification


@dataclass
class Classification:
    """Outcome of :func:`classify_structure`."""

    label: str
    family: str
    witness: str | None
    clauses: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    def to_dict(self):
        return {"label": self.label, "family": self.family, "witness": self.witness,
                "clauses": self.clauses, "params": self.params, "traces": self.traces}


def _log_slope(fun, s, rel=1e-3):
    a, b = abs(fun(s * (1 - rel))), abs(fun(s * (1 + rel)))
    return float((math.log(b) - math.log(a)) / (math.log1p(rel) - math.log1p(-rel)))


def _growth(ratio_fn):
    """Classify a ratio's trend across the top two decades: 'o', 'O' or 'fail'."""
    r6, r8 = abs(float(ratio_fn(1e6))), abs(float(ratio_fn(1e8)))
    if not (np.isfinite(r6) and np.isfinite(r8)):
        return "fail", (r6, r8)
    if r6 == 0:
        return ("o" if r8 == 0 else "fail"), (r6, r8)
    q = r8 / r6
    if q < 0.1:
        return "o", (r6, r8)
    if q <= 1.1:
        return "O", (r6, r8)
    return "fail", (r6, r8)


def _integral_diverges(G, power, lo_end=True):
    """Sentinel for divergence of int_0^1 G s^power ds (or int_1^inf when lo_end=False).

    Partial integrals are compared over successive two-decade windows.
    """
    def piece(a, b):
        val, _ = quad(lambda t: float(G(math.exp(t))) * math.exp((power + 1) * t), math.log(a), math.log(b),
                      limit=200, epsabs=0, epsrel=1e-10)
        return val

    if lo_end:
        d1, d2 = piece(1e-6, 1e-4), piece(1e-8, 1e-6)
    else:
        d1, d2 = piece(1e4, 1e6), piece(1e6, 1e8)
    divergent = abs(d2) > 0.5 * abs(d1) and abs(d2) > 0
    return divergent, (d1, d2)


def classify_structure(pair, n):
    """Numerically test the growth, concavity and singularity clauses of a pair.

    Returns a :class:`Classification` whose ``label`` is one of ``H1``,
    ``sH1``, ``H2``, ``sH2``, ``H3``, ``sH3`` or ``none`` and whose
    ``witness`` names the first failing clause.
    """
    s = np.logspace(-8, 8, 161)
    Gs = pair.G(s)
    with np.errstate(over="ignore"):
        Fs = pair.F(s)
    if np.any(~np.isfinite(Gs)) or np.any(np.diff(Gs) <= 0):
        raise InvalidPairError("G is not strictly increasing on the sample range")
    clauses, params, traces = {}, {}, {}
    g_samples = pair.g(s)
    Fs = Fs[np.isfinite(Fs)]
    s_F = s[:len(Fs)]
    F_ok = bool(np.all(np.diff(Fs) > 0) and abs(float(pair.F(0.0))) < 1e-14)
    dF = np.diff(Fs) / np.diff(s_F)
    F_convex = bool(np.all(np.diff(dF) >= -1e-9 * np.abs(dF[1:])))
    clauses["F convex increasing, F(0)=0"] = F_ok and F_convex

    # H1: g constant
    if np.ptp(g_samples) <= 1e-10 * abs(g_samples[0]) and g_samples[0] > 0:
        clauses["g constant"] = True
        trend, tr = _growth(lambda t: float(pair.log_F(t)) / t)
        traces["log F(t)/t"] = tr
        clauses["log F = O(t)"] = trend in ("O", "o")
        clauses["log F = o(t)"] = trend == "o"
        if not clauses["log F = O(t)"]:
            return Classification("none", "H1", "log F = O(t)", clauses, params, traces)
        return Classification("sH1" if trend == "o" else "H1", "H1", None, clauses, params, traces)
    clauses["g constant"] = False

    # concave branch
    dG = np.diff(Gs) / np.diff(s)
    concave = bool(np.all(np.diff(dG) <= 1e-9 * np.abs(dG[:-1])))
    clauses["G concave increasing"] = concave
    G1 = float(pair.G(1.0))
    h2_shape = abs(G1) <= 1e-12 and \
        float(pair.G(1e8) - pair.G(1e4)) >= 0.5 * float(pair.G(1e4) - pair.G(1.0))
    h3_shape = bool(np.all(Gs < 0)) and abs(float(pair.G(1e8))) <= 1e-6 * abs(G1)
    family = "H2" if h2_shape else "H3" if h3_shape else "none"
    if family == "none":
        clauses["G shape (H2: G(1)=0, G->inf; H3: G<0, G->0)"] = False
        return Classification("none", "none", "G shape (H2: G(1)=0, G->inf; H3: G<0, G->0)",
                               clauses, params, traces)
    if not concave:
        return Classification("none", family, "G concave increasing", clauses, params, traces)
    if not (F_ok and F_convex):
        return Classification("none", family, "F convex increasing, F(0)=0", clauses, params, traces)

    # clause (2): singular exponent at 0
    m0 = _log_slope(pair.G, 1e-8)
    nu = max(0.0, -m0 - n)
    params["nu"] = nu
    small = np.logspace(-8, -1, 71)
    Gsmall = np.abs(pair.G(small))
    lower_env = Gsmall * small ** (n + nu)          # must stay bounded
    upper_env = Gsmall * small ** (n + nu - 1)      # must stay bounded below
    clauses["G >~ -s^-(n+nu)"] = bool(lower_env[0] <= 1.1 * lower_env[20] + 1e-300)
    clauses["G <~ -s^-(n+nu)+1"] = bool(np.min(upper_env) > 0 and upper_env[0] >= 0.9 * upper_env[20])
    params["lower envelope constant"] = float(np.max(lower_env))
    params["upper envelope constant"] = float(1.0 / np.min(upper_env)) if np.min(upper_env) > 0 else math.inf
    div, incr = _integral_diverges(pair.G, n + nu - 1)
    traces["int_0^1 G s^(n+nu-1) increments"] = incr
    clauses["int_0^1 G s^(n+nu-1) = -inf"] = div

    # clause (3)/(4): F ~ s^gamma near 0
    gamma = _log_slope(pair.F, 1e-8)
    params["gamma"] = gamma
    gamma_ratio = [float(pair.F(t)) / t ** gamma for t in (1e-8, 1e-6, 1e-4)]
    F_power_like = min(gamma_ratio) > 0 and max(gamma_ratio) / min(gamma_ratio) < 10
    for name in ("G >~ -s^-(n+nu)", "G <~ -s^-(n+nu)+1", "int_0^1 G s^(n+nu-1) = -inf"):
        if not clauses[name]:
            return Classification("none", family, name, clauses, params, traces)

    if family == "H2":
        key = "F ~ s^gamma with gamma >= nu"
        clauses[key] = bool(F_power_like and gamma >= nu - 1e-6)
        if not clauses[key]:
            return Classification("none", family, key, clauses, params, traces)
        trends = []
        for eps in (0.25, 0.5, 0.75):
            trend, tr = _growth(lambda x, e=eps: float(pair.log_F(x)) /
                                float(pair.G_inv(e * pair.G(e * x))))
            traces[f"log F / G^-1(eps G(eps x)), eps={eps}"] = tr
            trends.append(trend)
        clauses["log F = O(G^-1(eps G(eps x)))"] = all(t in ("O", "o") for t in trends)
        clauses["log F = o(G^-1(eps G(eps x)))"] = all(t == "o" for t in trends)
        if not clauses["log F = O(G^-1(eps G(eps x)))"]:
            return Classification("none", family, "log F = O(G^-1(eps G(eps x)))", clauses, params, traces)
        strong = clauses["log F = o(G^-1(eps G(eps x)))"]
        return Classification("sH2" if strong else "H2", family, None, clauses, params, traces)

    # H3
    hi = np.logspace(4, 8, 41)
    slopes = [-_log_slope(pair.G, t) - n for t in hi]
    beta1, beta2 = float(min(slopes)), float(max(slopes))
    params["beta1"], params["beta2"] = beta1, beta2
    conv, incr_hi = _integral_diverges(pair.G, n - 1, lo_end=False)
    traces["int_1^inf G s^(n-1) increments"] = incr_hi
    clauses["beta2 >= beta1 >= 0, int_1^inf G s^(n-1) finite"] = bool(beta1 >= -1e-6 and not conv)
    if not clauses["beta2 >= beta1 >= 0, int_1^inf G s^(n-1) finite"]:
        return Classification("none", family, "beta2 >= beta1 >= 0, int_1^inf G s^(n-1) finite",
                              clauses, params, traces)
    key = "F ~ s^gamma with gamma > nu"
    clauses[key] = bool(F_power_like and gamma > nu + 1e-6)
    if not clauses[key]:
        return Classification("none", family, key, clauses, params, traces)
    expo = (n + beta1) / (n + beta2)
    trend, tr = _growth(lambda x: float(pair.log_F(x)) / x ** expo)
    traces["log F / s^((n+b1)/(n+b2))"] = tr
    clauses["log F = O(s^((n+b1)/(n+b2)))"] = trend in ("O", "o")
    clauses["log F = o(s^((n+b1)/(n+b2)))"] = trend == "o"
    if trend == "fail":
        return Classification("none", family, "log F = O(s^((n+b1)/(n+b2)))", clauses, params, traces)
    return Classification("sH3" if trend == "o" else "H3", family, None, clauses, params, traces)


# ---------------------------------------------------------------------------
# weighted domains


class WeightedDomain:
    """Polytope P with a density h (default 1), its mass H and a quadrature grid."""

    def __init__(self, P, h=None, order=4, level=2, label="uniform"):
        if not isinstance(P, Polytope):
            P = Polytope(P)
        self.P = P
        self._h = h
        self.label = label
        self.grid = QuadratureGrid.on_polytope(P, self.h, order=order, level=level)
        if np.any(self.grid.density <= 0):
            raise InvalidInputError("density must be positive in the interior")
        self.H = math.fsum(self.grid.weights * self.grid.density)
        self.certificate = None
        self.doubling_constant = None

    def h(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self._h is None:
            return np.ones(len(Y))
        return np.asarray(self._h(Y), dtype=float)

    @property
    def uniform(self):
        return self._h is None

    @classmethod
    def distance_power(cls, P, alpha, **kw):
        """h(y) = dist(y, boundary)^alpha."""
        def h(Y, P=P, alpha=alpha):
            return np.maximum(P.boundary_distance(Y), 0.0) ** alpha
        return cls(P, h, label=f"distance^{alpha}", **kw)

    def to_dict(self):
        return {"P": self.P.to_dict(), "h": self.label, "H": self.H}


def _cone_rays(n, axis, aperture, count):
    if n == 1:
        return axis[None, :]
    if n == 2:
        base = math.atan2(axis[1], axis[0])
        ang = base + np.linspace(-aperture, aperture, count)
        return np.column_stack([np.cos(ang), np.sin(ang)])
    rng = np.random.default_rng(1)
    out = [axis]
    helper = np.eye(3)[np.argmin(np.abs(axis))]
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    for phi in rng.uniform(0, 2 * np.pi, count - 1):
        d = math.cos(aperture) * axis + math.sin(aperture) * (math.cos(phi) * e1 + math.sin(phi) * e2)
        out.append(d)
    return np.array(out)


@dataclass
class VanishingCertificate:
    certified: bool
    v_o: float
    C: float
    delta: float
    aperture: float
    counterexample: np.ndarray | None = None
    slope: float = 0.0

    def to_dict(self):
        return {"certified": self.certified, "v_o": self.v_o, "C": self.C, "delta": self.delta,
                "aperture": self.aperture, "slope": self.slope,
                "counterexample": None if self.counterexample is None else self.counterexample.tolist()}


def vanishing_order_check(W, v_o, samples=64, rays=5):
    """Test ``h(y) >= C^-1 |y - y0|^v_o`` on cones at sampled boundary points.

    Along each ray the log-log slope of ``h / d^v_o`` over the smallest
    decades is measured; a slope above 0.05 means the ratio decays to zero and
    the offending point is returned as a counterexample.
    """
    P = W.P
    c = P.centroid
    pts = P.boundary_points(max(samples, 2))
    inner = float(P.boundary_distance(c)[0])
    delta = 0.5 * inner
    t = np.logspace(-8, math.log10(delta), 40)
    worst_ratio, worst_slope, worst_point = math.inf, -math.inf, None
    apertures = []
    for y0 in pts:
        axis = c - y0
        axis = axis / np.linalg.norm(axis)
        aperture = math.pi / 6
        while aperture > 1e-3:
            dirs = _cone_rays(P.n, axis, aperture, rays)
            if np.all(P.contains(y0 + delta * dirs, tol=1e-12)):
                break
            aperture /= 2
        apertures.append(aperture)
        for d in _cone_rays(P.n, axis, aperture, rays):
            Y = y0 + t[:, None] * d
            ratio = W.h(Y) / t ** v_o
            if np.any(ratio <= 0):
                slope = math.inf
            else:
                slope = float(np.polyfit(np.log(t[:10]), np.log(ratio[:10]), 1)[0])
            worst_ratio = min(worst_ratio, float(np.min(ratio)))
            if slope > worst_slope:
                worst_slope, worst_point = slope, Y[0]
    certified = worst_slope <= 0.05
    cert = VanishingCertificate(certified, float(v_o), 1.0 / worst_ratio if worst_ratio > 0 else math.inf,
                                delta, float(min(apertures)), None if certified else worst_point,
                                worst_slope)
    if certified:
        W.certificate = cert
    return cert


def _ball_rule(n, radial=24, angular=96):
    """Product rule on the unit ball (points, weights)."""
    t, w = np.polynomial.legendre.leggauss(radial)
    r = (t + 1) / 2
    if n == 1:
        pts = np.concatenate([-r[::-1], r])[:, None]
        wts = np.concatenate([w[::-1], w]) / 2
        return pts, wts
    if n == 2:
        ang = 2 * np.pi * (np.arange(angular) + 0.5) / angular
        d = np.column_stack([np.cos(ang), np.sin(ang)])
        pts = (r[:, None, None] * d[None]).reshape(-1, 2)
        wts = (w / 2 * r)[:, None] * np.full(angular, 2 * np.pi / angular)[None]
        return pts, wts.ravel()
    k = np.arange(angular * 4) + 0.5
    phi = np.arccos(1 - 2 * k / len(k))
    th = np.pi * (1 + 5 ** 0.5) * k
    d = np.column_stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])
    pts = (r[:, None, None] * d[None]).reshape(-1, 3)
    wts = (w / 2 * r ** 2)[:, None] * np.full(len(d), 4 * np.pi / len(d))[None]
    return pts, wts.ravel()


def doubling_check(W, trials=32, seed=0, scale=(0.05, 0.5)):
    """Max over random centered ellipsoids of mass(y0 + E) / mass(y0 + E/2).

    The density is extended by zero outside P. Raises :class:`DoublingMassGap`
    when the half ellipsoid carries no mass.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    P = W.P
    n = P.n
    rng = np.random.default_rng(seed)
    ball_x, ball_w = _ball_rule(n)
    lo, hi = P.vertices.min(0), P.vertices.max(0)
    diam = P.diameter
    worst = 0.0
    for k in range(trials):
        if k % 4 == 3:
            y0 = P.vertices[rng.integers(len(P.vertices))]
        else:
            while True:
                y0 = rng.uniform(lo, hi)
                if P.contains(y0)[0]:
                    break
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        L = diam * np.exp(rng.uniform(math.log(scale[0]), math.log(scale[1]), n))
        M = Q @ np.diag(L)
        det = float(np.prod(L))
        masses = []
        for fac in (1.0, 0.5):
            Y = y0 + fac * ball_x @ M.T
            inside = P.contains(Y, tol=0.0)
            hv = np.where(inside, W.h(np.where(inside[:, None], Y, y0)), 0.0)
            masses.append(math.fsum(ball_w * hv) * det * fac ** n)
        if masses[1] <= 0:
            raise DoublingMassGap("half ellipsoid has zero mass", center=y0, axes=M)
        worst = max(worst, masses[0] / masses[1])
    W.doubling_constant = worst
    return worst

"""Radially symmetric reductions used as independent oracles.

A radial convex ``u(r)`` solves ``det D^2 u = RHS`` iff
``u_rr (u_r / r)^(n-1) = RHS(r, u, u_r)``. Integration starts just off
``r = 0`` from the two-term series ``u = -m + c r^2`` with ``(2c)^n = RHS(0)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .exceptions import InvalidInputError, TargetUnreachable

FORMS = ("eigenvalue", "hemisphere", "gauss", "dual-legendre")


@dataclass
class RadialProblem:
    """Radial ODE specification.

    ``form`` picks the right-hand side:

    * ``eigenvalue``: ``lam (-u)^k``
    * ``hemisphere``: ``(r u_r - u)^(n+2)`` (no multiplier)
    * ``gauss``: ``lam K(u_r) (1 + u_r^2)^((n+2)/2)``
    * ``dual-legendre``: ``lam u^-(n+2)`` (u positive here, used by the probe)

    ``rho`` is the slope reached at the free boundary; ``math.inf`` asks for
    a profile whose slope blows up where it vanishes, at ``radius``.
    """

    n: int
    form: str = "eigenvalue"
    lam: float = 1.0
    k: float = 0.0
    rho: float = 1.0
    K: object = None
    radius: float = 1.0
    rtol: float = 1e-12
    atol: float = 1e-14
    r_max: float = 50.0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInputError("n must be >= 1")
        if self.form not in FORMS:
            raise InvalidInputError(f"form must be one of {FORMS}")
        if not self.rho > 0:
            raise InvalidInputError("rho must be positive")
        if self.lam <= 0:
            raise InvalidInputError("lam must be positive")

    def rhs(self, r, u, ur):
        n = self.n
        if self.form == "eigenvalue":
            return self.lam * max(-u, 0.0) ** self.k
        if self.form == "hemisphere":
            return max(r * ur - u, 0.0) ** (n + 2)
        if self.form == "gauss":
            K = 1.0 if self.K is None else float(self.K(ur))
            return self.lam * K * (1.0 + ur * ur) ** ((n + 2) / 2)
        return self.lam * u ** (-(n + 2))

    def series_c(self, m):
        """Quadratic coefficient at the origin, from ``(2c)^n = RHS(0, -m, 0)``."""
        u0 = m if self.form == "dual-legendre" else -m
        return 0.5 * self.rhs(0.0, u0, 0.0) ** (1.0 / self.n)

    def to_dict(self):
        return {"n": self.n, "form": self.form, "lam": self.lam, "k": self.k,
                "rho": None if math.isinf(self.rho) else self.rho, "radius": self.radius}


def _second(prob, r, u, ur):
    q = ur / r
    return prob.rhs(r, u, ur) / q ** (prob.n - 1) if prob.n > 1 else prob.rhs(r, u, ur)


def _start(prob, m, r0):
    c = prob.series_c(m)
    u0 = m if prob.form == "dual-legendre" else -m
    return u0 + c * r0 * r0, 2 * c * r0


@dataclass
class RadialProfile:
    """Shooting solution: samples of ``(r, u, u_r)`` up to the free boundary ``R``."""

    r: np.ndarray
    u: np.ndarray
    ur: np.ndarray
    R: float
    lam: float
    m: float
    problem: RadialProblem
    dense: object = None
    shots: int = 0
    meta: dict = field(default_factory=dict)

    def __call__(self, r):
        """u at radii r, continued affinely beyond R with the boundary slope."""
        r = np.abs(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        inside = r <= self.R
        if self.dense is not None:
            out[inside] = np.array([self._u_at(x) for x in r[inside]])
        else:
            out[inside] = np.interp(r[inside], self.r, self.u)
        slope = self.ur[-1]
        out[~inside] = self.u[-1] + slope * (r[~inside] - self.R)
        return out

    def _u_at(self, x):
        r0 = self.meta["r0"]
        if x <= r0:
            c = self.problem.series_c(self.m)
            return -self.m + c * x * x
        return float(self.dense(x)[0])

    def slope(self, x):
        r0 = self.meta["r0"]
        if x <= r0:
            return 2 * self.problem.series_c(self.m) * x
        return float(self.dense(x)[1])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "u", "u_r"])
            for row in zip(self.r, self.u, self.ur):
                w.writerow([repr(float(x)) for x in row])

    def to_dict(self):
        return {"R": self.R, "lam": self.lam, "m": self.m, "problem": self.problem.to_dict(),
                "shots": self.shots}


def _integrate(prob, m, r0=1e-6, dense=False):
    """Integrate from the series start until u hits zero or the slope blows up."""
    u0, ur0 = _start(prob, m, r0)

    def fun(r, y):
        return [y[1], _second(prob, r, y[0], y[1])]

    def hit_zero(r, y):
        return y[0]

    hit_zero.terminal = True
    hit_zero.direction = 1

    cap = 1e4 if math.isinf(prob.rho) else max(1e4, 100 * prob.rho)

    def blow_up(r, y):
        return cap - y[1]

    blow_up.terminal = True
    sol = solve_ivp(fun, (r0, prob.r_max), [u0, ur0], method="DOP853", rtol=prob.rtol,
                    atol=prob.atol, events=[hit_zero, blow_up], dense_output=dense)
    return sol


def _mismatch(prob, m):
    sol = _integrate(prob, m)
    if sol.t_events[0].size:
        R = float(sol.t_events[0][0])
        slope = float(sol.y_events[0][0][1])
        if math.isinf(prob.rho):
            return R - prob.radius
        return slope - prob.rho
    if sol.t_events[1].size or sol.status == -1:
        # slope diverges before u reaches zero (a failed step means the same)
        if math.isinf(prob.rho):
            return float(sol.t[-1]) - prob.radius
        return math.inf
    if math.isinf(prob.rho):
        return math.inf  # no blow-up before r_max: the radius overshoots
    return -math.inf if sol.y[0, -1] < 0 else math.inf


def radial_solve(prob, m_bracket=(1e-3, 1e3)):
    """Shoot on ``m = -u(0)`` (``lam`` held fixed) to meet the slope condition.

    Scaling ``u -> A u(r/B)`` maps solutions to solutions with a changed
    multiplier, so ``lam`` and ``m`` cannot both be free; the pair is fixed
    by holding ``lam``. Returns a :class:`RadialProfile`.
    """
    if prob.form == "dual-legendre":
        raise InvalidInputError("the dual form is integrated by dual_radial_probe")
    lo, hi = m_bracket
    grid = np.geomspace(lo, hi, 61)
    vals = []
    for m in grid:
        vals.append(_mismatch(prob, m))
        if len(vals) > 1 and np.sign(vals[-1]) != np.sign(vals[-2]) and np.isfinite(vals[-2]):
            break
    vals = np.array(vals)
    idx = np.flatnonzero(np.sign(vals[1:]) != np.sign(vals[:-1]))
    if not idx.size:
        raise TargetUnreachable(
            f"no radial solution: slope mismatch keeps one sign on m in [{lo}, {hi}]")
    a, b = grid[idx[0]], grid[idx[0] + 1]
    if not np.isfinite(vals[idx[0] + 1]):
        # shrink the bracket onto the finite side
        for _ in range(80):
            mid = math.sqrt(a * b)
            v = _mismatch(prob, mid)
            if np.isfinite(v) and np.sign(v) != np.sign(vals[idx[0]]):
                b = mid
                break
            if np.isfinite(v):
                a = mid
            else:
                b = mid
    shots = [0]

    def fm(m):
        shots[0] += 1
        v = _mismatch(prob, m)
        return v if np.isfinite(v) else math.copysign(1e6, v)

    m = brentq(fm, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return _profile(prob, m, shots[0])


def _profile(prob, m, shots):
    r0 = 1e-6
    sol = _integrate(prob, m, r0, dense=True)
    if sol.t_events[0].size:
        R = float(sol.t_events[0][0])
    elif sol.t_events[1].size or sol.status == -1:
        R = float(sol.t[-1])
    else:
        raise TargetUnreachable("profile neither vanishes nor blows up within r_max")
    r = np.concatenate([[0.0], np.linspace(r0, R, 400)])
    Y = sol.sol(r[1:])
    u = np.concatenate([[-m], Y[0]])
    ur = np.concatenate([[0.0], Y[1]])
    u[-1] = 0.0 if sol.t_events[0].size else u[-1]
    return RadialProfile(r, u, ur, R, prob.lam, m, prob, sol.sol, shots, {"r0": r0})


def ode_residual(profile, r_points, step=1e-3):
    """Max relative residual of the radial ODE at arbitrary radii.

    ``u_rr`` comes from a five-point difference of the dense slope, so the
    check does not reuse the right-hand side evaluated by the integrator.
    """
    prob = profile.problem
    worst = 0.0
    for x in np.atleast_1d(r_points):
        h = min(step, 0.25 * x, 0.25 * (profile.R - x))
        sl = [profile.slope(x + j * h) for j in (-2, -1, 1, 2)]
        urr = (sl[0] - 8 * sl[1] + 8 * sl[2] - sl[3]) / (12 * h)
        ur = profile.slope(x)
        u = profile._u_at(x)
        lhs = urr * (ur / x) ** (prob.n - 1)
        rhs = prob.rhs(x, u, ur)
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    return worst


# ---------------------------------------------------------------------------
# fixed-step oracle


def rk4_shoot(prob, m, h=1e-4, r0=1e-6):
    """Classical RK4 with fixed step ``h``; returns ``(R, slope at R)`` by cubic Hermite root location."""
    steps = int(math.ceil((prob.r_max - r0) / h))
    u, ur = _start(prob, m, r0)
    r = r0

    def F(r, y0, y1):
        return y1, _second(prob, r, y0, y1)

    for _ in range(steps):
        k1 = F(r, u, ur)
        k2 = F(r + h / 2, u + h / 2 * k1[0], ur + h / 2 * k1[1])
        k3 = F(r + h / 2, u + h / 2 * k2[0], ur + h / 2 * k2[1])
        k4 = F(r + h, u + h * k3[0], ur + h * k3[1])
        un = u + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        urn = ur + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if un >= 0:
            # Hermite cubic on [r, r+h] for u, then Newton for its root
            d0, d1 = ur, urn
            s = -u / (un - u)
            for _ in range(30):
                h00 = 2 * s**3 - 3 * s**2 + 1
                h10 = s**3 - 2 * s**2 + s
                h01 = -2 * s**3 + 3 * s**2
                h11 = s**3 - s**2
                val = h00 * u + h10 * h * d0 + h01 * un + h11 * h * d1
                der = ((6 * s**2 - 6 * s) * u + (3 * s**2 - 4 * s + 1) * h * d0
                       + (-6 * s**2 + 6 * s) * un + (3 * s**2 - 2 * s) * h * d1) / h
                s -= val / der / h
            # slope: linear-in-u_r' interpolation is second order; use the ODE-consistent quadratic
            a2 = _second(prob, r, u, ur)
            b2 = _second(prob, r + h, un, urn)
            t = s * h
            slope = ur + a2 * t + (b2 - a2) * t * t / (2 * h)
            return r + t, slope
        r, u, ur = r + h, un, urn
    raise TargetUnreachable("fixed-step integration did not reach the free boundary")


def rk4_radial_solve(prob, m_bracket, h=1e-4):
    """Oracle shooting: fixed-step RK4 inside a bracketing root finder. Returns ``(R, lam, m)``."""

    def g(m):
        return rk4_shoot(prob, m, h)[1] - prob.rho

    m = brentq(g, *m_bracket, xtol=1e-14, rtol=1e-14)
    return rk4_shoot(prob, m, h)[0], prob.lam, m


# ---------------------------------------------------------------------------
# closed-form checks


def hemisphere_residual(a, n, r):
    """Max of ``|LHS - RHS|`` for ``u = -a sqrt(1 - r^2)`` in the hemisphere ODE.

    Uses ``u_r = a r / s``, ``u_rr = a / s^3`` and ``r u_r - u = a / s`` with
    ``s = sqrt(1 - r^2)``.
    """
    if a <= 0:
        raise InvalidInputError("a must be positive")
    r = np.asarray(r, dtype=float)
    if np.any((r <= 0) | (r >= 1)):
        raise InvalidInputError("radii must lie in (0, 1)")
    s = np.sqrt(1 - r * r)
    ur = a * r / s
    urr = a / s**3
    lhs = urr * (ur / r) ** (n - 1)
    rhs = (r * ur - (-a * s)) ** (n + 2)
    return float(np.max(np.abs(lhs - rhs)))


def hemisphere_residual_closed_form(a, n, r):
    r = np.asarray(r, dtype=float)
    return float(np.max(np.abs(a**n - a ** (n + 2)) * (1 - r * r) ** (-(n + 2) / 2)))


@dataclass
class ProbeRow:
    m: float
    v_star: float
    v1: float
    blew_up: bool


def dual_radial_probe(n, lam, m_grid, rtol=1e-12):
    """Integrate ``det D^2 v = lam v^-(n+2)`` radially from ``v(0) = m`` and report ``v'(1) - v(1)``.

    The boundary condition asks for ``v'(1) - v(1) = 0``; the table shows how
    close each starting height gets.
    """
    m_grid = np.asarray(m_grid, dtype=float)
    if np.any(m_grid <= 0) or np.any(np.diff(m_grid) >= 0):
        raise InvalidInputError("m-grid must be positive and strictly decreasing")
    prob = RadialProblem(n, "dual-legendre", lam=lam, rho=1.0, rtol=rtol)
    rows = []
    for m in m_grid:
        r0 = 1e-6
        v0, vr0 = _start(prob, m, r0)
        sol = solve_ivp(lambda r, y: [y[1], _second(prob, r, y[0], y[1])], (r0, 1.0), [v0, vr0],
                        method="DOP853", rtol=rtol, atol=1e-14)
        if sol.status != 0 or sol.t[-1] < 1.0:
            rows.append(ProbeRow(float(m), math.nan, math.nan, True))
            continue
        v1, vr1 = sol.y[0, -1], sol.y[1, -1]
        rows.append(ProbeRow(float(m), float(vr1 - v1), float(v1), False))
    return rows


def probe_is_monotone(rows):
    """True if ``v'(1) - v(1)`` stays negative and increases toward 0 as m decreases."""
    vals = np.array([r.v_star for r in rows if not r.blew_up])
    return bool(vals.size >= 2 and np.all(vals < 0) and np.all(np.diff(vals) > 0))


def probe_to_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "v_star_1", "v_1", "blew_up"])
        for r in rows:
            w.writerow([repr(r.m), repr(r.v_star), repr(r.v1), int(r.blew_up)])

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbma.convex_core import PiecewiseAffineConvex, Polytope
from fbma.exceptions import EmptyFreeBoundaryError
from fbma.functionals import (
    LandscapeParams,
    energy_and_gradient,
    ehat_landscape,
    functional_I,
    functional_J,
)
from fbma.solver import place_nodes
from fbma.structure import StructuralPair, WeightedDomain

PAIRS = [StructuralPair.reconstruction(0.0), StructuralPair.reconstruction(1.0),
         StructuralPair.exponential(1.0), None]  # None: transport pair built for the dimension


def _domain(n):
    P = Polytope.interval(-1.0, 1.3) if n == 1 else Polytope.regular_polygon(5, 1.0)
    return WeightedDomain(P)


def _data(seed, n, N=None):
    """Strictly convex node data: every node sits on the envelope."""
    rng = np.random.default_rng(seed)
    W = _domain(n)
    nodes = place_nodes(W.P, N or (12 if n == 1 else 25), "lattice", 0)
    c = rng.uniform(0.3, 1.5) + rng.uniform(0.3, 2.0) * np.sum(nodes**2, axis=1)
    c = c + 0.01 * rng.uniform(-1, 1, len(c))
    return W, PiecewiseAffineConvex(nodes, c, merge=False)


def _pair(i, n):
    p = PAIRS[i % len(PAIRS)]
    return p if p is not None else StructuralPair.transport(n, 0.0, 2.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.sampled_from([1, 2]), which=st.integers(0, 3),
       Lambda=st.floats(0.5, 4.0))
def test_gradient_matches_finite_differences(seed, n, which, Lambda):
    W, f = _data(seed, n)
    pair = _pair(which, n)
    rep = energy_and_gradient(f, pair, W, Lambda)
    eps = 1e-6
    fd = np.empty(f.N)
    for i in range(f.N):
        e = np.zeros(f.N)
        e[i] = eps
        hi = energy_and_gradient(f.with_values(f.values + e), pair, W, Lambda, with_gradient=False).E
        lo = energy_and_gradient(f.with_values(f.values - e), pair, W, Lambda, with_gradient=False).E
        fd[i] = (hi - lo) / (2 * eps)
    assert np.linalg.norm(rep.gradient - fd) <= 1e-4 * np.linalg.norm(rep.gradient)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.sampled_from([1, 2]), which=st.integers(0, 3))
def test_masses_sum_to_one_and_J_mean_value_bounds(seed, n, which):
    W, f = _data(seed, n)
    pair = _pair(which, n)
    rep = energy_and_gradient(f, pair, W, 2.0)
    assert abs(math.fsum(rep.mu) - 1.0) <= 1e-10
    assert abs(math.fsum(rep.nu) - 1.0) <= 1e-10
    env = f.node_envelope_values()
    assert env.min() - 1e-12 <= rep.J <= env.max() + 1e-12


def _quadratic(nodes, a, l, b):
    return a + nodes @ l + b * np.sum(nodes**2, axis=1)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.sampled_from([1, 2]), which=st.integers(0, 2))
def test_energy_midpoint_convexity(seed, n, which):
    # quadratic data share one envelope subdivision, so v is linear along the segment
    rng = np.random.default_rng(seed)
    W = _domain(n)
    nodes = place_nodes(W.P, 12 if n == 1 else 30, "sunflower" if n == 2 else "lattice", 0)
    pair = PAIRS[which]
    vs = []
    for _ in range(2):
        c = _quadratic(nodes, rng.uniform(0.2, 1.5), rng.uniform(-0.3, 0.3, n), rng.uniform(0.2, 2.0))
        vs.append(c)
    E = [energy_and_gradient(PiecewiseAffineConvex(nodes, c, merge=False), pair, W, 1.5,
                             with_gradient=False).E for c in (vs[0], 0.5 * (vs[0] + vs[1]), vs[1])]
    assert E[1] <= 0.5 * (E[0] + E[2]) + 1e-6


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.sampled_from([1, 2]), t=st.floats(0.0, 2.0))
def test_J_shift_and_monotonicity(seed, n, t):
    W, f = _data(seed, n)
    pair = StructuralPair.reconstruction(0.0)
    J0 = functional_J(f, pair, W)
    assert functional_J(f.shifted(t), pair, W) == pytest.approx(J0 + t, abs=1e-12)
    tp = StructuralPair.transport(n, 0.0, 2.0)
    assert functional_J(f.shifted(t), tp, W) >= functional_J(f, tp, W) - 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.sampled_from([1, 2]))
def test_I_translation_invariance(seed, n):
    W, f = _data(seed, n)
    pair = StructuralPair.exponential(1.0)
    x0 = np.random.default_rng(seed).uniform(-0.1, 0.1, n)
    assert functional_I(f.tilted(x0), pair) == pytest.approx(functional_I(f, pair), rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.sampled_from([1, 2]))
def test_translated_G_of_J_is_concave_for_decreasing_g(seed, n):
    W, f = _data(seed, n)
    pair = StructuralPair.transport(n, 0.0, 2.0)
    rng = np.random.default_rng(seed)
    d = rng.normal(size=n)
    d *= 0.05 / np.linalg.norm(d)
    vals = [float(pair.G(functional_J(f.tilted(s * d), pair, W))) for s in (-1.0, 0.0, 1.0)]
    assert vals[0] - 2 * vals[1] + vals[2] <= 1e-10 * max(1.0, abs(vals[1]))


def test_J_equals_mean_for_linear_G():
    p = np.linspace(-1, 1, 5)[:, None]
    f = PiecewiseAffineConvex(p, 1.0 + p[:, 0] ** 2)
    W = WeightedDomain(Polytope.interval(-1, 1))
    # the envelope interpolates linearly, so its mean is the trapezoid sum over length 2
    trap = 0.5 * (0.5 * 2.0 + 1.25 + 1.0 + 1.25 + 0.5 * 2.0) / 2
    assert functional_J(f, StructuralPair.reconstruction(0.0), W) == pytest.approx(trap, rel=1e-12)


def test_I_of_quadratic_primal():
    # v = (1 + y^2)/2 on [-1, 1] gives u = (x^2 - 1)/2 for |x| <= 1, so I = int (1 - x^2)/2 = 2/3
    p = np.linspace(-1, 1, 2001)[:, None]
    f = PiecewiseAffineConvex(p, 0.5 * (1 + p[:, 0] ** 2))
    assert functional_I(f, StructuralPair.reconstruction(0.0)) == pytest.approx(2 / 3, rel=1e-6)


def test_empty_free_set_raises():
    p = np.array([[-1.0], [1.0]])
    with pytest.raises(EmptyFreeBoundaryError):
        functional_I(PiecewiseAffineConvex(p, np.array([-1.0, -1.0])), StructuralPair.reconstruction(0.0))


def test_singular_G_reports_divergent_J():
    p = np.linspace(-1, 1, 5)[:, None]
    f = PiecewiseAffineConvex(p, np.abs(p[:, 0]))
    J = functional_J(f, StructuralPair.borderline(1), WeightedDomain(Polytope.interval(-1, 1)))
    assert getattr(J, "divergent", False)
    assert float(J) == 0.0


def test_landscape_has_two_component_level():
    params = LandscapeParams(n=4, nu=5.0, Lambda=1.0, rho_minus=1.0, rho_plus=1.0, C=1.0)
    land = ehat_landscape(params, StructuralPair.landscape_demo(4), np.logspace(-3, 2, 60), np.logspace(-3, 8, 60))
    A = land.find_two_component_level()
    assert A is not None
    assert sorted(land.components(A)) == ["boundary", "bounded"]

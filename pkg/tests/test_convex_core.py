import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from fbma.convex_core import (
    PiecewiseAffineConvex,
    Polytope,
    activity_cells,
    h_barycenter,
    john_containment,
    john_ellipsoid,
    legendre_transform,
    lower_envelope,
    negative_set,
    polar_dual,
    simplex_rule,
    support_function,
)
from fbma.exceptions import DomainError, EmptyFreeBoundaryError, InvalidInputError
from fbma.structure import WeightedDomain


def random_function(seed, n, N=30):
    rng = np.random.default_rng(seed)
    if n == 1:
        nodes = np.sort(rng.uniform(-1, 1, N))[:, None]
        nodes[0, 0], nodes[-1, 0] = -1.0, 1.0
    else:
        ang = np.linspace(0, 2 * np.pi, 9)[:-1]
        nodes = np.vstack([np.column_stack([np.cos(ang), np.sin(ang)]), rng.uniform(-0.6, 0.6, (N, 2))])
    values = 0.5 + np.sum(nodes**2, axis=1) + 0.3 * rng.uniform(-1, 1, len(nodes))
    return PiecewiseAffineConvex(nodes, values)


# polytopes


def test_interval_and_box_geometry():
    P = Polytope.interval(-1.0, 3.0)
    assert P.volume == pytest.approx(4.0)
    assert P.centroid == pytest.approx([1.0])
    B = Polytope.box([-1, -2], [1, 2])
    assert B.volume == pytest.approx(8.0)
    assert B.diameter == pytest.approx(2 * math.sqrt(5))
    assert B.contains(np.array([[0.0, 0.0], [2.0, 0.0]])).tolist() == [True, False]


def test_regular_polygon_area():
    P = Polytope.regular_polygon(6, 1.0)
    assert P.volume == pytest.approx(1.5 * math.sqrt(3))


def test_degenerate_vertices_rejected():
    with pytest.raises((DomainError, InvalidInputError)):
        Polytope(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))


def test_support_function_of_box():
    B = Polytope.box([-1, -1], [1, 1])
    assert support_function(B, np.array([1.0, 1.0])) == pytest.approx(2.0)


@pytest.mark.parametrize("P", [Polytope.regular_polygon(5, 1.3, 0.2), Polytope.box([-1, -0.5], [2, 1])])
def test_polar_involution(P):
    Q = polar_dual(polar_dual(P))
    A = np.array(sorted(map(tuple, np.round(P.vertices, 9))))
    B = np.array(sorted(map(tuple, np.round(Q.vertices, 9))))
    assert A.shape == B.shape
    assert np.max(np.abs(A - B)) < 1e-10


def test_polar_needs_interior_origin():
    with pytest.raises(DomainError):
        polar_dual(Polytope.box([0.5, 0.5], [1, 1]))


@pytest.mark.parametrize("P", [Polytope.box([-1, -0.3], [2, 1]), Polytope.regular_polygon(5, 1.0),
                               Polytope.interval(-2.0, 5.0)])
def test_john_containments(P):
    E = john_ellipsoid(P)
    inner, outer = john_containment(P, E, directions=128)
    assert inner <= 1e-9
    assert outer <= 1e-9


def test_john_of_square_is_inscribed_disc():
    E = john_ellipsoid(Polytope.box([-1, -1], [1, 1]))
    assert E.lengths == pytest.approx([1.0, 1.0], rel=1e-4)
    assert E.center == pytest.approx([0.0, 0.0], abs=1e-5)


# quadrature


@pytest.mark.parametrize("n", [1, 2, 3])
def test_simplex_rule_integrates_quadratics(n):
    bary, w = simplex_rule(n, order=4, level=0)
    assert math.fsum(w) == pytest.approx(1.0, abs=1e-13)
    # reference simplex with vertices 0, e_1..e_n, volume 1/n!; int x_1^2 = 2/(n+2)!
    V = np.vstack([np.zeros(n), np.eye(n)])
    X = bary @ V
    got = math.fsum(w * X[:, 0] ** 2) / math.factorial(n)
    assert got == pytest.approx(2 / math.factorial(n + 2), rel=1e-12)


def test_h_barycenter_of_centered_square_vanishes():
    W = WeightedDomain(Polytope.box([-1, -1], [1, 1]))
    assert np.max(np.abs(h_barycenter(W))) < 1e-12


def test_h_barycenter_of_shifted_interval():
    W = WeightedDomain(Polytope.interval(0.0, 2.0))
    assert h_barycenter(W) == pytest.approx([1.0], abs=1e-12)


# dual representation


def test_envelope_of_convex_data_keeps_every_node():
    p = np.linspace(-1, 1, 7)[:, None]
    f = PiecewiseAffineConvex(p, p[:, 0] ** 2 + 1)
    assert f.is_canonical
    assert np.allclose(f.node_envelope_values(), f.values)


def test_canonicalize_lowers_inactive_nodes_only():
    p = np.array([[-1.0], [0.0], [1.0]])
    f = PiecewiseAffineConvex(p, np.array([1.0, 5.0, 1.0]), merge=False)
    g = f.canonicalize()
    assert g.values.tolist() == [1.0, 1.0, 1.0]
    X = np.linspace(-3, 3, 13)[:, None]
    assert np.allclose(f.primal(X), g.primal(X))


def test_lower_envelope_slopes_reproduce_values():
    f = random_function(3, 2)
    env = lower_envelope(f.nodes, f.values)
    vals = np.max(f.nodes @ env.slopes.T + env.offsets, axis=1)
    assert np.all(vals <= f.values + 1e-12)
    assert math.fsum(env.volumes) == pytest.approx(Polytope(f.nodes).volume, rel=1e-12)


def test_dual_is_infinite_outside_hull():
    f = random_function(0, 1)
    assert np.isinf(f.dual(np.array([[1.5]])))[0]


def test_negative_set_of_quadratic_data():
    p = np.linspace(-1, 1, 201)[:, None]
    f = PiecewiseAffineConvex(p, 0.5 * (1 + p[:, 0] ** 2))
    om = negative_set(f)
    assert om.vertices.min() == pytest.approx(-1.0, abs=1e-3)
    assert om.vertices.max() == pytest.approx(1.0, abs=1e-3)


def test_negative_set_empty_raises():
    p = np.array([[-1.0], [1.0]])
    with pytest.raises(EmptyFreeBoundaryError):
        negative_set(PiecewiseAffineConvex(p, np.array([-1.0, -1.0])))


def _inf_primal(f):
    n = f.n
    res = linprog(np.r_[np.zeros(n), 1.0], A_ub=np.column_stack([f.nodes, -np.ones(f.N)]), b_ub=f.values,
                  bounds=[(None, None)] * (n + 1), method="highs")
    return res.fun


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.sampled_from([1, 2]))
def test_legendre_involution(seed, n):
    f = random_function(seed, n)
    g = legendre_transform(f)
    active = np.abs(f.node_envelope_values() - f.values) <= 1e-12
    back = g.primal(f.nodes)
    env = f.node_envelope_values()
    assert np.max(np.abs(back[active] - env[active])) <= 1e-12 * (1 + np.max(np.abs(env)))
    rng = np.random.default_rng(seed)
    Y = rng.uniform(-0.5, 0.5, (50, n))
    assert np.all(g.primal(Y) <= f.dual(Y) + 1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.sampled_from([1, 2]))
def test_duality_identities(seed, n):
    f = random_function(seed, n)
    v0 = float(f.dual(np.zeros((1, n)))[0])
    assert v0 == pytest.approx(-_inf_primal(f), abs=1e-12)
    assert float(f.primal(np.zeros((1, n)))[0]) == pytest.approx(-np.min(f.node_envelope_values()), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.sampled_from([1, 2]),
       shift=st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_translation_covariance(seed, n, shift):
    f = random_function(seed, n)
    x0 = np.asarray(shift[:n])
    X = np.random.default_rng(seed).uniform(-3, 3, (40, n))
    assert np.array_equal(f.tilted(x0).primal(X), f.primal(X + x0)) or np.allclose(
        f.tilted(x0).primal(X), f.primal(X + x0), rtol=0, atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.sampled_from([1, 2]))
def test_activity_cells_partition_box(seed, n):
    f = random_function(seed, n)
    lo, hi = -np.full(n, 4.0), np.full(n, 4.0)
    cells = activity_cells(f, (lo, hi))
    total = math.fsum(c.volume for c in cells)
    assert total == pytest.approx(8.0**n, rel=1e-8)
    rng = np.random.default_rng(seed)
    for c in cells[:5]:
        if n == 1 or len(c.vertices) < 3:
            continue
        # midpoints of random vertex pairs stay in the cell: u is attained by the same piece
        i, j = rng.integers(0, len(c.vertices), 2)
        mid = 0.5 * (c.vertices[i] + c.vertices[j])
        own = f.nodes[c.index] @ mid - f.values[c.index]
        assert own >= f.primal(mid[None])[0] - 1e-10


def test_activity_cells_need_box():
    with pytest.raises(InvalidInputError):
        activity_cells(random_function(0, 1))

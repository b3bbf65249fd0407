import warnings

import numpy as np
import pytest

from fbma.apps import aligned_distance
from fbma.convex_core import Polytope, john_ellipsoid
from fbma.exceptions import HypothesisViolation, InvalidInputError
from fbma.functionals import energy_and_gradient
from fbma.normalize import translation_residual
from fbma.solver import (
    CONVERGED,
    DIVERGED,
    NORM_FAIL,
    SolveConfig,
    el_residual,
    enemy_start,
    gauge,
    minimize_energy,
    ot_optimality_check,
    place_nodes,
)
from fbma.structure import StructuralPair, WeightedDomain


@pytest.fixture(scope="module")
def recon_1d():
    W = WeightedDomain(Polytope.interval(-1.0, 1.0))
    pair = StructuralPair.reconstruction(0.0)
    return W, pair, minimize_energy(SolveConfig(Lambda=3.0, N=101), pair, W)


@pytest.fixture(scope="module")
def transport_2d():
    W = WeightedDomain(Polytope.regular_polygon(6, 1.0))
    pair = StructuralPair.transport(2, 0.0, 2.0)
    return W, pair, minimize_energy(SolveConfig(Lambda=2.0, N=60), pair, W)


# node placement and starting points


@pytest.mark.parametrize("P, rule", [
    (Polytope.interval(-1, 2), "lattice"),
    (Polytope.regular_polygon(5), "lattice"),
    (Polytope.regular_polygon(5), "sunflower"),
    (Polytope.ball(2), "lattice"),
    (Polytope.ball(2), "sunflower"),
    (Polytope.box([-1, -1, -1], [1, 1, 1]), "lattice"),
])
def test_place_nodes_covers_P(P, rule):
    nodes = place_nodes(P, 80, rule, seed=3)
    assert np.all(P.contains(nodes, tol=1e-9))
    # every vertex of P is a node, so conv(nodes) = P
    d = np.min(np.linalg.norm(P.vertices[:, None, :] - nodes[None], axis=2), axis=1)
    assert np.max(d) <= 1e-12
    assert np.array_equal(nodes, place_nodes(P, 80, rule, seed=3))


def test_gauge_of_square():
    P = Polytope.box([-1, -1], [1, 1])
    Y = np.array([[0.5, 0.0], [0.5, -1.0], [0.0, 0.0]])
    assert gauge(P, Y) == pytest.approx([0.5, 1.0, 0.0])


def test_enemy_start_shape():
    P = Polytope.interval(-1.0, 1.0)
    nodes = place_nodes(P, 21)
    c = enemy_start(P, nodes, delta=0.2, C=3.0)
    assert c.min() == pytest.approx(0.2)
    assert c.max() == pytest.approx(3.0)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        SolveConfig(Lambda=-1.0)
    with pytest.raises(InvalidInputError):
        SolveConfig(grad_tol=0.0)


# converged solves


def test_recon_1d_converges(recon_1d):
    W, pair, res = recon_1d
    assert res.status == CONVERGED
    assert res.report.scaled_grad_norm <= 1e-7


def test_energy_history_is_monotone(recon_1d, transport_2d):
    for _, _, res in (recon_1d, transport_2d):
        E = np.array([h["E"] for h in res.history])
        assert np.all(np.diff(E) <= 1e-12 * (1 + np.abs(E[:-1])))


def test_mass_balance_and_el_residual(recon_1d, transport_2d):
    for W, pair, res in (recon_1d, transport_2d):
        el = el_residual(res, pair, W)
        assert abs(el.mu_sum - 1.0) <= 1e-10
        assert abs(el.nu_sum - 1.0) <= 1e-10
        assert el.total <= 1e-6
        assert el.boundary_violations == []


def test_second_boundary_condition(recon_1d, transport_2d):
    for W, _, res in (recon_1d, transport_2d):
        env = res.f.envelope()
        assert env.active.all()
        # conv(active nodes) is P exactly since P's vertices are nodes
        act = res.f.nodes[env.active]
        assert np.max(np.min(np.linalg.norm(W.P.vertices[:, None] - act[None], axis=2), axis=1)) <= 1e-12


def test_transport_solution_is_translation_critical(transport_2d):
    W, pair, res = transport_2d
    assert res.status == CONVERGED
    assert translation_residual(res.f, pair, W)[1] <= 1e-8


def test_john_balance_for_linear_G():
    W = WeightedDomain(Polytope.regular_polygon(6, 1.0))
    pair = StructuralPair.reconstruction(0.0)
    res = minimize_energy(SolveConfig(Lambda=1.0, N=60), pair, W)
    assert res.converged
    E = john_ellipsoid(res.omega)
    # the log-det program is solved to about 1e-6 relative accuracy
    assert np.linalg.norm(E.center) <= 1e-5 * res.omega.diameter
    env = res.f.node_envelope_values()
    v0 = float(res.f.dual(np.zeros((1, 2)))[0])
    assert env.min() >= v0 / (2 + 2) - 1e-9


def test_uniqueness_up_to_translation(recon_1d):
    W, pair, res = recon_1d
    other = minimize_energy(SolveConfig(Lambda=3.0, N=101, starts=2, seed=7), pair, W)
    assert other.converged
    X = np.linspace(-1.5, 1.5, 301)[:, None]
    assert aligned_distance(res.f.primal, other.f.primal, X)[0] <= 5e-2


def test_nonzero_barycenter_is_refused():
    W = WeightedDomain(Polytope.interval(0.0, 2.0))
    with pytest.raises(HypothesisViolation):
        minimize_energy(SolveConfig(N=20), StructuralPair.reconstruction(0.0), W)


def test_ot_optimality(recon_1d):
    W, pair, res = recon_1d
    chk = ot_optimality_check(res, 10, pair, W, seed=2)
    assert chk.worst_margin >= -1e-8


def test_borderline_pair_diverges():
    W = WeightedDomain(Polytope.interval(-1.0, 1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize_energy(SolveConfig(N=50, starts=2), StructuralPair.borderline(1), W)
    assert res.classification.label == "none"
    assert all(s["status"] in (DIVERGED, NORM_FAIL) for s in res.starts)


def test_structure_requirement_raises():
    W = WeightedDomain(Polytope.interval(-1.0, 1.0))
    with pytest.raises(HypothesisViolation):
        minimize_energy(SolveConfig(N=20, require_structure=True), StructuralPair.borderline(1), W)


def test_lambda_continuation_reports_stages():
    W = WeightedDomain(Polytope.interval(-1.0, 1.0))
    pair = StructuralPair.exponential(1.0)
    res = minimize_energy(SolveConfig(N=41, schedule=[4.0, 3.0]), pair, W)
    assert [s["Lambda"] for s in res.starts] == [4.0, 3.0]
    assert res.converged
    assert "last successful Lambda 3.0" in res.message


def test_result_serializes(recon_1d):
    d = recon_1d[2].to_dict()
    assert d["status"] == CONVERGED
    assert d["iterations"] == len(recon_1d[2].history)


def test_gradient_at_solution_is_small_for_every_node(recon_1d):
    W, pair, res = recon_1d
    rep = energy_and_gradient(res.f, pair, W, 3.0)
    assert np.max(np.abs(rep.gradient)) <= 1e-7

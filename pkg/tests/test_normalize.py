import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbma.convex_core import PiecewiseAffineConvex, Polytope, negative_set
from fbma.exceptions import TargetUnreachable
from fbma.functionals import functional_I, functional_J
from fbma.normalize import (
    affine_replacement,
    boundary_contact_replacement,
    normalize_translation,
    translation_residual,
)
from fbma.solver import place_nodes
from fbma.structure import StructuralPair, WeightedDomain


def _setup(seed, n):
    rng = np.random.default_rng(seed)
    P = Polytope.interval(-1.0, 1.5) if n == 1 else Polytope.regular_polygon(6, 1.0, 0.1)
    W = WeightedDomain(P)
    nodes = place_nodes(P, 15 if n == 1 else 40, "lattice", 0)
    tilt = rng.uniform(-0.3, 0.3, n)
    c = rng.uniform(0.5, 1.0) + rng.uniform(0.5, 1.5) * np.sum(nodes**2, axis=1) + nodes @ tilt
    return W, PiecewiseAffineConvex(nodes, c, merge=False)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.sampled_from([1, 2]))
def test_translation_normalization_reaches_tolerance(seed, n):
    W, f = _setup(seed, n)
    pair = StructuralPair.transport(n, 0.0, 2.0)
    g, res = normalize_translation(f, pair, W, tol=1e-10)
    abs_res, rel_res = translation_residual(g, pair, W)
    assert rel_res <= 1e-10
    assert res.relative_residual == pytest.approx(rel_res, abs=1e-12)
    # the ascent path of G(J) never decreases
    path = np.asarray(res.path)
    assert np.all(np.diff(path) >= -1e-12 * (1 + np.abs(path[:-1])))


def test_normalization_is_idempotent():
    W, f = _setup(7, 2)
    pair = StructuralPair.transport(2, 1.0, 3.0)
    g, _ = normalize_translation(f, pair, W)
    h, res = normalize_translation(g, pair, W)
    assert np.linalg.norm(res.x_star) <= 1e-8


def test_boundary_contact_replacement_keeps_free_set():
    W, f = _setup(3, 2)
    f = f.shifted(0.05 - f.values.min())  # a small free set that only some cells reach
    g = boundary_contact_replacement(f, StructuralPair.reconstruction(0.0), W)
    a, b = negative_set(f), negative_set(g)
    assert np.allclose(np.sort(a.vertices, axis=0), np.sort(b.vertices, axis=0), atol=1e-12)
    pair = StructuralPair.reconstruction(0.0)
    assert functional_I(g, pair) == pytest.approx(functional_I(f, pair), rel=1e-12)
    assert np.all(g.values <= f.values + 1e-12)
    assert np.any(g.values < f.values - 1e-9)


@pytest.mark.parametrize("n", [1, 2])
def test_affine_replacement_J_target_is_monotone(n):
    W, f = _setup(11, n)
    pair = StructuralPair.transport(n, 0.0, 2.0)
    J0 = functional_J(f, pair, W)
    ts = []
    for target in J0 * np.array([1.1, 1.5, 2.0, 3.0]):
        g, t, _ = affine_replacement(f, "J", float(target), pair, W)
        assert functional_J(g, pair, W) == pytest.approx(target, rel=1e-8)
        ts.append(t)
    assert np.all(np.diff(ts) > 0)


def test_affine_replacement_I_target():
    W, f = _setup(5, 1)
    pair = StructuralPair.reconstruction(0.0)
    I0 = functional_I(f, pair)
    g, t, _ = affine_replacement(f, "I", 2 * I0, pair, W)
    assert functional_I(g, pair) == pytest.approx(2 * I0, rel=1e-8)
    assert t > 0  # raising the intercepts lowers u and enlarges I


def test_affine_replacement_rejects_nonpositive_target():
    W, f = _setup(5, 1)
    with pytest.raises(TargetUnreachable):
        affine_replacement(f, "J", -1.0, StructuralPair.reconstruction(0.0), W)

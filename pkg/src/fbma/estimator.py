"""scikit-learn style facade over the solver."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .convex_core import Polytope
from .solver import SolveConfig, minimize_energy
from .structure import StructuralPair, WeightedDomain


class FreeBoundarySolver(BaseEstimator):
    """Fit the free boundary problem whose gradient image is the hull of the given points.

    ``fit(X)`` takes the vertices of P (shape ``(m, n)``, or a 1-D array of
    interval endpoints). ``predict`` evaluates u, ``transform`` evaluates its
    Legendre dual v, and ``score`` returns minus the energy.
    """

    def __init__(self, pair="reconstruction", pair_params=None, Lambda=1.0, N=100, placement="lattice",
                 density_alpha=0.0, grad_tol=1e-7, max_iter=2000, starts=1, seed=0, refinement_check=True):
        self.pair = pair
        self.pair_params = pair_params
        self.Lambda = Lambda
        self.N = N
        self.placement = placement
        self.density_alpha = density_alpha
        self.grad_tol = grad_tol
        self.max_iter = max_iter
        self.starts = starts
        self.seed = seed
        self.refinement_check = refinement_check

    def _pair(self, n):
        params = dict(self.pair_params or {})
        if isinstance(self.pair, StructuralPair):
            return self.pair
        if self.pair == "reconstruction":
            return StructuralPair.reconstruction(params.get("k", 0.0))
        if self.pair == "exponential":
            return StructuralPair.exponential(params.get("a", 1.0))
        if self.pair == "transport":
            return StructuralPair.transport(n, params.get("alpha", 0.0), params.get("beta", 2.0))
        if self.pair == "borderline":
            return StructuralPair.borderline(n)
        raise ValueError(f"unknown pair {self.pair!r}")

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        P = Polytope(X)
        W = (WeightedDomain.distance_power(P, self.density_alpha) if self.density_alpha > 0
             else WeightedDomain(P))
        cfg = SolveConfig(Lambda=self.Lambda, N=self.N, placement=self.placement, grad_tol=self.grad_tol,
                          max_iter=self.max_iter, starts=self.starts, seed=self.seed,
                          refinement_check=self.refinement_check)
        self.pair_ = self._pair(P.n)
        self.domain_ = W
        self.result_ = minimize_energy(cfg, self.pair_, W)
        self.function_ = self.result_.f
        self.omega_ = self.result_.omega
        self.lambda_ = self.result_.report.lam if self.result_.report is not None else float("nan")
        self.status_ = self.result_.status
        self.n_features_in_ = P.n
        return self

    def _check(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("call fit first")

    def predict(self, X):
        """u at points X of the primal space."""
        self._check()
        return self.function_.primal(np.atleast_2d(np.asarray(X, dtype=float)).reshape(-1, self.n_features_in_))

    def transform(self, Y):
        """v at points Y of P (``+inf`` outside)."""
        self._check()
        return self.function_.dual(np.atleast_2d(np.asarray(Y, dtype=float)).reshape(-1, self.n_features_in_))

    def score(self, X=None, y=None):
        self._check()
        return -self.result_.report.E

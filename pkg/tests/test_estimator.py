import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fbma.estimator import FreeBoundarySolver


def test_params_round_trip():
    est = FreeBoundarySolver(pair="exponential", pair_params={"a": 2.0}, Lambda=4.0, N=30)
    params = est.get_params()
    assert params["Lambda"] == 4.0 and params["pair_params"] == {"a": 2.0}
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(N=50)
    assert est.N == 50


def test_fit_predict_transform():
    est = FreeBoundarySolver(Lambda=3.0, N=51).fit(np.array([-1.0, 1.0]))
    assert est.status_ == "converged"
    assert est.n_features_in_ == 1
    u = est.predict(np.array([[0.0], [5.0]]))
    assert u[0] < 0 < u[1]
    v = est.transform(np.array([[0.0], [2.0]]))
    assert np.isfinite(v[0]) and np.isinf(v[1])
    assert np.isfinite(est.score())
    assert est.lambda_ > 0


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        FreeBoundarySolver().predict(np.zeros((1, 1)))


def test_unknown_pair():
    with pytest.raises(ValueError):
        FreeBoundarySolver(pair="nope", N=10).fit(np.array([-1.0, 1.0]))

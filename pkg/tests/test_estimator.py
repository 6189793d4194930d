import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from skewtmix import SkewTMixture, SkewTParams, mst_sample


@pytest.fixture(scope="module")
def data():
    c1 = SkewTParams([0.0, 0.0], [[1.0, 0.2], [0.2, 1.0]], [1.5, 0.8], 6.0)
    c2 = SkewTParams([6.0, 7.0], [[1.0, -0.3], [-0.3, 2.0]], [-1.0, 1.5], 9.0)
    X = np.vstack([mst_sample(c1, 200, seed=1), mst_sample(c2, 150, seed=2)])
    y = np.array([0] * 200 + [1] * 150)
    return X, y


class TestEstimatorApi:
    def test_get_set_params_roundtrip(self):
        est = SkewTMixture(n_components=3, tol=1e-5, equal_nu=True)
        params = est.get_params()
        assert params["n_components"] == 3
        assert params["equal_nu"] is True
        est2 = SkewTMixture().set_params(**params)
        assert est2.n_components == 3

    def test_clone(self):
        est = SkewTMixture(n_components=2, random_state=3)
        c = clone(est)
        assert c.n_components == 2 and c.random_state == 3

    def test_not_fitted_error(self):
        with pytest.raises(NotFittedError):
            SkewTMixture().predict(np.zeros((3, 2)))

    def test_fit_predict(self, data):
        X, y = data
        est = SkewTMixture(n_components=2, max_iter=500, random_state=0).fit(X)
        assert est.converged_
        labels = est.predict(X)
        agree = max(np.mean(labels == y), np.mean(labels == 1 - y))
        assert agree > 0.97
        proba = est.predict_proba(X)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-10)
        assert est.weights_.shape == (2,)
        assert est.scales_.shape == (2, 2, 2)
        assert np.isfinite(est.score(X))

    def test_restarts_keep_best(self, data):
        X, _ = data
        one = SkewTMixture(n_components=2, max_iter=40, random_state=0,
                           restarts=1).fit(X)
        multi = SkewTMixture(n_components=2, max_iter=40, random_state=0,
                             restarts=3).fit(X)
        assert multi.loglik_ >= one.loglik_ - 1e-9

    def test_sample_shape(self, data):
        X, _ = data
        est = SkewTMixture(n_components=2, max_iter=40, random_state=0).fit(X)
        draws = est.sample(57, random_state=5)
        assert draws.shape == (57, 2)

    def test_score_samples_matches_density(self, data):
        X, _ = data
        est = SkewTMixture(n_components=1, max_iter=30, random_state=0).fit(X)
        from skewtmix import fm_mst_logpdf
        np.testing.assert_allclose(est.score_samples(X[:5]),
                                   fm_mst_logpdf(X[:5], est.result_.model),
                                   rtol=1e-12)

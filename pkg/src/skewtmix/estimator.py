"""Scikit-learn style estimator wrapping the mixture fit, so the model
composes with pipelines, grid search and the usual validation helpers.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .mixture import FitConfig, classify, fit_fm_mst, fm_mst_logpdf, posterior_tau
from .skewt import mst_sample

__all__ = ["SkewTMixture"]


class SkewTMixture(DensityMixin, BaseEstimator):
    """Mixture of unrestricted multivariate skew-t distributions.

    Parameters
    ----------
    n_components : int, default=1
        Number of mixture components.
    tol : float, default=1e-6
        Relative log-likelihood convergence threshold.
    max_iter : int, default=1000
        Maximum number of ECM iterations.
    nu_init : float, default=40.0
        Starting degrees of freedom (shared by all components).
    e1_mode : {"osl", "exact"}, default="osl"
        One-step-late or exact evaluation of the log-weight expectation.
    equal_nu : bool, default=False
        Constrain all components to one common degrees of freedom.
    qmc_tol : float, default=1e-6
        Absolute tolerance of the CDF evaluations inside the E-step.
    random_state : int, default=0
        Seed for the k-means initialization and the QMC shifts.
    restarts : int, default=1
        Number of re-seeded initializations; the best log-likelihood wins.

    Attributes
    ----------
    weights_ : ndarray of shape (n_components,)
    locations_, skewnesses_ : ndarray of shape (n_components, n_features)
    scales_ : ndarray of shape (n_components, n_features, n_features)
    dofs_ : ndarray of shape (n_components,)
    result_ : FitResult with the trace, responsibilities and standard errors.
    """

    def __init__(self, n_components=1, tol=1e-6, max_iter=1000, nu_init=40.0,
                 e1_mode="osl", equal_nu=False, qmc_tol=1e-6, random_state=0,
                 restarts=1):
        self.n_components = n_components
        self.tol = tol
        self.max_iter = max_iter
        self.nu_init = nu_init
        self.e1_mode = e1_mode
        self.equal_nu = equal_nu
        self.qmc_tol = qmc_tol
        self.random_state = random_state
        self.restarts = restarts

    def _config(self, seed):
        return FitConfig(g=self.n_components, tol=self.tol,
                         max_iter=self.max_iter, nu_init=self.nu_init,
                         e1_mode=self.e1_mode, equal_nu=self.equal_nu,
                         qmc_tol=self.qmc_tol, seed=seed,
                         qmc_seed=self.random_state)

    def fit(self, X, y=None):
        """Fit the mixture; on multiple restarts keep the best likelihood."""
        X = check_array(X, ensure_min_samples=2)
        best = None
        for r in range(max(1, self.restarts)):
            result = fit_fm_mst(X, self._config(self.random_state + r))
            if best is None or result.loglik > best.loglik:
                best = result
        self.result_ = best
        model = best.model
        self.weights_ = model.weights
        self.locations_ = np.stack([c.mu for c in model.components])
        self.scales_ = np.stack([c.sigma for c in model.components])
        self.skewnesses_ = np.stack([c.delta for c in model.components])
        self.dofs_ = np.array([c.nu for c in model.components])
        self.converged_ = best.converged
        self.loglik_ = best.loglik
        self.aic_ = best.aic
        self.bic_ = best.bic
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("call fit before using this estimator")

    def score_samples(self, X):
        """Log mixture density of each row."""
        self._check_fitted()
        X = check_array(X)
        return fm_mst_logpdf(X, self.result_.model, self.qmc_tol,
                             self.random_state)

    def score(self, X, y=None):
        """Mean log-likelihood of the rows of X."""
        return float(np.mean(self.score_samples(X)))

    def predict_proba(self, X):
        """Posterior component membership probabilities."""
        self._check_fitted()
        X = check_array(X)
        return posterior_tau(X, self.result_.model, self.qmc_tol,
                             self.random_state)

    def predict(self, X):
        """Maximum-posterior component labels."""
        return classify(self.predict_proba(X))

    def sample(self, n_samples=1, random_state=None):
        """Draw rows from the fitted mixture."""
        self._check_fitted()
        seed = self.random_state if random_state is None else random_state
        rng = np.random.default_rng(seed)
        model = self.result_.model
        counts = rng.multinomial(n_samples, model.weights)
        blocks = [mst_sample(comp, c, seed=int(rng.integers(2 ** 31)))
                  for comp, c in zip(model.components, counts) if c > 0]
        X = np.vstack(blocks)
        return X[rng.permutation(n_samples)]

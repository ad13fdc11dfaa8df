"""scikit-learn style wrapper around the multistart fit."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .aecm import TRIMMED, FitConfig, _logsumexp_rows, component_log_densities, fit, n_kept
from .model import ConstraintBounds


class TrimmedMFA(ClusterMixin, BaseEstimator):
    """Robust mixture of factor analyzers with trimming and ratio constraints.

    Parameters
    ----------
    n_components : int
        Number of mixture components G.
    n_factors : int
        Latent dimension d, shared by all components.
    alpha : float
        Trimming level; ``floor(n(1-alpha))`` rows enter the likelihood.
    c_noise, c_load : float
        Bounds on the max/min ratio of the noise variances and of the
        loading eigenvalues across all components.
    n_starts, max_iter, tol, tol_posterior : see :class:`~trimmfa.aecm.FitConfig`.
    random_state : int
        Seed of the start streams.

    Attributes
    ----------
    params_ : MfaParams
    labels_ : ndarray of shape (n,), with -1 for trimmed rows
    trimmed_ : boolean ndarray of shape (n,)
    posteriors_ : ndarray of shape (n, G), zero rows for trimmed observations
    target_ : float, trimmed log-likelihood
    converged_, n_iter_, result_
    """

    def __init__(self, n_components=2, n_factors=1, alpha=0.0, c_noise=1e10, c_load=1e10,
                 n_starts=10, max_iter=200, tol=1e-8, tol_posterior=1e-6, random_state=0):
        self.n_components = n_components
        self.n_factors = n_factors
        self.alpha = alpha
        self.c_noise = c_noise
        self.c_load = c_load
        self.n_starts = n_starts
        self.max_iter = max_iter
        self.tol = tol
        self.tol_posterior = tol_posterior
        self.random_state = random_state

    def _config(self) -> FitConfig:
        seed = 0 if self.random_state is None else int(self.random_state)
        return FitConfig(
            n_components=self.n_components,
            n_factors=self.n_factors,
            alpha=self.alpha,
            bounds=ConstraintBounds(self.c_noise, self.c_load),
            n_starts=self.n_starts,
            max_iter=self.max_iter,
            tol=self.tol,
            tol_posterior=self.tol_posterior,
            seed=seed,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        res = fit(X, self._config())
        self.result_ = res
        self.params_ = res.params
        self.weights_ = np.array(res.params.weights)
        self.means_ = np.array(res.params.means)
        self.loadings_ = np.array(res.params.loadings)
        self.noise_diag_ = np.array(res.params.noise_diag)
        self.labels_ = res.labels
        self.trimmed_ = res.trim_indicator == 0
        self.posteriors_ = res.posteriors
        self.target_ = res.target
        self.converged_ = res.converged
        self.n_iter_ = res.n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def transform(self, X):
        """``log(pi_g phi_g(x))`` for every row and component, shape (n, G)."""
        return component_log_densities(self._check(X), self.params_)

    def predict(self, X):
        """Bayes-rule component for every row; trimming is not applied."""
        return np.argmax(self.transform(X), axis=1)

    def predict_proba(self, X):
        logc = self.transform(X)
        return np.exp(logc - _logsumexp_rows(logc)[:, None])

    def score_samples(self, X):
        """Log mixture density of every row."""
        return _logsumexp_rows(self.transform(X))

    def score(self, X, y=None):
        """Trimmed log-likelihood of ``X`` per untrimmed row."""
        logd = np.sort(self.score_samples(X))[::-1]
        h = n_kept(len(logd), self.alpha)
        return float(np.mean(logd[:h]))

    def trim(self, X):
        """Labels for ``X`` with the ``n - floor(n(1-alpha))`` least likely rows set to -1."""
        logc = self.transform(X)
        logd = _logsumexp_rows(logc)
        labels = np.argmax(logc, axis=1)
        order = np.argsort(-logd, kind="stable")
        labels[order[n_kept(len(logd), self.alpha):]] = TRIMMED
        return labels

"""Gaussian densities with low-rank-plus-diagonal covariance.

For ``Sigma = L L' + Psi`` with ``L`` of shape (p, d) and ``Psi`` diagonal,
every quantity the fitting loop needs is expressed through the d x d inner
matrix ``M = I_d + L' Psi^{-1} L``:

* ``log|Sigma| = sum(log psi) + log|M|``  (matrix determinant lemma)
* ``Sigma^{-1} = Psi^{-1} - Psi^{-1} L M^{-1} L' Psi^{-1}``  (Woodbury)
* ``gamma = L' Sigma^{-1} = M^{-1} L' Psi^{-1}`` and ``I_d - gamma L = M^{-1}``.

so nothing of size p x p is ever formed on the fast path.  ``M`` itself is
never inverted: everything goes through the SVD of ``Psi^{-1/2} L``, which
stays accurate when a degenerate component makes ``M`` badly conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import SingularKernelError

LOG_2PI = np.log(2.0 * np.pi)


class ComponentKernel:
    """Cached factorisation of one component's covariance.

    Parameters
    ----------
    mean : array of shape (p,)
    loadings : array of shape (p, d)
    noise_diag : array of shape (p,), strictly positive
    """

    def __init__(self, mean, loadings, noise_diag):
        self.mean = np.asarray(mean, dtype=float)
        self.loadings = np.asarray(loadings, dtype=float)
        self.noise_diag = np.asarray(noise_diag, dtype=float)
        p, d = self.loadings.shape
        if self.mean.shape != (p,) or self.noise_diag.shape != (p,):
            raise ValueError("mean and noise_diag must have length p = loadings.shape[0]")
        self._f = batch_factors(self.loadings[None], self.noise_diag[None])
        self.logdet = float(self._f.logdet[0])

    @property
    def n_features(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]

    def mahalanobis(self, X) -> np.ndarray:
        """Squared Mahalanobis distances of the rows of ``X`` (or of a single vector)."""
        R = np.atleast_2d(np.asarray(X, dtype=float)) - self.mean
        return batch_mahalanobis(R[None], self._f)[0]

    def log_density(self, X) -> np.ndarray | float:
        """Log normal density; vectorised over rows when ``X`` is 2-D."""
        X = np.asarray(X, dtype=float)
        out = -0.5 * (self.n_features * LOG_2PI + self.logdet + self.mahalanobis(X))
        return float(out[0]) if X.ndim == 1 else out

    def covariance(self) -> np.ndarray:
        cov = self.loadings @ self.loadings.T
        cov[np.diag_indices_from(cov)] += self.noise_diag
        return cov

    def factor_projection(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(gamma, residual_cov)``.

        ``gamma = L' Sigma^{-1}`` (d x p) maps centred observations to the
        posterior factor mean; ``residual_cov = I_d - gamma L`` is the
        posterior factor covariance.
        """
        gamma, inner_inv = self._f.posterior()
        return gamma[0], inner_inv[0]

    def xi_matrix(self, x, mu) -> np.ndarray:
        """Posterior second moment ``I - gamma L + gamma r r' gamma'`` with ``r = x - mu``."""
        gamma, resid = self.factor_projection()
        u = gamma @ (np.asarray(x, dtype=float) - np.asarray(mu, dtype=float))
        return resid + np.outer(u, u)


@dataclass(frozen=True)
class LowRankFactors:
    """SVD of the whitened loadings ``Psi^{-1/2} L = U diag(s) Vt``, stacked over G.

    In this basis ``M = Vt' diag(1 + s^2) Vt``, so its inverse and
    determinant come out eigenvalue by eigenvalue, with no inversion of
    an ill-conditioned matrix.
    """

    sqrt_noise: np.ndarray  # (G, p)
    U: np.ndarray  # (G, p, d)
    s: np.ndarray  # (G, d)
    Vt: np.ndarray  # (G, d, d)
    logdet: np.ndarray  # (G,)

    def posterior(self) -> tuple[np.ndarray, np.ndarray]:
        """``(gamma, inner_inv)`` with shapes (G, d, p) and (G, d, d)."""
        V = np.swapaxes(self.Vt, 1, 2)
        shrink = 1.0 / (1.0 + self.s**2)
        inner_inv = (V * shrink[:, None, :]) @ self.Vt
        inner_inv = 0.5 * (inner_inv + np.swapaxes(inner_inv, 1, 2))
        gamma = (V * (self.s * shrink)[:, None, :]) @ np.swapaxes(self.U, 1, 2)
        return gamma / self.sqrt_noise[:, None, :], inner_inv


def batch_factors(loadings, noise_diag) -> LowRankFactors:
    """Factorise G components at once; see :class:`LowRankFactors`."""
    loadings = np.asarray(loadings, dtype=float)
    noise_diag = np.asarray(noise_diag, dtype=float)
    if not np.all(noise_diag > 0) or not np.all(np.isfinite(noise_diag)):
        raise SingularKernelError("noise_diag has non-positive or non-finite entries")
    sq = np.sqrt(noise_diag)
    try:
        U, s, Vt = np.linalg.svd(loadings / sq[:, :, None], full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SingularKernelError("SVD of the whitened loadings failed") from exc
    logdet = np.sum(np.log(noise_diag), axis=1) + np.sum(np.log1p(s**2), axis=1)
    if not np.all(np.isfinite(logdet)):
        raise SingularKernelError("covariance log-determinant is not finite")
    return LowRankFactors(sq, U, s, Vt, logdet)


def batch_mahalanobis(R, f: LowRankFactors) -> np.ndarray:
    """Squared distances of centred rows ``R`` (G, n, p), shape (G, n).

    Split into the part of ``Psi^{-1/2} r`` orthogonal to the loading
    span plus the shrunken in-span part; both are sums of squares, so no
    cancellation occurs when some ``s`` is huge.
    """
    Z = R / f.sqrt_noise[:, None, :]
    P = Z @ f.U
    E = Z - P @ np.swapaxes(f.U, 1, 2)
    return np.sum(E * E, axis=2) + np.sum(P * P / (1.0 + f.s**2)[:, None, :], axis=2)


def batch_inner(loadings, noise_diag):
    """Stacked ``(gamma, inner_inv, logdet)`` with shapes (G, d, p), (G, d, d), (G,)."""
    f = batch_factors(loadings, noise_diag)
    gamma, inner_inv = f.posterior()
    return gamma, inner_inv, f.logdet


def batch_log_density(X, means, loadings, noise_diag) -> np.ndarray:
    """Log densities of every row of ``X`` under every component, shape (n, G)."""
    f = batch_factors(loadings, noise_diag)
    R = X[None, :, :] - means[:, None, :]
    quad = batch_mahalanobis(R, f)
    p = X.shape[1]
    return (-0.5 * (p * LOG_2PI + f.logdet[:, None] + quad)).T


def log_density(kernel: ComponentKernel, X, dense: bool = False):
    """Log density of ``N(kernel.mean, L L' + Psi)`` at ``X``.

    ``dense=True`` factorises the full p x p covariance with a Cholesky
    decomposition instead of using the low-rank identities.
    """
    if not dense:
        return kernel.log_density(X)
    X = np.asarray(X, dtype=float)
    R = np.atleast_2d(X) - kernel.mean
    c = linalg.cholesky(kernel.covariance(), lower=True)
    Z = linalg.solve_triangular(c, R.T, lower=True)
    out = -0.5 * (
        kernel.n_features * LOG_2PI + 2.0 * np.sum(np.log(np.diag(c))) + np.sum(Z * Z, axis=0)
    )
    return float(out[0]) if X.ndim == 1 else out


def factor_projection(kernel: ComponentKernel):
    return kernel.factor_projection()


def xi_matrix(kernel: ComponentKernel, x, mu):
    return kernel.xi_matrix(x, mu)

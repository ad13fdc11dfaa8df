import numpy as np
import pytest
from scipy.stats import multivariate_normal

from trimmfa.exceptions import SingularKernelError
from trimmfa.lowrank import ComponentKernel, batch_log_density, factor_projection, log_density, xi_matrix


def random_kernel(rng, p=None, d=None):
    p = p or int(rng.integers(2, 21))
    d = d or int(rng.integers(1, min(p - 1, 5) + 1))
    return ComponentKernel(rng.normal(size=p), rng.normal(size=(p, d)), rng.uniform(0.05, 2, p))


def test_standard_normal_at_mean():
    p = 4
    k = ComponentKernel(np.zeros(p), np.zeros((p, 1)), np.ones(p))
    assert k.log_density(np.zeros(p)) == pytest.approx(-0.5 * p * np.log(2 * np.pi), abs=1e-14)


def test_hand_value_p2_d1():
    k = ComponentKernel(np.zeros(2), np.array([[1.0], [0.0]]), np.ones(2))
    expected = -np.log(2 * np.pi) - 0.5 * np.log(2)
    assert k.log_density(np.zeros(2)) == pytest.approx(expected, abs=1e-14)


def test_matches_dense_oracle_and_scipy(rng):
    for _ in range(200):
        k = random_kernel(rng)
        X = rng.normal(size=(5, k.n_features)) * 3
        fast = log_density(k, X)
        dense = log_density(k, X, dense=True)
        np.testing.assert_allclose(fast, dense, rtol=1e-8)
        ref = multivariate_normal(k.mean, k.covariance()).logpdf(X)
        np.testing.assert_allclose(fast, ref, rtol=1e-8)


def test_ill_conditioned_kernels_match_dense(rng):
    # noise spread over six orders of magnitude
    for _ in range(50):
        p, d = 8, 3
        psi = 10.0 ** rng.uniform(-3, 3, p)
        k = ComponentKernel(np.zeros(p), rng.normal(size=(p, d)), psi)
        X = rng.normal(size=(4, p))
        np.testing.assert_allclose(log_density(k, X), log_density(k, X, dense=True), rtol=1e-8)


def test_batch_matches_kernels(rng):
    G, p, d = 3, 7, 2
    means = rng.normal(size=(G, p))
    L = rng.normal(size=(G, p, d))
    psi = rng.uniform(0.1, 1, (G, p))
    X = rng.normal(size=(11, p))
    out = batch_log_density(X, means, L, psi)
    for g in range(G):
        np.testing.assert_allclose(out[:, g], ComponentKernel(means[g], L[g], psi[g]).log_density(X),
                                   rtol=1e-12)


def test_density_integrates_to_one(rng):
    for _ in range(3):
        k = ComponentKernel(rng.normal(size=2), rng.normal(size=(2, 1)) * 0.7, rng.uniform(0.2, 0.6, 2))
        sd = np.sqrt(np.diag(k.covariance()))
        axes = [np.linspace(m - 9 * s, m + 9 * s, 401) for m, s in zip(k.mean, sd)]
        gx, gy = np.meshgrid(*axes, indexing="ij")
        dens = np.exp(k.log_density(np.c_[gx.ravel(), gy.ravel()]))
        cell = (axes[0][1] - axes[0][0]) * (axes[1][1] - axes[1][0])
        assert dens.sum() * cell == pytest.approx(1.0, abs=1e-3)


def test_factor_projection_zero_loadings():
    k = ComponentKernel(np.zeros(3), np.zeros((3, 2)), np.ones(3))
    gamma, resid = factor_projection(k)
    np.testing.assert_array_equal(gamma, 0)
    np.testing.assert_allclose(resid, np.eye(2))


def test_factor_projection_hand_value():
    k = ComponentKernel(np.zeros(2), np.array([[1.0], [0.0]]), np.ones(2))
    gamma, resid = factor_projection(k)
    np.testing.assert_allclose(gamma, [[0.5, 0.0]], atol=1e-15)
    np.testing.assert_allclose(resid, [[0.5]], atol=1e-15)


def test_factor_projection_identities(rng):
    for _ in range(100):
        k = random_kernel(rng)
        gamma, resid = factor_projection(k)
        np.testing.assert_allclose(gamma @ k.covariance(), k.loadings.T, atol=1e-10)
        np.testing.assert_allclose(resid, np.eye(k.n_factors) - gamma @ k.loadings, atol=1e-10)


def test_xi_matrix(rng):
    k = random_kernel(rng, p=6, d=2)
    gamma, resid = factor_projection(k)
    np.testing.assert_allclose(xi_matrix(k, k.mean, k.mean), resid)
    k0 = ComponentKernel(np.zeros(4), np.zeros((4, 2)), np.ones(4))
    np.testing.assert_allclose(xi_matrix(k0, rng.normal(size=4), np.zeros(4)), np.eye(2))
    for _ in range(100):
        k = random_kernel(rng)
        x = rng.normal(size=k.n_features) * 5
        assert np.linalg.eigvalsh(xi_matrix(k, x, k.mean)).min() >= -1e-10


def test_nonpositive_noise_rejected():
    with pytest.raises(SingularKernelError):
        ComponentKernel(np.zeros(2), np.ones((2, 1)), np.array([1.0, 0.0]))

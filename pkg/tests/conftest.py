"""Shared fixtures and oracle helpers for the test suite."""

import numpy as np
import pytest

from spiox.geom import LocationSet
from spiox.kernels import KernelParams, corr_matrix


def rand_locations(n, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return LocationSet(rng.uniform(0.0, 1.0, size=(n, d)))


def rand_spd(q, seed=0, diag_boost=None):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((q, q))
    M = A @ A.T + (q if diag_boost is None else diag_boost) * np.eye(q)
    return 0.5 * (M + M.T)


def rand_corr(q, seed=0):
    M = rand_spd(q, seed)
    d = np.sqrt(np.diag(M))
    return M / np.outer(d, d)


def dense_iox_cov(S, thetas, Sigma):
    """Brute-force C(S) straight from the definition: blocks sigma_ij L_i L_j^T
    with L_i the numpy Cholesky factor of rho_i(S). Outcome-major ordering.

    Independent of the package's own covariance assembly path.
    """
    q = Sigma.shape[0]
    n = S.n
    Ls = [np.linalg.cholesky(corr_matrix(S, S, p)) for p in thetas]
    C = np.empty((n * q, n * q))
    for i in range(q):
        for j in range(q):
            C[i * n:(i + 1) * n, j * n:(j + 1) * n] = Sigma[i, j] * (Ls[i] @ Ls[j].T)
    return C


def mvn_logpdf(x, mean, cov):
    """Dense Gaussian log density via numpy Cholesky (oracle)."""
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, x - mean)
    return float(-0.5 * len(x) * np.log(2 * np.pi) - np.log(np.diag(L)).sum()
                 - 0.5 * z @ z)


def mvn_condition(mean, cov, obs_idx, obs_val):
    """Oracle conditional of a joint Gaussian on a subset of coordinates."""
    all_idx = np.arange(len(mean))
    mis = np.setdiff1d(all_idx, obs_idx)
    Coo = cov[np.ix_(obs_idx, obs_idx)]
    Cmo = cov[np.ix_(mis, obs_idx)]
    Cmm = cov[np.ix_(mis, mis)]
    w = np.linalg.solve(Coo, obs_val - mean[obs_idx])
    cmean = mean[mis] + Cmo @ w
    ccov = Cmm - Cmo @ np.linalg.solve(Coo, Cmo.T)
    return mis, cmean, ccov


@pytest.fixture
def toy_thetas():
    return [KernelParams(10.0, 0.5, 0.0), KernelParams(12.0, 1.5, 0.0),
            KernelParams(8.0, 1.2, 0.0)]

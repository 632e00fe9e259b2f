"""Shared helpers for the test suite."""

import numpy as np
import pytest


def factor_panel(N, T, r, seed, *, noise_lo=0.5, noise_hi=1.5, scale=1.0):
    """Draw a Gaussian panel from a random factor-plus-diagonal truth.

    Returns ``(X, Sigma, lam_true, phi_true)`` with ``X`` of shape (N, T).
    """
    rng = np.random.default_rng(seed)
    lam = scale * rng.normal(size=(N, r))
    phi = rng.uniform(noise_lo, noise_hi, N)
    Sigma = lam @ lam.T + np.diag(phi)
    X = np.linalg.cholesky(Sigma) @ rng.standard_normal((N, T))
    return X, Sigma, lam, phi


def random_pd(n, seed, *, jitter=0.5):
    """Random well-conditioned positive definite matrix."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    return A @ A.T / n + jitter * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(0)

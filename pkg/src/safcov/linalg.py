"""Dense symmetric-matrix primitives shared across the toolkit.

All covariance-like inputs are plain ``float64`` ndarrays.  Symmetry is
enforced by averaging with the transpose before any eigendecomposition,
because iterative updates accumulate tiny asymmetries that corrupt
``eigh`` otherwise.
"""

import numpy as np
import scipy.linalg

from .errors import (
    EigensolverError,
    NotPositiveDefinite,
    NumericalBreakdown,
    SingularInnerSystem,
)

__all__ = [
    "symmetrize",
    "eigh_desc",
    "soft_threshold",
    "frobenius_norm",
    "spectral_norm",
    "weighted_quadratic_norm",
    "woodbury_precision",
    "min_max_eig",
    "is_positive_definite",
    "require_positive_definite",
    "inv_sqrt_psd",
]

#: Relative floor of the positive-definiteness test: the smallest
#: eigenvalue must exceed ``PD_RTOL * max(1, largest eigenvalue)``.
PD_RTOL = 1e-12


def symmetrize(A):
    """Return the symmetric part ``(A + A.T) / 2`` as a new float64 array."""
    A = np.asarray(A, dtype=np.float64)
    return (A + A.T) / 2.0


def eigh_desc(A):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Parameters
    ----------
    A : (n, n) array_like
        Symmetric matrix; symmetrized defensively before the solve.

    Returns
    -------
    values : (n,) ndarray
        Eigenvalues sorted non-increasing.
    vectors : (n, n) ndarray
        Orthonormal eigenvectors, column ``k`` paired with ``values[k]``.
    """
    A = symmetrize(A)
    try:
        values, vectors = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - hardware dependent
        raise EigensolverError(str(exc)) from exc
    return values[::-1].copy(), vectors[:, ::-1].copy()


def soft_threshold(x, tau):
    """Soft-thresholding operator ``sign(x) * max(|x| - tau, 0)``.

    Works elementwise on arrays; ``tau`` must be nonnegative.
    """
    if np.any(np.asarray(tau) < 0):
        raise ValueError("threshold tau must be nonnegative")
    x = np.asarray(x)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def frobenius_norm(A):
    """Frobenius norm ``sqrt(sum of squared entries)``."""
    return float(np.linalg.norm(np.asarray(A, dtype=np.float64), "fro"))


def spectral_norm(A):
    """Spectral norm; for symmetric input this is the largest ``|eigenvalue|``."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-10, rtol=0.0):
        return float(np.linalg.norm(A, 2))
    values, _ = eigh_desc(A)
    return float(np.max(np.abs(values)))


def min_max_eig(A):
    """Return ``(smallest, largest)`` eigenvalue of a symmetric matrix."""
    values = np.linalg.eigvalsh(symmetrize(A))
    return float(values[0]), float(values[-1])


def is_positive_definite(A, rtol=PD_RTOL):
    """Relative positive-definiteness test.

    True when the smallest eigenvalue exceeds ``rtol * max(1, largest
    eigenvalue)``; the relative scale keeps ill-conditioned but valid
    matrices from being rejected.
    """
    lo, hi = min_max_eig(A)
    return lo > rtol * max(1.0, hi)


def require_positive_definite(A, what="matrix", rtol=PD_RTOL):
    """Raise :class:`NotPositiveDefinite` unless ``A`` passes the PD test."""
    lo, hi = min_max_eig(A)
    if not lo > rtol * max(1.0, hi):
        raise NotPositiveDefinite(f"{what} is not positive definite "
                                  f"(min eigenvalue {lo:.3e})", min_eig=lo)


def inv_sqrt_psd(Sigma):
    """Inverse symmetric square root ``Sigma^(-1/2)`` via eigendecomposition."""
    values, vectors = eigh_desc(Sigma)
    if values[-1] <= 1e-12:
        raise NotPositiveDefinite("matrix has no positive-definite square root",
                                  min_eig=float(values[-1]))
    return (vectors / np.sqrt(values)) @ vectors.T


def weighted_quadratic_norm(A, Sigma):
    """Weighted quadratic norm ``N^(-1/2) * ||Sigma^(-1/2) A Sigma^(-1/2)||_F``."""
    A = np.asarray(A, dtype=np.float64)
    root = inv_sqrt_psd(Sigma)
    n = A.shape[0]
    return frobenius_norm(root @ A @ root) / np.sqrt(n)


def woodbury_precision(Lambda, sigma_u_inv):
    """Invert ``Lambda @ Lambda.T + Sigma_u`` through the r-by-r inner system.

    Parameters
    ----------
    Lambda : (N, r) array_like
        Low-rank factor of the perturbation.
    sigma_u_inv : (N, N) array_like or (N,) array_like
        Inverse of the full-rank part, either dense or as a diagonal vector.

    Returns
    -------
    (N, N) ndarray
        ``(Lambda Lambda' + Sigma_u)^(-1)``, exactly symmetric.

    Notes
    -----
    Uses the low-rank update identity: with ``B0 = Sigma_u^(-1) Lambda``
    and ``M = I_r + Lambda' B0``, the inverse is
    ``Sigma_u^(-1) - B0 M^(-1) B0'``.  Only an r-by-r factorization is
    required, which is the workhorse of every per-iteration solve.
    """
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=np.float64))
    sigma_u_inv = np.asarray(sigma_u_inv, dtype=np.float64)
    if sigma_u_inv.ndim == 1:
        B0 = sigma_u_inv[:, None] * Lambda
        base = np.diag(sigma_u_inv)
    else:
        B0 = sigma_u_inv @ Lambda
        base = sigma_u_inv
    r = Lambda.shape[1]
    if r == 0:
        return symmetrize(base)
    M = np.eye(r) + Lambda.T @ B0
    try:
        cho = scipy.linalg.cho_factor(symmetrize(M), lower=True)
        core = scipy.linalg.cho_solve(cho, B0.T)
    except scipy.linalg.LinAlgError as exc:
        raise SingularInnerSystem(f"inner {r}x{r} system singular: {exc}") from exc
    return symmetrize(base - B0 @ core)


def gmvp_kkt_solve(Sigma):
    """Closed-form KKT solve of ``min w'Sigma w  s.t.  1'w = 1``.

    Independent code path used as an oracle against the production
    weight routine: solves the bordered system ``[[2Sigma, 1], [1', 0]]``.
    """
    Sigma = np.asarray(Sigma, dtype=np.float64)
    n = Sigma.shape[0]
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = 2.0 * Sigma
    K[:n, n] = 1.0
    K[n, :n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdown(f"KKT system singular: {exc}") from exc
    return sol[:n]

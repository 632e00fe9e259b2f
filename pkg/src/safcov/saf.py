"""Sparse-loading factor covariance estimation.

The estimator minimizes

    log det(Lambda Lambda' + Phi_u) + tr(S_x (Lambda Lambda' + Phi_u)^(-1))
        + mu * sum_ik |lambda_ik|

over loadings ``Lambda`` (N x r) and a diagonal noise matrix ``Phi_u``
by a majorize-minimize EM scheme: the concave log-determinant is
replaced by its tangent plane, the resulting convex problem is attacked
with a projected-gradient step whose closed form is an elementwise
soft-threshold, and the noise variances follow from the EM fixed-point
update.  Factors are then recovered by GLS, residual covariance by
soft-thresholding the residual second-moment matrix, and the final
covariance estimate is assembled as

    Sigma_hat = Lambda_hat S_Fhat Lambda_hat' + Sigma_u_tau.

Single-iteration pieces (:func:`majorization_gradient`,
:func:`loading_update`, :func:`phi_update`) are exposed for testing and
for building variants; the production loop runs through the selected
backend kernel.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import backend
from .errors import DegenerateInput, NotPositiveDefinite, SingularInnerSystem
from .linalg import (
    require_positive_definite,
    soft_threshold,
    symmetrize,
    woodbury_precision,
)

__all__ = [
    "SafConfig",
    "FactorFit",
    "CovarianceEstimate",
    "quasi_log_likelihood",
    "penalized_objective",
    "majorized_objective",
    "majorization_gradient",
    "loading_update",
    "phi_update",
    "identify_loadings",
    "fit_saf",
    "gls_factors",
    "poet_residual_cov",
    "poet_threshold",
    "assemble_saf_covariance",
    "saf_covariance",
    "demeaned_sample_cov",
]


@dataclass(frozen=True)
class SafConfig:
    """Knobs of the penalized factor fit.

    Parameters
    ----------
    r : int
        Number of factors, ``>= 1``.
    mu : float
        l1 penalty level, ``>= 0``.
    step_t : float
        Depth of the gradient projection.
    max_outer_iter : int
        Budget of outer (loading + noise) iterations.
    conv_tol : float
        Convergence threshold on the spectral norm of parameter deltas.
    epsilon_ridge : float
        Added to the diagonal of S_x only when N > T, where the sample
        covariance is rank deficient.
    init_iter : int
        Iteration budget of the unpenalized warm-up run used for
        initialization.
    """

    r: int
    mu: float = 0.0
    step_t: float = 0.01
    max_outer_iter: int = 500
    conv_tol: float = 1e-6
    epsilon_ridge: float = 1e-4
    init_iter: int = 100

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("factor count r must be >= 1")
        if self.mu < 0:
            raise ValueError("penalty mu must be nonnegative")
        if self.step_t <= 0 or self.conv_tol <= 0:
            raise ValueError("step_t and conv_tol must be positive")


@dataclass
class FactorFit:
    """Everything the penalized factor fit produced."""

    loadings: np.ndarray          # (N, r)
    factors: np.ndarray           # (T, r)
    phi_u: np.ndarray             # (N,) strictly positive
    sigma_u_tau: np.ndarray       # (N, N) thresholded residual covariance
    objective_trace: np.ndarray   # per-iteration penalized objective
    converged: bool
    n_iter: int
    config: SafConfig
    dropped_columns: tuple = ()   # loading columns zeroed out by the penalty

    @property
    def n_active_factors(self):
        return self.loadings.shape[1] - len(self.dropped_columns)


@dataclass
class CovarianceEstimate:
    """A symmetric PD covariance matrix plus provenance metadata."""

    matrix: np.ndarray
    estimator_id: str
    params: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.matrix.shape[0]


def demeaned_sample_cov(X):
    """Second-moment matrix ``(1/T) X_c X_c'`` of the row-demeaned panel."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=1, keepdims=True)
    return (Xc @ Xc.T) / X.shape[1]


def _omega_inverse(Lambda, phi_u):
    """Inverse of ``Lambda Lambda' + diag(phi_u)`` through the low-rank solve."""
    return woodbury_precision(Lambda, 1.0 / np.asarray(phi_u, dtype=np.float64))


def quasi_log_likelihood(Lambda, phi_u, S_x):
    """``log det(Omega) + tr(S_x Omega^(-1))`` for ``Omega = Lambda Lambda' + Phi_u``."""
    Lambda = np.asarray(Lambda, dtype=np.float64)
    phi_u = np.asarray(phi_u, dtype=np.float64)
    S_x = np.asarray(S_x, dtype=np.float64)
    if np.any(phi_u <= 0):
        raise NotPositiveDefinite("noise variances must be strictly positive")
    B0 = Lambda / phi_u[:, None]
    r = Lambda.shape[1]
    M = np.eye(r) + Lambda.T @ B0
    sign, logdet_M = np.linalg.slogdet(M)
    if sign <= 0:
        raise NotPositiveDefinite("Lambda Lambda' + Phi_u is numerically singular")
    logdet = float(np.sum(np.log(phi_u))) + float(logdet_M)
    trace = float(np.sum(np.diag(S_x) / phi_u)) - float(
        np.trace(np.linalg.solve(M, B0.T @ S_x @ B0)))
    return logdet + trace


def penalized_objective(Lambda, phi_u, S_x, mu):
    """Quasi log-likelihood plus the l1 loading penalty ``mu * sum |lambda|``."""
    if mu < 0:
        raise ValueError("penalty mu must be nonnegative")
    return quasi_log_likelihood(Lambda, phi_u, S_x) + mu * float(
        np.abs(np.asarray(Lambda)).sum())


def majorized_objective(Lambda, Lambda_m, phi_u_m, S_x):
    """Tangent-plane (majorized) likelihood at ``Lambda``, anchored at ``Lambda_m``.

    The concave log-determinant is replaced by its first-order expansion
    around the anchor while the trace term keeps the new loadings:

        log det(Omega_m) + tr(2 Lambda_m' Omega_m^(-1) (Lambda - Lambda_m))
            + tr(S_x (Lambda Lambda' + Phi_m)^(-1))

    This touches the anchor from above, which is what makes the
    objective-descent safeguard sound.
    """
    Lambda = np.asarray(Lambda, dtype=np.float64)
    Lambda_m = np.asarray(Lambda_m, dtype=np.float64)
    phi_u_m = np.asarray(phi_u_m, dtype=np.float64)
    S_x = np.asarray(S_x, dtype=np.float64)
    omega_m_inv = _omega_inverse(Lambda_m, phi_u_m)
    sign, logdet_m = np.linalg.slogdet(
        Lambda_m @ Lambda_m.T + np.diag(phi_u_m))
    if sign <= 0:
        raise NotPositiveDefinite("anchor covariance is numerically singular")
    tangent = 2.0 * float(np.trace(Lambda_m.T @ omega_m_inv @ (Lambda - Lambda_m)))
    new_inv = _omega_inverse(Lambda, phi_u_m)
    return float(logdet_m) + tangent + float(np.trace(S_x @ new_inv))


def majorization_gradient(Lambda_m, phi_u_m, S_x):
    """Gradient ``2 [Omega^(-1) - Omega^(-1) S_x Omega^(-1)] Lambda_m`` of the
    majorized likelihood at the anchor."""
    Lambda_m = np.asarray(Lambda_m, dtype=np.float64)
    S_x = np.asarray(S_x, dtype=np.float64)
    omega_inv = _omega_inverse(Lambda_m, phi_u_m)
    return 2.0 * (omega_inv - omega_inv @ S_x @ omega_inv) @ Lambda_m


def loading_update(Lambda_m, A_hat, step_t, mu):
    """Projected-gradient step: ``soft_threshold(Lambda_m - t A_hat, t mu)``."""
    if step_t <= 0:
        raise ValueError("step_t must be positive")
    if mu < 0:
        raise ValueError("penalty mu must be nonnegative")
    return soft_threshold(np.asarray(Lambda_m) - step_t * np.asarray(A_hat),
                          step_t * mu)


def phi_update(S_x, Lambda_new, Lambda_m, phi_u_m, floor=1e-8):
    """EM update of the noise variances.

    Returns ``diag[S_x - Lambda_new Lambda_m' Omega_m^(-1) S_x]`` with
    entries floored at ``floor`` so the next inverse stays finite.
    """
    S_x = np.asarray(S_x, dtype=np.float64)
    Lambda_new = np.asarray(Lambda_new, dtype=np.float64)
    Lambda_m = np.asarray(Lambda_m, dtype=np.float64)
    omega_inv = _omega_inverse(Lambda_m, phi_u_m)
    C = S_x @ omega_inv @ Lambda_m        # rows i give (Lambda_m' Omega^(-1) S_x)_{., i}
    values = np.diag(S_x) - np.einsum("ik,ik->i", Lambda_new, C)
    return np.maximum(values, floor)


def identify_loadings(Lambda):
    """Canonical column order and signs.

    Columns are sorted by ascending count of exact zeros (sparser
    columns first), ties broken toward larger absolute mass; each
    column's first nonzero entry is made nonnegative by negating the
    column.  Returns the rearranged copy and the column permutation.
    """
    lam = np.array(Lambda, dtype=np.float64, copy=True)
    zero_counts = (lam == 0).sum(axis=0)
    order = np.lexsort((-np.abs(lam).sum(axis=0), zero_counts))
    lam = lam[:, order]
    for k in range(lam.shape[1]):
        nonzero = np.nonzero(lam[:, k])[0]
        if nonzero.size and lam[nonzero[0], k] < 0:
            lam[:, k] = -lam[:, k]
    return lam, order


def _pca_start(S, r):
    """Principal-components start: top-r eigenvectors scaled by root eigenvalues."""
    values, vectors = np.linalg.eigh(S)
    values = values[::-1][:r]
    vectors = vectors[:, ::-1][:, :r]
    lam = vectors * np.sqrt(np.maximum(values, 0.0))
    phi = np.maximum(np.diag(S) - (lam ** 2).sum(axis=1), 1e-8)
    return lam, phi


def _prepare_sx(X, epsilon_ridge):
    """Demeaned sample covariance, ridged on the diagonal when N > T."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DegenerateInput("panel must be a 2-d N x T array")
    N, T = X.shape
    S = demeaned_sample_cov(X)
    if np.any(np.diag(S) <= 0):
        bad = int(np.flatnonzero(np.diag(S) <= 0)[0])
        raise DegenerateInput(f"series {bad} has zero variance")
    if N > T and epsilon_ridge > 0:
        S = S + epsilon_ridge * np.eye(N)
    return symmetrize(S), N, T


def fit_saf(X, config=None, *, warm_start=None, **overrides):
    """Fit the penalized factor model to an N x T panel.

    Parameters
    ----------
    X : (N, T) array_like
        One row per series; rows are demeaned internally.
    config : SafConfig, optional
        Full configuration; keyword overrides (e.g. ``r=4, mu=0.3``) may
        be passed instead of, or on top of, a config object.
    warm_start : (Lambda, phi) pair, optional
        Starting point; skips the unpenalized warm-up phase.  Used by
        the penalty-path search to stabilize solutions along the grid.

    Returns
    -------
    FactorFit
    """
    if config is None:
        config = SafConfig(**overrides)
    elif overrides:
        config = replace(config, **overrides)
    S, N, T = _prepare_sx(X, config.epsilon_ridge)
    if T < config.r + 2:
        raise DegenerateInput(f"need T >= r + 2 (T={T}, r={config.r})")

    if warm_start is None:
        lam0, phi0 = _pca_start(S, config.r)
        if config.init_iter > 0:
            lam0, phi0, _, _, _ = backend.run_mm(
                S, lam0, phi0, 0.0, config.step_t, config.conv_tol,
                config.init_iter)
    else:
        lam0, phi0 = warm_start

    lam, phi, trace, n_iter, converged = backend.run_mm(
        S, lam0, phi0, config.mu, config.step_t, config.conv_tol,
        config.max_outer_iter)

    lam, _ = identify_loadings(lam)

    Xc = np.asarray(X, dtype=np.float64)
    Xc = Xc - Xc.mean(axis=1, keepdims=True)
    active = np.abs(lam).sum(axis=0) > 0
    factors = np.zeros((T, config.r))
    if active.any():
        factors[:, active] = gls_factors(Xc, lam[:, active], phi)
    dropped = tuple(int(k) for k in np.flatnonzero(~active))

    residuals = Xc - lam @ factors.T
    sigma_u_tau = poet_residual_cov(residuals)

    return FactorFit(
        loadings=lam,
        factors=factors,
        phi_u=phi,
        sigma_u_tau=sigma_u_tau,
        objective_trace=trace,
        converged=converged,
        n_iter=n_iter,
        config=config,
        dropped_columns=dropped,
    )


def gls_factors(X, Lambda_hat, phi_u_hat):
    """GLS factor scores ``f_t = (L' Phi^(-1) L)^(-1) L' Phi^(-1) x_t``.

    ``X`` must already be demeaned; returns a T x r matrix.  Raises
    :class:`SingularInnerSystem` when a loading column is entirely zero,
    in which case the caller should reduce the factor count.
    """
    X = np.asarray(X, dtype=np.float64)
    Lambda_hat = np.atleast_2d(np.asarray(Lambda_hat, dtype=np.float64))
    phi_u_hat = np.asarray(phi_u_hat, dtype=np.float64)
    if np.any(np.abs(Lambda_hat).sum(axis=0) == 0):
        raise SingularInnerSystem("loading matrix has an all-zero column; "
                                  "reduce the factor count")
    B0 = Lambda_hat / phi_u_hat[:, None]
    G = Lambda_hat.T @ B0
    try:
        return np.linalg.solve(G, B0.T @ X).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnerSystem(f"GLS normal equations singular: {exc}") from exc


def poet_threshold(N, T):
    """Residual-covariance threshold ``1/sqrt(N) + sqrt(log(N)/T)``."""
    return 1.0 / np.sqrt(N) + np.sqrt(np.log(N) / T)


def poet_residual_cov(residuals, tau=None):
    """Threshold the residual second-moment matrix.

    ``S_u = (1/T) sum_t u_t u_t'`` is computed without demeaning (the
    residuals inherit the panel's centering); off-diagonals are
    soft-thresholded at ``tau`` (default :func:`poet_threshold`), the
    diagonal is never touched.
    """
    U = np.asarray(residuals, dtype=np.float64)
    N, T = U.shape
    if T < 2:
        raise DegenerateInput("need at least two observations of residuals")
    S_u = (U @ U.T) / T
    if tau is None:
        tau = poet_threshold(N, T)
    out = soft_threshold(S_u, tau)
    np.fill_diagonal(out, np.diag(S_u))
    return symmetrize(out)


def assemble_saf_covariance(fit):
    """Assemble ``Lambda_hat S_Fhat Lambda_hat' + Sigma_u_tau`` and validate PD.

    ``S_Fhat`` is the (1/T, demeaned) sample covariance of the estimated
    factors.  An all-zero loading matrix degrades gracefully to the
    thresholded residual covariance alone.
    """
    lam = fit.loadings
    F = fit.factors
    Fc = F - F.mean(axis=0, keepdims=True)
    S_F = (Fc.T @ Fc) / F.shape[0]
    matrix = symmetrize(lam @ S_F @ lam.T + fit.sigma_u_tau)
    require_positive_definite(matrix, "assembled covariance")
    return CovarianceEstimate(
        matrix=matrix,
        estimator_id="saf",
        params={
            "mu": fit.config.mu,
            "r": fit.config.r,
            "tau": poet_threshold(*_fit_dims(fit)),
            "converged": fit.converged,
            "n_iter": fit.n_iter,
            "dropped_columns": fit.dropped_columns,
        },
    )


def _fit_dims(fit):
    return fit.loadings.shape[0], fit.factors.shape[0]


def saf_covariance(X, config=None, **overrides):
    """Convenience: fit then assemble; returns ``(estimate, fit)``."""
    fit = fit_saf(X, config, **overrides)
    return assemble_saf_covariance(fit), fit

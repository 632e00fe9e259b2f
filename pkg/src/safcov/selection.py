"""Choosing the factor count and the penalty level.

The factor count comes from the eigenvalue-difference rule: the largest
``r_hat`` whose gap between consecutive eigenvalues of the sample
covariance exceeds a threshold ``xi`` calibrated from the empirical
eigenvalue edge.  The penalty level minimizes a BIC-type information
criterion over a log-spaced grid with warm starts carried along the
path.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDimensions, NotPositiveDefinite
from .saf import FactorFit, demeaned_sample_cov, fit_saf
from .linalg import symmetrize

__all__ = [
    "FactorCountResult",
    "MuSelection",
    "select_num_factors",
    "count_from_gaps",
    "ic_penalty",
    "information_criterion",
    "select_mu",
]


@dataclass
class FactorCountResult:
    r_hat: int
    xi: float
    eigengaps: np.ndarray


@dataclass
class MuSelection:
    grid: np.ndarray
    ic_values: np.ndarray
    mu_star: float
    kappa_per_mu: np.ndarray
    converged_per_mu: np.ndarray
    best_fit: FactorFit


def count_from_gaps(eigenvalues, r_max, xi):
    """Largest ``r <= r_max`` whose eigengap exceeds ``xi`` (0 if none)."""
    ev = np.asarray(eigenvalues, dtype=np.float64)
    gaps = ev[:r_max] - ev[1:r_max + 1]
    qualifying = np.flatnonzero(gaps > xi)
    return (int(qualifying.max()) + 1) if qualifying.size else 0, gaps


def select_num_factors(X, r_max, xi=None):
    """Eigenvalue-difference factor-count selection.

    Parameters
    ----------
    X : (N, T) array_like
        Data panel, one row per series.
    r_max : int
        Upper bound for the factor count; needs ``r_max + 6 <= min(N, T)``
        because the threshold calibration regresses on eigenvalues past
        ``r_max``.
    xi : float, optional
        Fixed threshold override (test hook).  When omitted, ``xi`` is
        calibrated iteratively: eigenvalues ``j .. j+4`` (1-based, with
        ``j = r_max + 1`` initially) are regressed on ``(j-1)^(2/3)``,
        ``xi = 2 |slope|``, and ``j`` is re-anchored at ``r_hat + 1``
        until a fixed point (at most 10 rounds).

    Returns
    -------
    FactorCountResult
    """
    X = np.asarray(X, dtype=np.float64)
    N, T = X.shape
    if r_max + 6 > min(N, T):
        raise InsufficientDimensions(
            f"need r_max + 6 <= min(N, T); got r_max={r_max}, N={N}, T={T}")
    ev = np.sort(np.linalg.eigvalsh(symmetrize(demeaned_sample_cov(X))))[::-1]

    if xi is not None:
        r_hat, gaps = count_from_gaps(ev, r_max, xi)
        return FactorCountResult(r_hat=r_hat, xi=float(xi), eigengaps=gaps)

    j = r_max + 1
    r_hat, gaps, xi_val = 0, None, np.inf
    for _ in range(10):
        idx = np.arange(j, j + 5)              # 1-based positions j .. j+4
        slope = np.polyfit((idx - 1) ** (2.0 / 3.0), ev[idx - 1], 1)[0]
        xi_val = 2.0 * abs(float(slope))
        r_new, gaps = count_from_gaps(ev, r_max, xi_val)
        if r_new + 1 == j:
            r_hat = r_new
            break
        j = r_new + 1
        r_hat = r_new
    return FactorCountResult(r_hat=r_hat, xi=xi_val, eigengaps=gaps)


def ic_penalty(kappa, N, T):
    """Complexity penalty ``2 kappa sqrt(log N / N + log N / (N T))``."""
    return 2.0 * kappa * np.sqrt(np.log(N) / N + np.log(N) / (N * T))


def information_criterion(fit, S_x, N=None, T=None):
    """BIC-type criterion: full likelihood at the fit plus a sparsity penalty.

    The likelihood is ``log det(Sigma_tilde) + tr(S_x Sigma_tilde^(-1))``
    evaluated at ``Sigma_tilde = Lambda_hat S_Fhat Lambda_hat' +
    Sigma_u_tau`` (unnormalized); ``kappa`` counts the nonzero loading
    entries.
    """
    S_x = np.asarray(S_x, dtype=np.float64)
    if N is None:
        N = fit.loadings.shape[0]
    if T is None:
        T = fit.factors.shape[0]
    lam = fit.loadings
    F = fit.factors
    Fc = F - F.mean(axis=0, keepdims=True)
    S_F = (Fc.T @ Fc) / F.shape[0]
    sigma = symmetrize(lam @ S_F @ lam.T + fit.sigma_u_tau)
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        raise NotPositiveDefinite("fitted covariance is not positive definite")
    likelihood = float(logdet) + float(np.trace(np.linalg.solve(sigma, S_x)))
    kappa = int(np.count_nonzero(lam))
    return likelihood + ic_penalty(kappa, N, T), kappa


def select_mu(X, r, grid_size=30, decades=3.0, mu_probe=0.1, **fit_kwargs):
    """Pick the penalty level by grid search on the information criterion.

    The grid upper end ``mu_max`` is the first penalty (found by
    doubling from ``mu_probe``) at which the fitted loadings are
    entirely zero; the grid spans ``decades`` orders of magnitude below
    it, log-spaced.  Fits are warm-started from the previous grid
    point's solution.  Ties in the criterion break toward the smallest
    penalty.  Grid points whose fit raises are recorded as failed and
    excluded from the argmin; hitting the iteration budget is not a
    failure (the best iterate is used and flagged).

    Returns
    -------
    MuSelection
    """
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    N, T = X.shape
    S = demeaned_sample_cov(X)

    base_kwargs = dict(fit_kwargs)
    base_kwargs["max_outer_iter"] = min(100, fit_kwargs.get("max_outer_iter", 100))
    base = fit_saf(X, r=r, mu=0.0, **base_kwargs)
    warm0 = (base.loadings, base.phi_u)

    mu = mu_probe
    for _ in range(60):
        probe = fit_saf(X, r=r, mu=mu, warm_start=warm0, **fit_kwargs)
        if not np.any(probe.loadings):
            break
        mu *= 2.0
    mu_max = mu

    if grid_size == 1:
        grid = np.array([mu_max])
    else:
        grid = np.geomspace(mu_max * 10.0 ** (-decades), mu_max, grid_size)

    ic_values = np.full(grid_size, np.nan)
    kappas = np.zeros(grid_size, dtype=int)
    converged = np.zeros(grid_size, dtype=bool)
    best = (np.inf, None, None)
    warm = warm0
    for i, g in enumerate(grid):
        try:
            fit = fit_saf(X, r=r, mu=float(g), warm_start=warm, **fit_kwargs)
            ic, kappa = information_criterion(fit, S, N, T)
        except Exception:
            continue
        warm = (fit.loadings, fit.phi_u)
        ic_values[i] = ic
        kappas[i] = kappa
        converged[i] = fit.converged
        if ic < best[0] - 1e-12:
            best = (ic, float(g), fit)

    if best[1] is None:
        raise NotPositiveDefinite("every grid point failed; no penalty selected")
    return MuSelection(
        grid=grid,
        ic_values=ic_values,
        mu_star=best[1],
        kappa_per_mu=kappas,
        converged_per_mu=converged,
        best_fit=best[2],
    )

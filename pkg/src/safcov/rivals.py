"""Comparison covariance estimators.

Eight benchmark estimators used alongside the penalized factor model:

- :func:`sample_cov` — demeaned 1/T sample covariance;
- :func:`sim_cov` — single-index model with one observed (or proxied)
  market factor;
- :func:`ff3f_cov` — three observed factors, multivariate regression;
- :func:`lw_shrinkage` — linear shrinkage of the sample covariance
  toward the single-index covariance, plug-in intensity;
- :func:`kdm_precision` — convex combination of the inverted sample
  covariance, the identity, and the inverted single-index covariance,
  weights picked by cross-validated portfolio variance;
- :func:`adz_design_free` — sample eigenvectors recombined with
  split-sample eigenvalue replacements;
- :func:`st_threshold_cov` — soft-thresholded sample covariance with a
  cross-validated threshold;
- :func:`bt_sparse_cov` — l1-penalized covariance likelihood solved by
  the same majorize-minimize scheme as the factor module.

All estimators share the 1/T demeaned covariance convention; when no
observed market series is supplied, the equal-weighted cross-sectional
average return stands in for it.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateInput,
    InsufficientDimensions,
    NonConvergence,
)
from .linalg import (
    eigh_desc,
    frobenius_norm,
    is_positive_definite,
    require_positive_definite,
    soft_threshold,
    spectral_norm,
    symmetrize,
)
from .saf import CovarianceEstimate, demeaned_sample_cov

__all__ = [
    "ObservedFactors",
    "ShrinkageDiagnostics",
    "market_proxy",
    "sample_cov",
    "sim_regressions",
    "sim_cov",
    "ff3f_cov",
    "lw_shrinkage",
    "kdm_candidate_grid",
    "kdm_cv_scores",
    "kdm_precision",
    "adz_design_free",
    "st_cv_scores",
    "st_threshold_cov",
    "bt_sparse_cov",
]


@dataclass(frozen=True)
class ObservedFactors:
    """Observed factor series for the single-index and 3-factor models.

    Parameters
    ----------
    series : (T, q) array_like
        One column per factor, q in {1, 3}.  q=1 holds the market excess
        return; q=3 adds the size and value spread portfolios.
    labels : sequence of str
        One name per column.
    """

    series: np.ndarray
    labels: tuple

    def __post_init__(self):
        series = np.asarray(self.series, dtype=np.float64)
        if series.ndim == 1:
            series = series[:, None]
        if series.ndim != 2:
            raise DegenerateInput("factor series must form a T x q matrix")
        if series.shape[1] not in (1, 3):
            raise DegenerateInput("supported factor counts are q=1 and q=3, "
                                  f"got q={series.shape[1]}")
        labels = tuple(str(name) for name in self.labels)
        if len(labels) != series.shape[1]:
            raise DegenerateInput("need exactly one label per factor column")
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "labels", labels)

    @property
    def q(self):
        return self.series.shape[1]


@dataclass(frozen=True)
class ShrinkageDiagnostics:
    """Chosen tuning values of the shrinkage-type estimators.

    Only the field belonging to the producing estimator is set: the
    shrinkage intensity ``alpha_star`` (weight on the sample covariance),
    the precision-combination weights ``zeta``, the soft-threshold level
    ``kappa``, or the covariance-penalty level ``alpha_n``.
    """

    alpha_star: float = None
    zeta: tuple = None
    kappa: float = None
    alpha_n: float = None


def market_proxy(X):
    """Equal-weighted cross-sectional average return, one value per period."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DegenerateInput("panel must be a 2-d N x T array")
    return X.mean(axis=0)


def _market_series(X, factors):
    """Resolve the market series: observed q=1 factor or the panel proxy."""
    X = np.asarray(X, dtype=np.float64)
    if factors is None:
        f = market_proxy(X)
    else:
        if factors.q != 1:
            raise DegenerateInput("single-index estimators need exactly one "
                                  f"observed factor, got q={factors.q}")
        f = factors.series[:, 0]
        if f.shape[0] != X.shape[1]:
            raise DegenerateInput("factor series length must match the panel "
                                  f"width ({f.shape[0]} != {X.shape[1]})")
    fc = f - f.mean()
    if float(fc @ fc) <= 0.0:
        raise DegenerateInput("market factor has zero variance")
    return f


def sample_cov(X):
    """Demeaned 1/T sample covariance, tagged with a definiteness flag.

    The flag in ``params["pd"]`` is False whenever the matrix is rank
    deficient, which is automatic for N >= T.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DegenerateInput("panel must be a 2-d N x T array")
    if X.shape[1] < 2:
        raise DegenerateInput("need at least two observations")
    S = symmetrize(demeaned_sample_cov(X))
    return CovarianceEstimate(
        matrix=S,
        estimator_id="sample",
        params={"pd": bool(is_positive_definite(S))},
    )


def sim_regressions(X, market):
    """Per-asset market regressions behind the single-index covariance.

    Parameters
    ----------
    X : (N, T) array_like
        Return panel.
    market : (T,) array_like
        Market return series.

    Returns
    -------
    beta : (N,) ndarray
        Slopes of the per-asset regressions (intercepts are absorbed by
        demeaning and do not enter the covariance).
    resid_var : (N,) ndarray
        Residual variances with a 1e-8 floor.
    sigma_f : float
        1/T sample variance of the market series.
    """
    X = np.asarray(X, dtype=np.float64)
    T = X.shape[1]
    f = np.asarray(market, dtype=np.float64)
    Xc = X - X.mean(axis=1, keepdims=True)
    fc = f - f.mean()
    sigma_f = float(fc @ fc) / T
    if sigma_f <= 0.0:
        raise DegenerateInput("market factor has zero variance")
    beta = (Xc @ fc) / T / sigma_f
    resid = Xc - beta[:, None] * fc[None, :]
    resid_var = np.maximum((resid ** 2).sum(axis=1) / T, 1e-8)
    return beta, resid_var, sigma_f


def sim_cov(X, factors=None):
    """Single-index covariance ``sigma_f beta beta' + D``.

    ``D`` is the diagonal of floored residual variances; with the floor
    strictly positive the output is positive definite.
    """
    f = _market_series(X, factors)
    beta, resid_var, sigma_f = sim_regressions(X, f)
    matrix = symmetrize(sigma_f * np.outer(beta, beta) + np.diag(resid_var))
    return CovarianceEstimate(
        matrix=matrix,
        estimator_id="sim",
        params={"sigma_f": sigma_f,
                "proxy_market": factors is None},
    )


def ff3f_cov(X, factors):
    """Three-factor covariance ``B Sigma_F B' + D``.

    Slopes come from the multivariate regression of each asset on the
    three observed factors (with intercept, absorbed by demeaning);
    ``Sigma_F`` is the demeaned 1/T covariance of the factors and ``D``
    the diagonal of floored residual variances.
    """
    X = np.asarray(X, dtype=np.float64)
    if factors is None or factors.q != 3:
        raise DegenerateInput("three observed factor series are required")
    F = factors.series
    T = X.shape[1]
    if F.shape[0] != T:
        raise DegenerateInput("factor series length must match the panel "
                              f"width ({F.shape[0]} != {T})")
    Fc = F - F.mean(axis=0, keepdims=True)
    if np.linalg.matrix_rank(Fc) < F.shape[1]:
        raise DegenerateInput("observed factors are collinear")
    Sigma_F = (Fc.T @ Fc) / T
    Xc = X - X.mean(axis=1, keepdims=True)
    beta = np.linalg.solve(Fc.T @ Fc, Fc.T @ Xc.T).T
    resid = Xc - beta @ Fc.T
    resid_var = np.maximum((resid ** 2).sum(axis=1) / T, 1e-8)
    matrix = symmetrize(beta @ Sigma_F @ beta.T + np.diag(resid_var))
    return CovarianceEstimate(
        matrix=matrix,
        estimator_id="ff3f",
        params={"labels": list(factors.labels)},
    )


def lw_shrinkage(X, factors=None, *, alpha_override=None):
    """Linear shrinkage of the sample covariance toward the single-index one.

    Returns the combination ``alpha* S_x + (1 - alpha*) Sigma_SIM``.
    The intensity estimate weighs the sampling error of S_x (pi-hat)
    against the error covariance of the two estimators (rho-hat) and the
    target's misspecification (gamma-hat, squared Frobenius distance);
    the resulting weight on the target is ``(pi - rho) / (T gamma)``,
    clipped to [0, 1].

    Parameters
    ----------
    X : (N, T) array_like
        Return panel.
    factors : ObservedFactors, optional
        q=1 market series; the cross-sectional average return is used
        when absent.
    alpha_override : float, optional
        Skip estimation and use this weight on the sample covariance
        (test hook; clipped to [0, 1]).

    Returns
    -------
    (CovarianceEstimate, ShrinkageDiagnostics)
    """
    X = np.asarray(X, dtype=np.float64)
    N, T = X.shape
    f = _market_series(X, factors)
    S = symmetrize(demeaned_sample_cov(X))
    target = sim_cov(X, factors).matrix

    if alpha_override is not None:
        alpha_star = float(np.clip(alpha_override, 0.0, 1.0))
    else:
        Xc = X - X.mean(axis=1, keepdims=True)
        fc = f - f.mean()
        s_mm = float(fc @ fc) / T
        # pi-hat: total sampling variance of the covariance entries.
        W = Xc[:, None, :] * Xc[None, :, :]
        pi_mat = ((W - S[:, :, None]) ** 2).mean(axis=2)
        pi_hat = float(pi_mat.sum())
        # rho-hat: diagonal terms plus the delta-method covariance of
        # the target entries f_ij = s_im s_jm / s_mm with s_ij.
        s_im = (Xc * fc[None, :]).mean(axis=1)
        w_im = Xc * fc[None, :]
        w_mm = fc * fc
        term = ((s_im[:, None, None] / s_mm)
                * (w_im[None, :, :] - s_im[None, :, None])
                + (s_im[None, :, None] / s_mm)
                * (w_im[:, None, :] - s_im[:, None, None])
                - (np.outer(s_im, s_im)[:, :, None] / s_mm ** 2)
                * (w_mm - s_mm)[None, None, :])
        rho_mat = (term * (W - S[:, :, None])).mean(axis=2)
        rho_hat = float(np.trace(pi_mat)
                        + (rho_mat.sum() - np.trace(rho_mat)))
        gamma_hat = float(((target - S) ** 2).sum())
        if gamma_hat <= 0.0:
            delta = 0.0  # target equals the sample covariance already
        else:
            delta = (pi_hat - rho_hat) / gamma_hat / T
        delta = float(np.clip(delta, 0.0, 1.0))
        alpha_star = 1.0 - delta

    matrix = symmetrize(alpha_star * S + (1.0 - alpha_star) * target)
    estimate = CovarianceEstimate(
        matrix=matrix,
        estimator_id="lw",
        params={"alpha_star": alpha_star,
                "proxy_market": factors is None},
    )
    return estimate, ShrinkageDiagnostics(alpha_star=alpha_star)


def kdm_candidate_grid(spacing=0.1):
    """Nonnegative weight triples summing to one, on a grid of the simplex.

    With the default spacing 0.1 this enumerates 66 candidates including
    the three vertices, in a fixed lexicographic order.
    """
    steps = int(round(1.0 / spacing))
    if abs(steps * spacing - 1.0) > 1e-9 or steps < 1:
        raise ValueError("spacing must divide 1 evenly")
    grid = []
    for i in range(steps + 1):
        for j in range(steps + 1 - i):
            k = steps - i - j
            grid.append((round(i * spacing, 10),
                         round(j * spacing, 10),
                         round(k * spacing, 10)))
    return grid


def _kdm_components(X, market):
    """The three precision-matrix ingredients on a (sub)panel."""
    N, T = X.shape
    S = symmetrize(demeaned_sample_cov(X))
    if N < T and is_positive_definite(S):
        S_inv = np.linalg.inv(S)
    else:
        S_inv = np.linalg.pinv(S, hermitian=True)
    beta, resid_var, sigma_f = sim_regressions(X, market)
    sim_matrix = sigma_f * np.outer(beta, beta) + np.diag(resid_var)
    sim_inv = np.linalg.inv(sim_matrix)
    return symmetrize(S_inv), symmetrize(sim_inv)


def _gmvp_from_precision(P):
    """Normalized weights ``P1 / (1'P1)``; None when the normalizer vanishes."""
    ones = np.ones(P.shape[0])
    num = P @ ones
    denom = float(ones @ num)
    if not np.isfinite(denom) or abs(denom) < 1e-12:
        return None
    return num / denom


def kdm_cv_scores(X, factors=None, v_folds=5, candidates=None):
    """Cross-validated portfolio variance of each precision combination.

    The panel is split into ``v_folds`` contiguous time blocks; each
    block in turn is held out, the precision ingredients are built on
    the remaining columns, and every candidate weight triple is scored
    by the variance of its minimum-variance portfolio over the held-out
    block.  Scores are summed over blocks.

    Returns
    -------
    (list of triples, (n_candidates,) ndarray)
    """
    X = np.asarray(X, dtype=np.float64)
    N, T = X.shape
    market = _market_series(X, factors)
    bounds = np.linspace(0, T, v_folds + 1).astype(int)
    widths = np.diff(bounds)
    if widths.min() < 2 or T - widths.max() < 2:
        raise DegenerateInput("panel too short for "
                              f"{v_folds}-fold cross-validation (T={T})")
    if candidates is None:
        candidates = kdm_candidate_grid()
    scores = np.zeros(len(candidates))
    eye = np.eye(N)
    for v in range(v_folds):
        held = np.zeros(T, dtype=bool)
        held[bounds[v]:bounds[v + 1]] = True
        S_inv, sim_inv = _kdm_components(X[:, ~held], market[~held])
        X_val = X[:, held]
        for ci, (z1, z2, z3) in enumerate(candidates):
            P = z1 * S_inv + z2 * eye + z3 * sim_inv
            w = _gmvp_from_precision(P)
            if w is None:
                scores[ci] = np.inf
                continue
            port = w @ X_val
            scores[ci] += float(((port - port.mean()) ** 2).mean())
    return candidates, scores


def kdm_precision(X, factors=None, *, zeta=None, v_folds=5):
    """Precision matrix ``z1 S_x^(-1) + z2 I + z3 Sigma_SIM^(-1)``.

    The sample term uses the pseudo-inverse when the sample covariance
    is rank deficient (N >= T).  Weights come from
    :func:`kdm_cv_scores` unless forced through ``zeta`` (test hook).

    Returns
    -------
    (ndarray, ShrinkageDiagnostics)
        The combined N x N precision matrix and the chosen weights.
    """
    X = np.asarray(X, dtype=np.float64)
    N, T = X.shape
    market = _market_series(X, factors)
    if zeta is None:
        candidates, scores = kdm_cv_scores(X, factors, v_folds)
        zeta = candidates[int(np.argmin(scores))]
    z1, z2, z3 = (float(z) for z in zeta)
    S_inv, sim_inv = _kdm_components(X, market)
    P = symmetrize(z1 * S_inv + z2 * np.eye(N) + z3 * sim_inv)
    return P, ShrinkageDiagnostics(zeta=(z1, z2, z3))


def adz_design_free(X, split_n=None):
    """Sample eigenvectors recombined with split-sample eigenvalues.

    The panel splits into a first block of ``split_n`` columns and the
    remainder.  Eigenvectors of the first block's covariance rotate the
    second block's covariance; the diagonal of that rotation replaces
    the eigenvalues of the full-sample covariance, whose eigenvectors
    are kept:

        Sigma_hat = Gamma  diag(Gamma_1' S_2 Gamma_1)  Gamma'

    with Gamma from S_x and Gamma_1 from S_1.  Because the replacement
    values are diagonal entries of a PSD rotation, the output is PSD.

    Parameters
    ----------
    X : (N, T) array_like
        Return panel.
    split_n : int, optional
        Width of the first block, default ``T // 2``; must leave at
        least two columns on each side.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DegenerateInput("panel must be a 2-d N x T array")
    N, T = X.shape
    if split_n is None:
        split_n = T // 2
    split_n = int(split_n)
    if not 2 <= split_n <= T - 2:
        raise InsufficientDimensions(
            "split point must leave at least two observations on each side "
            f"(split_n={split_n}, T={T})")
    S = demeaned_sample_cov(X)
    _, Gamma = eigh_desc(S)
    S1 = demeaned_sample_cov(X[:, :split_n])
    _, Gamma1 = eigh_desc(S1)
    S2 = demeaned_sample_cov(X[:, split_n:])
    p_tilde = np.sum(Gamma1 * (S2 @ Gamma1), axis=0)
    matrix = symmetrize((Gamma * p_tilde) @ Gamma.T)
    return CovarianceEstimate(
        matrix=matrix,
        estimator_id="adz",
        params={"split_n": split_n},
    )


def _threshold_offdiag(S, kappa):
    """Soft-threshold every off-diagonal entry, keep the diagonal."""
    out = soft_threshold(S, kappa)
    np.fill_diagonal(out, np.diag(S))
    return out


def st_cv_scores(X, v_folds=3, grid_size=20):
    """Cross-validation objective of the soft-threshold level.

    The threshold grid is linear on ``[0, max off-diagonal of S_x]``.
    For each of ``v_folds`` contiguous blocks, the block's own
    covariance is thresholded and scored by Frobenius distance to the
    full-sample covariance; block scores are summed.

    Returns
    -------
    (grid, scores) : ((grid_size,) ndarray, (grid_size,) ndarray)
    """
    X = np.asarray(X, dtype=np.float64)
    N, T = X.shape
    if T < 4:
        raise DegenerateInput("need T >= 4 for the threshold cross-validation")
    S = symmetrize(demeaned_sample_cov(X))
    off = np.abs(S - np.diag(np.diag(S)))
    kappa_max = float(off.max()) if N > 1 else 0.0
    grid = np.linspace(0.0, kappa_max, grid_size)
    bounds = np.linspace(0, T, v_folds + 1).astype(int)
    scores = np.zeros(grid_size)
    for v in range(v_folds):
        S_v = demeaned_sample_cov(X[:, bounds[v]:bounds[v + 1]])
        for gi, kappa in enumerate(grid):
            scores[gi] += frobenius_norm(_threshold_offdiag(S_v, kappa) - S)
    return grid, scores


def st_threshold_cov(X, *, v_folds=3, grid_size=20):
    """Soft-thresholded sample covariance with a cross-validated level.

    Off-diagonals of S_x shrink toward zero by the chosen level; the
    diagonal never changes.  Ties on the score grid resolve to the
    smallest level.

    Returns
    -------
    (CovarianceEstimate, ShrinkageDiagnostics)
    """
    grid, scores = st_cv_scores(X, v_folds=v_folds, grid_size=grid_size)
    kappa = float(grid[int(np.argmin(scores))])
    S = symmetrize(demeaned_sample_cov(np.asarray(X, dtype=np.float64)))
    matrix = symmetrize(_threshold_offdiag(S, kappa))
    return (
        CovarianceEstimate(matrix=matrix, estimator_id="st",
                           params={"kappa": kappa}),
        ShrinkageDiagnostics(kappa=kappa),
    )


_BT_ACCEPT_SLACK = 1e-10
_BT_MAX_HALVINGS = 30


def _bt_objective(Sigma, S, alpha_n):
    """Penalized covariance likelihood; LinAlgError when Sigma is not PD."""
    cho = scipy.linalg.cho_factor(Sigma, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    trace = float(np.trace(scipy.linalg.cho_solve(cho, S)))
    off_l1 = float(np.abs(Sigma).sum() - np.abs(np.diag(Sigma)).sum())
    return logdet + trace + alpha_n * off_l1, cho


def _bt_start(S):
    """A positive definite starting covariance: S, ridged if necessary."""
    if is_positive_definite(S):
        return S.copy()
    N = S.shape[0]
    eps = 1e-4 * max(1.0, float(np.diag(S).max()))
    for _ in range(60):
        Sigma = S + eps * np.eye(N)
        if is_positive_definite(Sigma):
            return Sigma
        eps *= 4.0
    raise NonConvergence("no positive definite starting covariance found")


def _bt_mm(S, alpha_n, step_t, conv_tol, max_iter):
    """Majorize-minimize loop on the covariance itself.

    The concave log-determinant is replaced by its tangent plane at the
    current iterate, the gradient step is soft-thresholded on the
    off-diagonals only, and a step-halving safeguard enforces objective
    descent; on stagnation the previous iterate is kept.
    """
    Sigma = _bt_start(S)
    obj, cho = _bt_objective(Sigma, S, alpha_n)
    trace = [obj]
    converged = False
    eye = np.eye(S.shape[0])
    for _ in range(max_iter):
        P = scipy.linalg.cho_solve(cho, eye)
        G = symmetrize(P - P @ S @ P)
        t = step_t
        accepted = False
        for _ in range(_BT_MAX_HALVINGS + 1):
            cand = soft_threshold(Sigma - t * G, t * alpha_n)
            np.fill_diagonal(cand, np.diag(Sigma) - t * np.diag(G))
            cand = symmetrize(cand)
            try:
                obj_new, cho_new = _bt_objective(cand, S, alpha_n)
            except scipy.linalg.LinAlgError:
                t /= 2.0
                continue
            if obj_new <= trace[-1] + _BT_ACCEPT_SLACK:
                accepted = True
                break
            t /= 2.0
        if not accepted:
            break
        delta = cand - Sigma
        Sigma, obj, cho = cand, obj_new, cho_new
        trace.append(obj)
        if spectral_norm(delta) < conv_tol:
            converged = True
            break
    return Sigma, np.asarray(trace), len(trace) - 1, converged


def _bt_select_alpha(X, v_folds, step_t, conv_tol, max_iter):
    """Pick the penalty level by V-fold held-out likelihood."""
    X = np.asarray(X, dtype=np.float64)
    N, T = X.shape
    S = symmetrize(demeaned_sample_cov(X))
    d = np.diag(S)
    scale = np.abs(S / np.outer(d, d))
    np.fill_diagonal(scale, 0.0)
    alpha_max = float(scale.max())
    if alpha_max <= 0.0:
        return 0.0
    grid = np.concatenate(([0.0], np.geomspace(alpha_max / 100.0,
                                               alpha_max, 8)))
    bounds = np.linspace(0, T, v_folds + 1).astype(int)
    widths = np.diff(bounds)
    if widths.min() < 2 or T - widths.max() < 2:
        raise DegenerateInput("panel too short for "
                              f"{v_folds}-fold cross-validation (T={T})")
    scores = np.zeros(grid.size)
    for v in range(v_folds):
        held = np.zeros(T, dtype=bool)
        held[bounds[v]:bounds[v + 1]] = True
        S_train = symmetrize(demeaned_sample_cov(X[:, ~held]))
        S_val = symmetrize(demeaned_sample_cov(X[:, held]))
        for gi, alpha in enumerate(grid):
            Sigma, _, _, _ = _bt_mm(S_train, float(alpha), step_t,
                                    conv_tol, max_iter)
            cho = scipy.linalg.cho_factor(Sigma, lower=True)
            logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
            scores[gi] += logdet + float(
                np.trace(scipy.linalg.cho_solve(cho, S_val)))
    return float(grid[int(np.argmin(scores))])


def bt_sparse_cov(X, alpha_n=None, *, v_folds=5, step_t=0.01,
                  conv_tol=1e-6, max_iter=500, return_trace=False):
    """l1-penalized covariance likelihood estimate.

    Minimizes ``log det(Sigma) + tr(Sigma^(-1) S_x) + alpha_n *
    sum_{i != j} |sigma_ij|`` over positive definite matrices by the
    majorize-minimize scheme of the factor module applied to the
    covariance directly.  The penalty touches off-diagonals only, so the
    estimate is sparse off the diagonal; positive definiteness is
    validated on the result.

    Parameters
    ----------
    X : (N, T) array_like
        Return panel.
    alpha_n : float, optional
        Penalty level; chosen by ``v_folds``-fold held-out likelihood
        when omitted.
    return_trace : bool
        When True, also return the per-iteration objective values.

    Returns
    -------
    CovarianceEstimate, or (CovarianceEstimate, ndarray) with the trace.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DegenerateInput("panel must be a 2-d N x T array")
    if alpha_n is None:
        alpha_n = _bt_select_alpha(X, v_folds, step_t, conv_tol, max_iter)
    if alpha_n < 0:
        raise ValueError("penalty alpha_n must be nonnegative")
    S = symmetrize(demeaned_sample_cov(X))
    Sigma, trace, n_iter, converged = _bt_mm(S, float(alpha_n), step_t,
                                             conv_tol, max_iter)
    matrix = symmetrize(Sigma)
    require_positive_definite(matrix, "penalized covariance estimate")
    estimate = CovarianceEstimate(
        matrix=matrix,
        estimator_id="bt",
        params={"alpha_n": float(alpha_n),
                "converged": converged,
                "n_iter": n_iter},
    )
    if return_trace:
        return estimate, trace
    return estimate

"""String-keyed estimator registry shared by the lab, backtester, and CLI.

Every estimator is reachable through :func:`estimate` with a panel and
an optional context dict.  Context keys consumed by individual
estimators:

- ``sigma_true`` — population covariance, required by ``oracle``;
- ``factors`` — :class:`~safcov.rivals.ObservedFactors` for the
  observed-factor estimators (a cross-sectional proxy substitutes for
  the market series when absent);
- ``r`` / ``mu`` — fixed factor count / penalty level for ``saf``
  (skips the automatic selection);
- ``r_max`` — cap of the factor-count search (default 8);
- ``split_n`` — split point for ``adz``;
- ``alpha_n`` — penalty level for ``bt`` (skips its cross-validation).

``kdm`` returns a precision matrix; everything else returns a
covariance matrix.  The boolean second return value of
:func:`estimate` says which one you received.
"""

import numpy as np

from .errors import DegenerateInput
from . import rivals
from .saf import assemble_saf_covariance, fit_saf
from .selection import select_mu, select_num_factors

__all__ = [
    "available_estimators",
    "require_known",
    "estimate",
    "returns_precision",
]

_DEFAULT_R_MAX = 8


def _ctx(context):
    return {} if context is None else context


def _est_saf(X, context):
    """Full pipeline: factor count, penalty level, assembled covariance."""
    context = _ctx(context)
    r = context.get("r")
    if r is None:
        r_max = context.get("r_max", _DEFAULT_R_MAX)
        result = select_num_factors(X, r_max=r_max)
        r = max(result.r_hat, 1)
    mu = context.get("mu")
    if mu is None:
        selection = select_mu(X, r)
        fit = selection.best_fit
    else:
        fit = fit_saf(X, r=r, mu=float(mu))
    return assemble_saf_covariance(fit).matrix


def _est_oracle(X, context):
    context = _ctx(context)
    sigma_true = context.get("sigma_true")
    if sigma_true is None:
        raise DegenerateInput("oracle estimator needs sigma_true in context")
    return np.array(sigma_true, dtype=np.float64, copy=True)


def _est_eqw(X, context):
    # Identity covariance: its minimum-variance weights are exactly 1/N.
    return np.eye(X.shape[0])


def _est_sample(X, context):
    return rivals.sample_cov(X).matrix


def _market_only(factors):
    """First column of a 3-factor set (the market series) as q=1."""
    if factors is None or factors.q == 1:
        return factors
    return rivals.ObservedFactors(series=factors.series[:, :1],
                                  labels=factors.labels[:1])


def _est_lw(X, context):
    estimate, _ = rivals.lw_shrinkage(
        X, _market_only(_ctx(context).get("factors")))
    return estimate.matrix


def _est_kdm(X, context):
    precision, _ = rivals.kdm_precision(
        X, _market_only(_ctx(context).get("factors")))
    return precision


def _est_adz(X, context):
    return rivals.adz_design_free(X, _ctx(context).get("split_n")).matrix


def _est_st(X, context):
    estimate, _ = rivals.st_threshold_cov(X)
    return estimate.matrix


def _est_bt(X, context):
    return rivals.bt_sparse_cov(X, _ctx(context).get("alpha_n")).matrix


def _est_sim(X, context):
    return rivals.sim_cov(X, _market_only(_ctx(context).get("factors"))).matrix


def _est_ff3f(X, context):
    factors = _ctx(context).get("factors")
    if factors is None:
        raise DegenerateInput("ff3f needs three observed factor series")
    return rivals.ff3f_cov(X, factors).matrix


#: id -> (function, returns_precision)
_REGISTRY = {
    "saf": (_est_saf, False),
    "sample": (_est_sample, False),
    "lw": (_est_lw, False),
    "kdm": (_est_kdm, True),
    "adz": (_est_adz, False),
    "st": (_est_st, False),
    "bt": (_est_bt, False),
    "sim": (_est_sim, False),
    "ff3f": (_est_ff3f, False),
    "eqw": (_est_eqw, False),
    "oracle": (_est_oracle, False),
}


def available_estimators():
    """All registered estimator ids, in registry order."""
    return tuple(_REGISTRY)


def require_known(estimator_id):
    """Raise ``KeyError`` with the valid ids when the id is unknown."""
    if estimator_id not in _REGISTRY:
        raise KeyError(f"unknown estimator {estimator_id!r}; "
                       f"available: {', '.join(_REGISTRY)}")


def returns_precision(estimator_id):
    """True when the estimator emits a precision (inverse) matrix."""
    require_known(estimator_id)
    return _REGISTRY[estimator_id][1]


def estimate(estimator_id, X, context=None):
    """Run a registered estimator on an N x T panel.

    Returns
    -------
    (matrix, is_precision)
        The N x N output and whether it is a precision matrix rather
        than a covariance matrix.
    """
    require_known(estimator_id)
    fn, is_precision = _REGISTRY[estimator_id]
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DegenerateInput("panel must be a 2-d N x T array")
    return fn(X, context), is_precision

"""Minimum-variance portfolio construction and rolling backtesting.

The global minimum-variance portfolio (GMVP) weights are

    w = Sigma^(-1) 1 / (1' Sigma^(-1) 1),

a function of the covariance matrix alone; shorting is allowed.  The
backtester rolls an h-period window over a monthly panel, refits each
estimator per period, records the out-of-sample portfolio return
series, and aggregates the paper-table metrics (annualized SD, AV, CE,
SR) plus pooled weight statistics per (estimator, subset size, repeat)
cell.  Random asset subsets are derived from ``(seed, repeat, size)``
only, so neither estimator order nor worker count can change results.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg

from .errors import DegenerateInput, NumericalBreakdown
from .linalg import require_positive_definite
from .saf import CovarianceEstimate
from . import registry

__all__ = [
    "BacktestConfig",
    "BacktestReport",
    "PerformanceMetrics",
    "WeightSummary",
    "gmvp_weights",
    "performance_metrics",
    "weight_summary",
    "expanding_sd_series",
    "run_backtest",
]


@dataclass(frozen=True)
class BacktestConfig:
    """Shape of one backtesting experiment.

    ``window_h`` trailing periods feed each fit; every combination of
    ``subset_sizes`` and ``n_repeats`` gets an independently drawn
    asset subset held fixed for the whole experiment.  ``gamma`` is the
    risk aversion of the certainty equivalent.
    """

    window_h: int = 60
    subset_sizes: tuple = (30,)
    n_repeats: int = 1
    seed: int = 0
    estimators: tuple = ("eqw",)
    annualization_periods: int = 12
    risk_aversion_gamma: float = 1.0
    jobs: int = 1

    def __post_init__(self):
        if self.window_h < 2:
            raise ValueError("window_h must be at least 2")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be positive")
        if not self.subset_sizes:
            raise ValueError("need at least one subset size")
        if not self.estimators:
            raise ValueError("need at least one estimator id")
        if self.annualization_periods < 1:
            raise ValueError("annualization_periods must be positive")
        object.__setattr__(self, "subset_sizes",
                           tuple(int(s) for s in self.subset_sizes))
        object.__setattr__(self, "estimators", tuple(self.estimators))


@dataclass(frozen=True)
class PerformanceMetrics:
    """Annualized performance numbers. ``sr`` is None on zero variance."""

    sd: float
    av: float
    ce: float
    sr: float = None


@dataclass(frozen=True)
class WeightSummary:
    """Pooled weight statistics: extrema, standard deviation, MAD."""

    w_min: float
    w_max: float
    w_sd: float
    w_mad: float


@dataclass
class BacktestReport:
    """Everything one backtest run produced.

    ``cells`` has one row per (estimator, subset size, repeat) with the
    aggregated metrics, pooled weight statistics, and an ``error``
    column (non-null when the estimator failed anywhere in the cell, in
    which case the whole cell is flagged).  ``series`` maps the same
    key triple to the stored out-of-sample return series of length
    T - h, from which every aggregate can be recomputed bit-identically.
    ``summary`` averages metrics across repeats per (estimator, size).
    """

    config: BacktestConfig
    cells: pd.DataFrame
    series: dict = field(default_factory=dict)
    summary: pd.DataFrame = None


def gmvp_weights(sigma, *, is_precision=False):
    """Minimum-variance weights of a covariance (or precision) matrix.

    Parameters
    ----------
    sigma : CovarianceEstimate or (N, N) array_like
        Covariance matrix, validated positive definite before the
        solve; or a precision matrix when ``is_precision`` is set (used
        by estimators that produce the inverse directly, where
        positive definiteness of the implied covariance is not
        assumed).

    Returns
    -------
    (N,) ndarray
        Weights summing to one exactly (renormalized after the solve);
        entries may be negative.
    """
    if isinstance(sigma, CovarianceEstimate):
        sigma = sigma.matrix
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DegenerateInput("need a square matrix")
    ones = np.ones(sigma.shape[0])
    if is_precision:
        raw = sigma @ ones
    else:
        require_positive_definite(sigma, "covariance for portfolio weights")
        cho = scipy.linalg.cho_factor(sigma, lower=True)
        raw = scipy.linalg.cho_solve(cho, ones)
    denom = float(ones @ raw)
    if not np.isfinite(denom) or denom <= 0.0:
        raise NumericalBreakdown(
            f"normalizer 1'Sigma^(-1)1 = {denom:.3e} is not positive")
    w = raw / denom
    return w / w.sum()


def performance_metrics(returns, *, periods=12, gamma=1.0):
    """Annualized SD, AV, CE, SR of a return series.

    The mean uses the series length n, the variance n - 1.  Annualized:
    ``AV = periods * mean``, ``SD = sqrt(periods) * sd``,
    ``CE = AV - (gamma / 2) * SD**2``, ``SR = AV / SD`` — the Sharpe
    ratio is None (missing) when the variance is zero.
    """
    r = np.asarray(returns, dtype=np.float64).ravel()
    n = r.size
    if n < 2:
        raise DegenerateInput("need at least two return observations")
    mu = r.mean()
    sigma2 = float(((r - mu) ** 2).sum()) / (n - 1)
    av = periods * float(mu)
    sd = float(np.sqrt(periods * sigma2))
    ce = av - 0.5 * gamma * sd ** 2
    sr = av / sd if sd > 0.0 else None
    return PerformanceMetrics(sd=sd, av=av, ce=ce, sr=sr)


def _displayed_aggregates(series, T_panel, periods, gamma):
    """Aggregates with the display convention: mean over T, variance over T-1.

    The backtest tables divide the sum of the T - h out-of-sample
    returns by the full panel length T and center the variance on that
    mean with divisor T - 1, exactly as the defining equation is
    written.
    """
    series = np.asarray(series, dtype=np.float64)
    mu = float(series.sum()) / T_panel
    sigma2 = float(((series - mu) ** 2).sum()) / (T_panel - 1)
    av = periods * mu
    sd = float(np.sqrt(periods * sigma2))
    ce = av - 0.5 * gamma * sd ** 2
    sr = av / sd if sd > 0.0 else None
    return PerformanceMetrics(sd=sd, av=av, ce=ce, sr=sr)


def weight_summary(weights):
    """Pooled weight statistics over all assets and periods.

    ``SD`` uses the n - 1 divisor; ``MAD`` is the mean absolute
    deviation from the pooled mean.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise DegenerateInput("need at least one weight")
    mean = w.mean()
    sd = float(w.std(ddof=1)) if w.size > 1 else 0.0
    return WeightSummary(
        w_min=float(w.min()),
        w_max=float(w.max()),
        w_sd=sd,
        w_mad=float(np.abs(w - mean).mean()),
    )


def expanding_sd_series(returns, start_index, *, periods=12):
    """Annualized SD of the growing prefix ``returns[0..t]``.

    One value per t from ``start_index`` (inclusive) to the end; each
    point is recomputed from scratch on the prefix with the n - 1
    divisor, so the final value equals the full-series
    :func:`performance_metrics` SD.
    """
    r = np.asarray(returns, dtype=np.float64).ravel()
    if start_index < 2:
        raise ValueError("start_index must be at least 2")
    if r.size <= start_index - 1:
        raise DegenerateInput("series shorter than the start index")
    out = np.empty(r.size - start_index)
    for k, t in enumerate(range(start_index, r.size)):
        prefix = r[: t + 1]
        mu = prefix.mean()
        sigma2 = float(((prefix - mu) ** 2).sum()) / (prefix.size - 1)
        out[k] = np.sqrt(periods * sigma2)
    return out


def _subset_for(seed, repeat, size, n_assets):
    """The asset subset of one (repeat, size) cell; estimator-independent."""
    rng = np.random.default_rng((seed, repeat, size))
    return np.sort(rng.choice(n_assets, size=size, replace=False))


def _run_cell(X, estimator_id, subset, window_h, periods, gamma,
              sigma_true, factors):
    """One (estimator, size, repeat) cell: roll the window, aggregate."""
    T = X.shape[1]
    Xs = X[subset]
    context = {}
    if sigma_true is not None:
        context["sigma_true"] = sigma_true[np.ix_(subset, subset)]
    n_out = T - window_h
    series = np.empty(n_out)
    weights = np.empty((n_out, subset.size))
    for k, t in enumerate(range(window_h, T)):
        window = Xs[:, t - window_h:t]
        if factors is not None:
            context["factors"] = type(factors)(
                series=factors.series[t - window_h:t],
                labels=factors.labels)
        matrix, is_precision = registry.estimate(estimator_id, window,
                                                 context)
        w = gmvp_weights(matrix, is_precision=is_precision)
        weights[k] = w
        series[k] = float(w @ Xs[:, t])
    metrics = _displayed_aggregates(series, T, periods, gamma)
    wstats = weight_summary(weights)
    return series, metrics, wstats


def _run_cell_job(args):
    """Worker wrapper: returns the cell key plus results or the error."""
    (X, estimator_id, size, repeat, subset, window_h, periods, gamma,
     sigma_true, factors) = args
    key = (estimator_id, size, repeat)
    try:
        series, metrics, wstats = _run_cell(
            X, estimator_id, subset, window_h, periods, gamma,
            sigma_true, factors)
        return key, series, metrics, wstats, None
    except Exception as exc:
        return key, None, None, None, f"{type(exc).__name__}: {exc}"


def run_backtest(panel, cfg, *, riskfree=None, factors=None,
                 sigma_true=None):
    """Rolling-window out-of-sample GMVP experiment.

    Parameters
    ----------
    panel : (N, T) array_like
        Monthly return panel, one row per asset.
    cfg : BacktestConfig
        Window length, subset sizes, repeats, estimator ids, seeds.
    riskfree : (T,) array_like, optional
        Per-period risk-free rate, subtracted from every asset to form
        excess returns.
    factors : ObservedFactors, optional
        Observed factor series aligned with the panel columns; sliced
        to each fitting window for the estimators that use them.
    sigma_true : (N, N) array_like, optional
        Population covariance for the ``oracle`` estimator, subset per
        cell.

    Returns
    -------
    BacktestReport
        Per-cell metrics, stored return series, and the per
        (estimator, size) averages across repeats.  An estimator
        failure anywhere inside a cell flags that entire cell; other
        cells are unaffected.
    """
    X = np.asarray(panel, dtype=np.float64)
    if X.ndim != 2:
        raise DegenerateInput("panel must be a 2-d N x T array")
    N, T = X.shape
    if cfg.window_h >= T:
        raise DegenerateInput(
            f"window_h={cfg.window_h} must be smaller than T={T}")
    for estimator_id in cfg.estimators:
        registry.require_known(estimator_id)
    for size in cfg.subset_sizes:
        if size > N:
            raise DegenerateInput(f"subset size {size} exceeds N={N}")
    if riskfree is not None:
        rf = np.asarray(riskfree, dtype=np.float64).ravel()
        if rf.size != T:
            raise DegenerateInput("risk-free series length must equal T")
        X = X - rf[None, :]
    if sigma_true is not None:
        sigma_true = np.asarray(sigma_true, dtype=np.float64)
    if factors is not None and factors.series.shape[0] != T:
        raise DegenerateInput("factor series length must equal T")

    jobs = []
    for size in cfg.subset_sizes:
        for repeat in range(cfg.n_repeats):
            subset = _subset_for(cfg.seed, repeat, size, N)
            for estimator_id in cfg.estimators:
                jobs.append((X, estimator_id, size, repeat, subset,
                             cfg.window_h, cfg.annualization_periods,
                             cfg.risk_aversion_gamma, sigma_true, factors))

    if cfg.jobs == 1:
        results = [_run_cell_job(args) for args in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_cell_job, jobs))

    rows = []
    series_store = {}
    for key, series, metrics, wstats, error in results:
        estimator_id, size, repeat = key
        if error is None:
            series_store[key] = series
            rows.append({
                "estimator_id": estimator_id, "size": size,
                "repeat": repeat,
                "sd": metrics.sd, "av": metrics.av,
                "ce": metrics.ce, "sr": metrics.sr,
                "w_min": wstats.w_min, "w_max": wstats.w_max,
                "w_sd": wstats.w_sd, "w_mad": wstats.w_mad,
                "error": None,
            })
        else:
            rows.append({
                "estimator_id": estimator_id, "size": size,
                "repeat": repeat,
                "sd": np.nan, "av": np.nan, "ce": np.nan, "sr": None,
                "w_min": np.nan, "w_max": np.nan,
                "w_sd": np.nan, "w_mad": np.nan,
                "error": error,
            })
    cells = pd.DataFrame(rows)

    summary_rows = []
    for estimator_id in cfg.estimators:
        for size in cfg.subset_sizes:
            block = cells[(cells["estimator_id"] == estimator_id)
                          & (cells["size"] == size)]
            ok = block[block["error"].isna()]
            summary_rows.append({
                "estimator_id": estimator_id, "size": size,
                "sd": ok["sd"].mean() if len(ok) else np.nan,
                "av": ok["av"].mean() if len(ok) else np.nan,
                "ce": ok["ce"].mean() if len(ok) else np.nan,
                "sr": (np.mean([v for v in ok["sr"] if v is not None])
                       if len(ok) and any(v is not None for v in ok["sr"])
                       else np.nan),
                "n_ok": len(ok),
                "n_failed": int(block["error"].notna().sum()),
            })
    summary = pd.DataFrame(summary_rows)
    return BacktestReport(config=cfg, cells=cells, series=series_store,
                          summary=summary)

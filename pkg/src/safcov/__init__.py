"""Covariance estimation toolkit for high-dimensional return panels.

The centerpiece is a sparse-loading factor covariance estimator:
l1-penalized quasi-maximum-likelihood loadings fitted by a
majorize-minimize EM scheme, generalized-least-squares factor scores,
and a soft-thresholded residual covariance, assembled into a positive
definite estimate.  Around it sit data-driven selection of the factor
count and penalty level, eight comparison estimators, a Monte Carlo
simulation lab, a rolling-window minimum-variance backtester, and a
command-line interface.

The inner fitting loop runs through a compiled kernel when the
extension module is available, with an identical pure-NumPy fallback
(set ``SAFCOV_NO_EXT=1`` to force the fallback); results are the same
either way.
"""

from .backend import BACKEND
from .errors import (
    DegenerateInput,
    EigensolverError,
    InsufficientDimensions,
    NonConvergence,
    NotPositiveDefinite,
    NumericalBreakdown,
    PanelFormatError,
    SafcovError,
    SingularInnerSystem,
)
from .linalg import (
    frobenius_norm,
    gmvp_kkt_solve,
    is_positive_definite,
    soft_threshold,
    spectral_norm,
    symmetrize,
    weighted_quadratic_norm,
    woodbury_precision,
)
from .saf import (
    CovarianceEstimate,
    FactorFit,
    SafConfig,
    assemble_saf_covariance,
    demeaned_sample_cov,
    fit_saf,
    gls_factors,
    identify_loadings,
    loading_update,
    majorization_gradient,
    majorized_objective,
    penalized_objective,
    phi_update,
    poet_residual_cov,
    poet_threshold,
    quasi_log_likelihood,
    saf_covariance,
)
from .selection import (
    FactorCountResult,
    MuSelection,
    information_criterion,
    select_mu,
    select_num_factors,
)
from .rivals import (
    ObservedFactors,
    ShrinkageDiagnostics,
    adz_design_free,
    bt_sparse_cov,
    ff3f_cov,
    kdm_precision,
    lw_shrinkage,
    market_proxy,
    sample_cov,
    sim_cov,
    st_threshold_cov,
)
from .simulation import (
    ReplicationScore,
    SimulationDesign,
    draw_panel,
    factor_strength_exponents,
    gen_sparse_design,
    gen_spiked_design,
    gen_uniform_design,
    run_study,
    summarize_study,
)
from .portfolio import (
    BacktestConfig,
    BacktestReport,
    PerformanceMetrics,
    WeightSummary,
    expanding_sd_series,
    gmvp_weights,
    performance_metrics,
    run_backtest,
    weight_summary,
)
from .panel_io import (
    Panel,
    load_covariance,
    load_factor_table,
    load_panel,
    save_covariance,
    save_panel,
)
from .registry import available_estimators, estimate

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "__version__",
    # errors
    "SafcovError", "NotPositiveDefinite", "SingularInnerSystem",
    "NonConvergence", "DegenerateInput", "InsufficientDimensions",
    "NumericalBreakdown", "EigensolverError", "PanelFormatError",
    # linear algebra
    "symmetrize", "soft_threshold", "frobenius_norm", "spectral_norm",
    "weighted_quadratic_norm", "woodbury_precision",
    "is_positive_definite", "gmvp_kkt_solve",
    # factor model
    "SafConfig", "FactorFit", "CovarianceEstimate", "fit_saf",
    "saf_covariance", "assemble_saf_covariance", "gls_factors",
    "identify_loadings", "poet_residual_cov", "poet_threshold",
    "quasi_log_likelihood", "penalized_objective", "majorized_objective",
    "majorization_gradient", "loading_update", "phi_update",
    "demeaned_sample_cov",
    # selection
    "FactorCountResult", "MuSelection", "select_num_factors",
    "select_mu", "information_criterion",
    # rivals
    "ObservedFactors", "ShrinkageDiagnostics", "market_proxy",
    "sample_cov", "sim_cov", "ff3f_cov", "lw_shrinkage", "kdm_precision",
    "adz_design_free", "st_threshold_cov", "bt_sparse_cov",
    # simulation
    "SimulationDesign", "ReplicationScore", "gen_uniform_design",
    "gen_sparse_design", "gen_spiked_design", "draw_panel",
    "factor_strength_exponents", "run_study", "summarize_study",
    # portfolio
    "BacktestConfig", "BacktestReport", "PerformanceMetrics",
    "WeightSummary", "gmvp_weights", "performance_metrics",
    "weight_summary", "expanding_sd_series", "run_backtest",
    # IO and registry
    "Panel", "load_panel", "save_panel", "load_factor_table",
    "save_covariance", "load_covariance",
    "available_estimators", "estimate",
]

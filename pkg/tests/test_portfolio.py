"""Minimum-variance weights, performance metrics, and the backtester."""

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safcov.errors import (
    DegenerateInput,
    NotPositiveDefinite,
    NumericalBreakdown,
)
from safcov.linalg import gmvp_kkt_solve
from safcov.portfolio import (
    BacktestConfig,
    expanding_sd_series,
    gmvp_weights,
    performance_metrics,
    run_backtest,
    weight_summary,
)
from safcov.saf import CovarianceEstimate

from conftest import random_pd


class TestGmvpWeights:
    def test_identity_gives_equal_weights(self):
        np.testing.assert_allclose(gmvp_weights(np.eye(3)),
                                   np.full(3, 1.0 / 3.0), atol=1e-15)

    def test_inverse_variance_weighting(self):
        w = gmvp_weights(np.diag([1.0, 4.0]))
        np.testing.assert_allclose(w, [0.8, 0.2], atol=1e-12)

    def test_matches_kkt_oracle(self):
        Sigma = random_pd(5, seed=0)
        w = gmvp_weights(Sigma)
        w_kkt = gmvp_kkt_solve(Sigma)
        np.testing.assert_allclose(w, w_kkt, atol=1e-8)

    def test_precision_path_matches_covariance_path(self):
        Sigma = random_pd(6, seed=1)
        w_cov = gmvp_weights(Sigma)
        w_prec = gmvp_weights(np.linalg.inv(Sigma), is_precision=True)
        np.testing.assert_allclose(w_cov, w_prec, atol=1e-10)

    def test_precision_identity_exact_equal_weights(self):
        w = gmvp_weights(np.eye(8), is_precision=True)
        np.testing.assert_array_equal(w, np.full(8, 0.125))

    def test_covariance_estimate_wrapper_accepted(self):
        Sigma = random_pd(4, seed=2)
        est = CovarianceEstimate(matrix=Sigma, estimator_id="sample",
                                 params={})
        np.testing.assert_array_equal(gmvp_weights(est),
                                      gmvp_weights(Sigma))

    def test_scaling_invariance_power_of_two(self):
        Sigma = random_pd(5, seed=3)
        np.testing.assert_array_equal(gmvp_weights(4.0 * Sigma),
                                      gmvp_weights(Sigma))

    def test_scaling_invariance_general_constant(self):
        Sigma = random_pd(5, seed=4)
        np.testing.assert_allclose(gmvp_weights(np.pi * Sigma),
                                   gmvp_weights(Sigma), atol=1e-12)

    @settings(deadline=None, max_examples=25)
    @given(st.integers(min_value=0, max_value=10 ** 6))
    def test_weights_sum_to_one(self, seed):
        Sigma = random_pd(5, seed=seed)
        assert gmvp_weights(Sigma).sum() == pytest.approx(1.0, abs=1e-12)

    def test_not_pd_rejected(self):
        with pytest.raises(NotPositiveDefinite):
            gmvp_weights(np.diag([1.0, -1.0]))

    def test_non_square_rejected(self):
        with pytest.raises(DegenerateInput):
            gmvp_weights(np.ones((2, 3)))

    def test_negative_normalizer_rejected(self):
        with pytest.raises(NumericalBreakdown):
            gmvp_weights(-np.eye(3), is_precision=True)


class TestPerformanceMetrics:
    def test_constant_series(self):
        m = performance_metrics(np.full(24, 0.01))
        assert m.sd == 0.0
        assert m.av == pytest.approx(0.12, abs=1e-15)
        assert m.ce == pytest.approx(0.12, abs=1e-15)
        assert m.sr is None

    def test_alternating_closed_form(self):
        c, n = 0.02, 24
        r = c * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        m = performance_metrics(r)
        assert m.av == pytest.approx(0.0, abs=1e-15)
        expected_sd = np.sqrt(12.0) * c * np.sqrt(n / (n - 1))
        assert m.sd == pytest.approx(expected_sd, abs=1e-12)
        assert m.ce == pytest.approx(-0.5 * expected_sd ** 2, abs=1e-12)
        assert m.sr == pytest.approx(0.0, abs=1e-15)

    def test_periods_and_gamma_configurable(self):
        rng = np.random.default_rng(5)
        r = rng.normal(0.01, 0.05, size=40)
        m = performance_metrics(r, periods=4, gamma=3.0)
        mu = r.mean()
        sigma2 = ((r - mu) ** 2).sum() / 39
        assert m.av == pytest.approx(4 * mu, abs=1e-14)
        assert m.sd == pytest.approx(np.sqrt(4 * sigma2), abs=1e-14)
        assert m.ce == pytest.approx(m.av - 1.5 * m.sd ** 2, abs=1e-14)
        assert m.sr == pytest.approx(m.av / m.sd, abs=1e-12)

    def test_short_series_rejected(self):
        with pytest.raises(DegenerateInput):
            performance_metrics([0.01])


class TestWeightSummary:
    def test_equal_weights_have_zero_spread(self):
        w = np.full((10, 30), 1.0 / 30.0)
        s = weight_summary(w)
        assert s.w_min == s.w_max == pytest.approx(1.0 / 30.0, abs=1e-15)
        assert s.w_sd == 0.0
        assert s.w_mad == 0.0

    def test_two_point_closed_form(self):
        n = 16
        w = np.array([0.0, 1.0] * (n // 2))
        s = weight_summary(w)
        assert s.w_min == 0.0
        assert s.w_max == 1.0
        assert s.w_sd == pytest.approx(0.5 * np.sqrt(n / (n - 1)),
                                       abs=1e-12)
        assert s.w_mad == pytest.approx(0.5, abs=1e-15)

    def test_direct_formula_oracle(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=(7, 12))
        s = weight_summary(w)
        flat = w.ravel()
        assert s.w_min == flat.min()
        assert s.w_max == flat.max()
        assert s.w_sd == pytest.approx(flat.std(ddof=1), abs=1e-12)
        assert s.w_mad == pytest.approx(
            np.abs(flat - flat.mean()).mean(), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DegenerateInput):
            weight_summary(np.empty(0))


class TestExpandingSd:
    def test_constant_series_all_zero(self):
        # A dyadic constant keeps the prefix means exact, so the
        # deviations (and hence every SD) are exactly zero.
        out = expanding_sd_series(np.full(20, 0.03125), start_index=3)
        np.testing.assert_array_equal(out, np.zeros(17))
        out = expanding_sd_series(np.full(20, 0.03), start_index=3)
        np.testing.assert_allclose(out, np.zeros(17), atol=1e-12)

    def test_final_point_matches_full_series_sd(self):
        rng = np.random.default_rng(7)
        r = rng.normal(0.0, 0.04, size=50)
        out = expanding_sd_series(r, start_index=5)
        assert out[-1] == pytest.approx(performance_metrics(r).sd,
                                        abs=1e-15)

    def test_recomputation_from_scratch(self):
        rng = np.random.default_rng(8)
        r = rng.normal(size=30)
        out = expanding_sd_series(r, start_index=4)
        for k, t in enumerate(range(4, 30)):
            prefix = r[: t + 1]
            mu = prefix.mean()
            sigma2 = ((prefix - mu) ** 2).sum() / (prefix.size - 1)
            assert out[k] == np.sqrt(12 * sigma2)

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            expanding_sd_series(np.ones(10), start_index=1)
        with pytest.raises(DegenerateInput):
            expanding_sd_series(np.ones(3), start_index=5)


def one_factor_panel(N, T, seed):
    """Panel with one common factor and heterogeneous noise variances."""
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.8, 1.2, size=N)
    d = rng.uniform(0.3, 2.0, size=N)
    Sigma = np.outer(lam, lam) + np.diag(d)
    L = np.linalg.cholesky(Sigma)
    X = L @ rng.standard_normal((N, T))
    return X, Sigma


class TestRunBacktest:
    @staticmethod
    def config(**kw):
        base = dict(window_h=20, subset_sizes=(8,), n_repeats=1, seed=9,
                    estimators=("eqw",))
        base.update(kw)
        return BacktestConfig(**base)

    def test_equal_weight_series_is_cross_sectional_mean(self):
        X, _ = one_factor_panel(8, 80, seed=10)
        report = run_backtest(X, self.config())
        series = report.series[("eqw", 8, 0)]
        assert series.shape == (60,)
        np.testing.assert_allclose(series, X[:, 20:].mean(axis=0),
                                   rtol=0, atol=1e-14)
        # The displayed aggregate divides the return sum by the full
        # panel length and the squared deviations by T - 1.
        T = 80
        mu = series.sum() / T
        sigma2 = ((series - mu) ** 2).sum() / (T - 1)
        row = report.cells.iloc[0]
        assert row["sd"] == np.sqrt(12 * sigma2)
        assert row["av"] == 12 * mu
        assert row["w_min"] == row["w_max"] == pytest.approx(0.125,
                                                            abs=1e-15)

    def test_oracle_beats_equal_weights_out_of_sample(self):
        X, Sigma = one_factor_panel(8, 360, seed=11)
        report = run_backtest(X, self.config(window_h=30,
                                             estimators=("oracle", "eqw")),
                              sigma_true=Sigma)
        by_id = report.cells.set_index("estimator_id")
        assert by_id.loc["oracle", "sd"] < by_id.loc["eqw", "sd"]

    def test_two_runs_byte_identical(self):
        X, _ = one_factor_panel(10, 70, seed=12)
        cfg = self.config(subset_sizes=(6,), n_repeats=2,
                          estimators=("eqw", "sample"))
        a = run_backtest(X, cfg)
        b = run_backtest(X, cfg)
        pd.testing.assert_frame_equal(a.cells, b.cells)
        pd.testing.assert_frame_equal(a.summary, b.summary)
        assert a.series.keys() == b.series.keys()
        for key in a.series:
            np.testing.assert_array_equal(a.series[key], b.series[key])

    def test_worker_count_does_not_change_results(self):
        X, _ = one_factor_panel(9, 60, seed=13)
        a = run_backtest(X, self.config(subset_sizes=(5,),
                                        estimators=("eqw", "sample")))
        b = run_backtest(X, self.config(subset_sizes=(5,),
                                        estimators=("eqw", "sample"),
                                        jobs=2))
        pd.testing.assert_frame_equal(a.cells, b.cells)
        for key in a.series:
            np.testing.assert_array_equal(a.series[key], b.series[key])

    def test_subsets_independent_of_estimator_order(self):
        X, _ = one_factor_panel(12, 60, seed=14)
        a = run_backtest(X, self.config(subset_sizes=(6,), n_repeats=2,
                                        estimators=("eqw", "sample")))
        b = run_backtest(X, self.config(subset_sizes=(6,), n_repeats=2,
                                        estimators=("sample", "eqw")))
        for key in a.series:
            np.testing.assert_array_equal(a.series[key], b.series[key])

    def test_riskfree_shifts_to_excess_returns(self):
        X, _ = one_factor_panel(8, 50, seed=15)
        rf = np.random.default_rng(16).uniform(0.0, 0.01, size=50)
        plain = run_backtest(X, self.config())
        excess = run_backtest(X, self.config(), riskfree=rf)
        np.testing.assert_allclose(
            excess.series[("eqw", 8, 0)],
            plain.series[("eqw", 8, 0)] - rf[20:], atol=1e-15)

    def test_estimator_failure_flags_only_its_cell(self):
        X, _ = one_factor_panel(8, 50, seed=17)
        report = run_backtest(X, self.config(estimators=("ff3f", "eqw")))
        cells = report.cells.set_index("estimator_id")
        assert cells.loc["ff3f", "error"] is not None
        assert np.isnan(cells.loc["ff3f", "sd"])
        assert cells.loc["eqw", "error"] is None
        assert np.isfinite(cells.loc["eqw", "sd"])
        summary = report.summary.set_index("estimator_id")
        assert summary.loc["ff3f", "n_failed"] == 1
        assert summary.loc["eqw", "n_ok"] == 1

    def test_domain_validation(self):
        X, _ = one_factor_panel(6, 30, seed=18)
        with pytest.raises(DegenerateInput):
            run_backtest(X, self.config(window_h=30, subset_sizes=(6,)))
        with pytest.raises(DegenerateInput):
            run_backtest(X, self.config(subset_sizes=(7,)))
        with pytest.raises(KeyError):
            run_backtest(X, self.config(subset_sizes=(4,),
                                        estimators=("noise2cov",)))
        with pytest.raises(DegenerateInput):
            run_backtest(X, self.config(subset_sizes=(4,)),
                         riskfree=np.zeros(10))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BacktestConfig(window_h=1)
        with pytest.raises(ValueError):
            BacktestConfig(n_repeats=0)
        with pytest.raises(ValueError):
            BacktestConfig(subset_sizes=())
        with pytest.raises(ValueError):
            BacktestConfig(estimators=())

    def test_aggregates_recomputable_from_stored_series(self):
        X, _ = one_factor_panel(10, 64, seed=19)
        cfg = self.config(subset_sizes=(5, 7), n_repeats=2,
                          estimators=("eqw", "sample"))
        report = run_backtest(X, cfg)
        T = 64
        for _, row in report.cells.iterrows():
            key = (row["estimator_id"], row["size"], row["repeat"])
            series = report.series[key]
            mu = series.sum() / T
            sigma2 = ((series - mu) ** 2).sum() / (T - 1)
            assert row["sd"] == np.sqrt(12 * sigma2)
            assert row["av"] == 12 * mu
            assert row["ce"] == row["av"] - 0.5 * row["sd"] ** 2
            assert row["sr"] == row["av"] / row["sd"]

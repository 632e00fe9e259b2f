"""Penalized factor fit: objective algebra, MM loop, POET assembly, backends."""

import subprocess
import sys

import numpy as np
import pytest

import safcov
from safcov import backend as backend_mod
from safcov._mm_numpy import run_mm as run_mm_numpy
from safcov.errors import DegenerateInput, SingularInnerSystem
from safcov.saf import (
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
    _pca_start,
)

from conftest import factor_panel


def dense_quasi(lam, phi, S):
    Omega = lam @ lam.T + np.diag(phi)
    sign, logdet = np.linalg.slogdet(Omega)
    return sign * logdet + np.trace(S @ np.linalg.inv(Omega))


class TestObjectiveAlgebra:
    def test_quasi_identity(self):
        N = 6
        val = quasi_log_likelihood(np.zeros((N, 2)), np.ones(N), np.eye(N))
        assert val == pytest.approx(N, abs=1e-10)

    def test_quasi_diagonal_closed_form(self, rng):
        d = rng.uniform(0.5, 2.0, 5)
        s = rng.uniform(0.5, 2.0, 5)
        val = quasi_log_likelihood(np.zeros((5, 1)), d, np.diag(s))
        assert val == pytest.approx(np.sum(np.log(d)) + np.sum(s / d), abs=1e-10)

    def test_quasi_dense_oracle(self, rng):
        lam = rng.normal(size=(4, 1))
        phi = rng.uniform(0.5, 1.5, 4)
        S = np.cov(rng.normal(size=(4, 50)), bias=True)
        assert quasi_log_likelihood(lam, phi, S) == pytest.approx(
            dense_quasi(lam, phi, S), abs=1e-10)

    def test_penalized_mu_zero(self, rng):
        lam = rng.normal(size=(5, 2))
        phi = rng.uniform(0.5, 1.5, 5)
        S = np.cov(rng.normal(size=(5, 60)), bias=True)
        assert penalized_objective(lam, phi, S, 0.0) == quasi_log_likelihood(lam, phi, S)

    def test_penalized_all_ones(self):
        lam = np.ones((2, 1))
        phi = np.ones(2)
        S = np.eye(2)
        assert penalized_objective(lam, phi, S, 0.5) == pytest.approx(
            quasi_log_likelihood(lam, phi, S) + 1.0, abs=1e-12)

    def test_penalized_sum_oracle(self, rng):
        lam = rng.normal(size=(6, 2))
        phi = rng.uniform(0.5, 1.5, 6)
        S = np.cov(rng.normal(size=(6, 80)), bias=True)
        mu = 0.31
        oracle = dense_quasi(lam, phi, S) + mu * np.abs(lam).sum()
        assert penalized_objective(lam, phi, S, mu) == pytest.approx(oracle, abs=1e-12)


class TestGradientAndUpdates:
    def test_gradient_vanishes_at_truth(self, rng):
        lam = rng.normal(size=(6, 2))
        phi = rng.uniform(0.5, 1.5, 6)
        S = lam @ lam.T + np.diag(phi)
        A = majorization_gradient(lam, phi, S)
        assert np.abs(A).max() < 1e-12

    def test_gradient_matches_dense_formula(self, rng):
        lam = rng.normal(size=(7, 2))
        phi = rng.uniform(0.5, 1.5, 7)
        S = np.cov(rng.normal(size=(7, 90)), bias=True)
        Oi = np.linalg.inv(lam @ lam.T + np.diag(phi))
        dense = 2.0 * (Oi - Oi @ S @ Oi) @ lam
        np.testing.assert_allclose(majorization_gradient(lam, phi, S), dense, atol=1e-10)

    def test_gradient_finite_difference(self, rng):
        lam = rng.normal(size=(6, 2))
        phi = rng.uniform(0.5, 1.5, 6)
        S = np.cov(rng.normal(size=(6, 80)), bias=True)
        A = majorization_gradient(lam, phi, S)
        h = 1e-6
        fd = np.zeros_like(lam)
        for i in range(6):
            for k in range(2):
                up, dn = lam.copy(), lam.copy()
                up[i, k] += h
                dn[i, k] -= h
                fd[i, k] = (majorized_objective(up, lam, phi, S)
                            - majorized_objective(dn, lam, phi, S)) / (2 * h)
        rel = np.linalg.norm(fd - A) / np.linalg.norm(A)
        assert rel < 1e-5

    def test_loading_update_mu_zero(self, rng):
        lam = rng.normal(size=(5, 2))
        A = rng.normal(size=(5, 2))
        np.testing.assert_array_equal(loading_update(lam, A, 0.01, 0.0), lam - 0.01 * A)

    def test_loading_update_pure_shrink(self):
        lam = np.array([[0.5], [-0.004], [0.03]])
        out = loading_update(lam, np.zeros_like(lam), 0.01, 5.0)
        np.testing.assert_allclose(out, [[0.45], [0.0], [0.0]], atol=1e-12)

    def test_loading_update_arithmetic(self):
        out = loading_update(np.array([[0.5]]), np.array([[10.0]]), 0.01, 5.0)
        assert out[0, 0] == pytest.approx(0.35, abs=1e-12)

    def test_phi_fixed_point(self, rng):
        lam = rng.normal(size=(5, 2))
        phi = rng.uniform(0.5, 1.5, 5)
        S = lam @ lam.T + np.diag(phi)
        np.testing.assert_allclose(phi_update(S, lam, lam, phi), phi, atol=1e-12)

    def test_phi_zero_loadings(self, rng):
        S = np.cov(rng.normal(size=(5, 40)), bias=True)
        z = np.zeros((5, 1))
        np.testing.assert_allclose(phi_update(S, z, z, np.ones(5)), np.diag(S),
                                   atol=1e-14)

    def test_phi_dense_oracle(self, rng):
        lam_new = rng.normal(size=(5, 2))
        lam_m = rng.normal(size=(5, 2))
        phi_m = rng.uniform(0.5, 1.5, 5)
        S = np.cov(rng.normal(size=(5, 60)), bias=True)
        Oi = np.linalg.inv(lam_m @ lam_m.T + np.diag(phi_m))
        oracle = np.diag(S - lam_new @ lam_m.T @ Oi @ S)
        np.testing.assert_allclose(phi_update(S, lam_new, lam_m, phi_m),
                                   np.maximum(oracle, 1e-8), atol=1e-10)


class TestSampleCov:
    def test_identical_rows(self, rng):
        x = rng.normal(size=40)
        X = np.vstack([x, x, rng.normal(size=40)])
        S = demeaned_sample_cov(X)
        np.testing.assert_array_equal(S[0], S[1])
        assert np.linalg.matrix_rank(S) < 3

    def test_single_series_divisor(self, rng):
        x = rng.normal(size=(1, 50))
        S = demeaned_sample_cov(x)
        assert S[0, 0] == pytest.approx(np.var(x), abs=1e-14)  # 1/T divisor

    def test_brute_force(self, rng):
        X = rng.normal(size=(4, 15))
        Xc = X - X.mean(axis=1, keepdims=True)
        brute = np.zeros((4, 4))
        for t in range(15):
            brute += np.outer(Xc[:, t], Xc[:, t])
        brute /= 15
        np.testing.assert_allclose(demeaned_sample_cov(X), brute, atol=1e-12)


class TestFitSaf:
    def test_full_shrinkage(self):
        X, _, _, _ = factor_panel(10, 80, 2, seed=4)
        S = demeaned_sample_cov(X)
        fit = fit_saf(X, r=2, mu=1e4)
        assert np.all(fit.loadings == 0.0)
        np.testing.assert_allclose(fit.phi_u, np.diag(S), atol=1e-12)
        assert fit.dropped_columns == (0, 1)
        est = assemble_saf_covariance(fit)
        np.testing.assert_array_equal(est.matrix, fit.sigma_u_tau)

    def test_exact_factor_recovery(self):
        rng = np.random.default_rng(11)
        lam = rng.normal(size=(20, 2))
        F = rng.standard_normal((2, 2000))
        X = lam @ F + 0.01 * rng.standard_normal((20, 2000))
        fit = fit_saf(X, r=2, mu=0.0)
        gap = np.linalg.norm(fit.loadings @ fit.loadings.T - lam @ lam.T) / 20
        assert gap < 0.05

    def test_monotone_objective(self):
        for seed, mu in [(0, 0.0), (1, 0.05), (2, 0.3)]:
            X, _, _, _ = factor_panel(15, 60, 2, seed=seed)
            fit = fit_saf(X, r=2, mu=mu)
            assert np.all(np.diff(fit.objective_trace) <= 1e-8)

    def test_zero_variance_series_rejected(self, rng):
        X = rng.normal(size=(5, 40))
        X[2] = 3.14
        with pytest.raises(DegenerateInput):
            fit_saf(X, r=1, mu=0.0)

    def test_too_short_panel_rejected(self, rng):
        with pytest.raises(DegenerateInput):
            fit_saf(rng.normal(size=(5, 3)), r=2, mu=0.0)

    def test_n_greater_than_t_runs_with_ridge(self):
        X, _, _, _ = factor_panel(40, 25, 2, seed=6)
        est, fit = saf_covariance(X, r=2, mu=0.1, max_outer_iter=200)
        assert est.matrix.shape == (40, 40)
        assert np.isfinite(est.matrix).all()

    def test_identification_conventions(self):
        for seed in range(5):
            X, _, _, _ = factor_panel(20, 90, 3, seed=seed)
            fit = fit_saf(X, r=3, mu=0.1, max_outer_iter=200)
            lam = fit.loadings
            zero_counts = (lam == 0).sum(axis=0)
            assert np.all(np.diff(zero_counts) >= 0)
            for k in range(3):
                nz = np.nonzero(lam[:, k])[0]
                if nz.size:
                    assert lam[nz[0], k] >= 0

    def test_identify_loadings_is_stable_on_canonical_input(self, rng):
        lam = np.abs(rng.normal(size=(6, 2)))
        out, order = identify_loadings(lam)
        # Order ties broken by larger absolute column mass first.
        expected = np.argsort(-np.abs(lam).sum(axis=0), kind="stable")
        np.testing.assert_array_equal(order, expected)

    def test_row_permutation_equivariance(self):
        X, _, _, _ = factor_panel(12, 80, 2, seed=13)
        perm = np.random.default_rng(1).permutation(12)
        est_base, _ = saf_covariance(X, r=2, mu=0.05, max_outer_iter=300)
        est_perm, _ = saf_covariance(X[perm], r=2, mu=0.05, max_outer_iter=300)
        np.testing.assert_allclose(est_perm.matrix, est_base.matrix[np.ix_(perm, perm)],
                                   atol=1e-6)


class TestGlsFactors:
    def test_orthonormal_projection(self, rng):
        Q, _ = np.linalg.qr(rng.normal(size=(8, 2)))
        F = rng.normal(size=(30, 2))
        X = Q @ F.T
        np.testing.assert_allclose(gls_factors(X, Q, np.ones(8)), F, atol=1e-10)

    def test_single_unit_loading(self, rng):
        X = rng.normal(size=(4, 25))
        lam = np.zeros((4, 1))
        lam[0, 0] = 1.0
        np.testing.assert_allclose(gls_factors(X, lam, np.ones(4))[:, 0], X[0],
                                   atol=1e-12)

    def test_normal_equations_oracle(self, rng):
        lam = rng.normal(size=(9, 3))
        phi = rng.uniform(0.5, 1.5, 9)
        X = rng.normal(size=(9, 40))
        W = np.diag(1.0 / phi)
        oracle = np.linalg.solve(lam.T @ W @ lam, lam.T @ W @ X).T
        np.testing.assert_allclose(gls_factors(X, lam, phi), oracle, atol=1e-10)

    def test_zero_column_rejected(self, rng):
        lam = rng.normal(size=(5, 2))
        lam[:, 1] = 0.0
        with pytest.raises(SingularInnerSystem):
            gls_factors(rng.normal(size=(5, 20)), lam, np.ones(5))


class TestPoet:
    def test_threshold_formula(self):
        assert poet_threshold(30, 60) == pytest.approx(
            1 / np.sqrt(30) + np.sqrt(np.log(30) / 60), abs=1e-14)

    def test_small_offdiagonals_killed(self, rng):
        U = rng.normal(size=(25, 200))  # independent series, tau ~ 0.33
        S_u = (U @ U.T) / 200
        off_mask = ~np.eye(25, dtype=bool)
        assert np.abs(S_u[off_mask]).max() < poet_threshold(25, 200)  # precondition
        out = poet_residual_cov(U)
        assert np.abs(out[off_mask]).max() == 0.0

    def test_tau_zero_hook(self, rng):
        U = rng.normal(size=(6, 30))
        S_u = (U @ U.T) / 30
        np.testing.assert_allclose(poet_residual_cov(U, tau=0.0), S_u, atol=1e-12)

    def test_planted_large_offdiagonals_survive(self):
        rng = np.random.default_rng(21)
        C = np.eye(4)
        C[0, 1] = C[1, 0] = 0.8
        C[2, 3] = C[3, 2] = 0.7
        U = np.linalg.cholesky(C) @ rng.standard_normal((4, 1000))
        S_u = (U @ U.T) / 1000
        tau = poet_threshold(4, 1000)
        out = poet_residual_cov(U)
        assert out[0, 1] == pytest.approx(S_u[0, 1] - tau, abs=1e-12)
        assert out[2, 3] == pytest.approx(S_u[2, 3] - tau, abs=1e-12)
        assert out[0, 2] == out[0, 3] == out[1, 2] == out[1, 3] == 0.0
        np.testing.assert_array_equal(np.diag(out), np.diag(S_u))


class TestAssembly:
    def test_unit_variance_factor(self):
        X, _, _, _ = factor_panel(10, 300, 1, seed=3)
        fit = fit_saf(X, r=1, mu=0.0, max_outer_iter=300)
        est = assemble_saf_covariance(fit)
        F = fit.factors
        Fc = F - F.mean(axis=0, keepdims=True)
        S_F = (Fc.T @ Fc) / F.shape[0]
        oracle = fit.loadings @ S_F @ fit.loadings.T + fit.sigma_u_tau
        np.testing.assert_array_equal(est.matrix, (oracle + oracle.T) / 2.0)

    def test_estimate_metadata(self):
        X, _, _, _ = factor_panel(8, 60, 1, seed=9)
        est, fit = saf_covariance(X, r=1, mu=0.02)
        assert est.estimator_id == "saf"
        assert est.params["r"] == 1
        assert est.params["mu"] == 0.02
        assert est.dim == 8


class TestBackends:
    def test_import_selected_a_backend(self):
        assert safcov.BACKEND in ("compiled", "numpy")

    @pytest.mark.skipif(backend_mod.BACKEND != "compiled",
                        reason="compiled extension not built")
    def test_compiled_matches_numpy(self):
        for seed, mu in [(3, 0.05), (5, 0.0), (8, 0.4)]:
            X, _, _, _ = factor_panel(25, 100, 3, seed=seed)
            S = demeaned_sample_cov(X)
            l0, p0 = _pca_start(S, 3)
            a = backend_mod.run_mm(S, l0.copy(), p0.copy(), mu, 0.01, 1e-6, 400)
            b = run_mm_numpy(S, l0.copy(), p0.copy(), mu, 0.01, 1e-6, 400)
            assert np.abs(a[0] - b[0]).max() < 1e-9
            assert np.abs(a[1] - b[1]).max() < 1e-9
            assert a[3] == b[3] and a[4] == b[4]
            np.testing.assert_allclose(a[2], b[2], atol=1e-9)

    def test_env_var_forces_numpy_backend(self):
        import os

        env = dict(os.environ, SAFCOV_NO_EXT="1")
        out = subprocess.run([sys.executable, "-c",
                              "import safcov; print(safcov.BACKEND)"],
                             env=env, capture_output=True, text=True)
        assert out.returncode == 0, out.stderr
        assert out.stdout.strip() == "numpy"

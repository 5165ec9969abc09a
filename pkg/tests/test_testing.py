"""Tests for null spectra, quantile simulation, and the hypothesis tests."""

import logging

import numpy as np
import pytest
from scipy.stats import chi2

import steffects.estimators as est
import steffects.testing as tst
from steffects.errors import ConfigError
from steffects.estimators import PipelineConfig, cross_fit
from steffects.testing import (
    NullSpectrum,
    agg_test,
    mte_test,
    null_spectrum,
    simulate_null_quantile,
    ste_test,
)

from test_estimators import make_data


class TestNullSpectrum:
    def test_zero_matrix(self):
        spec = null_spectrum(np.zeros((4, 4)))
        np.testing.assert_array_equal(spec.eigenvalues, np.zeros(4))
        assert spec.scaling == 0.25

    def test_rank_one(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=6)
        v *= np.sqrt(6.0) / np.linalg.norm(v)
        spec = null_spectrum(np.outer(v, v))
        assert spec.eigenvalues[0] == pytest.approx(1.0, abs=1e-12)
        assert np.abs(spec.eigenvalues[1:]).max() < 1e-12

    def test_trace_identity(self):
        rng = np.random.default_rng(1)
        M = rng.normal(size=(5, 5))
        M = M + M.T
        spec = null_spectrum(M)
        assert spec.eigenvalues.sum() == pytest.approx(np.trace(M) / 5.0, abs=1e-10)
        assert np.all(np.diff(spec.eigenvalues) <= 1e-12)  # descending

    def test_signs_kept(self):
        M = np.diag([4.0, -2.0])
        spec = null_spectrum(M)
        np.testing.assert_allclose(spec.eigenvalues, [2.0, -1.0], atol=1e-14)

    def test_asymmetry_rejected(self):
        M = np.zeros((3, 3))
        M[0, 1] = 1.0
        with pytest.raises(ValueError, match="asymmetry"):
            null_spectrum(M)


class TestSimulateNullQuantile:
    def test_zero_spectrum(self):
        spec = NullSpectrum(np.zeros(5), 0.2, 1.0)
        assert simulate_null_quantile(spec, 0.95, 2000, seed=0) == 0.0

    def test_single_eigenvalue_matches_chi_square(self):
        spec = NullSpectrum(np.array([2.0]), 1.0, 1.0)
        q = simulate_null_quantile(spec, 0.95, 100_000, seed=1)
        want = chi2.ppf(0.95, df=1) - 1.0  # 2.841459
        assert q == pytest.approx(want, abs=0.1)

    def test_two_eigenvalues_match_oversampled_sim(self):
        spec = NullSpectrum(np.array([1.0, 1.0]), 1.0, 1.0)
        q = simulate_null_quantile(spec, 0.95, 100_000, seed=2)
        rng = np.random.default_rng(12345)
        g = rng.standard_normal((1_000_000, 2))
        oracle = np.quantile(0.5 * ((g**2 - 1.0).sum(axis=1)), 0.95)
        assert q == pytest.approx(oracle, rel=0.02)

    def test_monotone_in_level(self):
        spec = NullSpectrum(np.array([1.5, -0.5, 0.25]), 1.0, 1.0)
        qs = [
            simulate_null_quantile(spec, lvl, 5000, seed=3)
            for lvl in (0.5, 0.8, 0.9, 0.95, 0.99)
        ]
        assert all(a <= b for a, b in zip(qs, qs[1:]))

    def test_scale_equivariance(self):
        rng = np.random.default_rng(4)
        M = rng.normal(size=(6, 6))
        M = M + M.T
        q1 = simulate_null_quantile(null_spectrum(M), 0.9, 5000, seed=5)
        q3 = simulate_null_quantile(null_spectrum(3.0 * M), 0.9, 5000, seed=5)
        assert q3 == pytest.approx(3.0 * q1, rel=1e-12)

    def test_validation(self):
        spec = NullSpectrum(np.array([1.0]), 1.0, 1.0)
        with pytest.raises(ConfigError, match="level"):
            simulate_null_quantile(spec, 1.5, 2000)
        with pytest.raises(ConfigError, match="mc_draws"):
            simulate_null_quantile(spec, 0.9, 10)


class TestHollowSpectrum:
    """The null quantile must see only the off-diagonal part of i2.

    The statistic's U-component is the off-diagonal mean, so a diagonal
    spike (one extreme inverse-propensity unit gives i2[j, j] of order
    weight squared) must not move the simulated quantiles.
    """

    @staticmethod
    def _comp(i2):
        n = i2.shape[0]
        return est.FoldComponents(n=n, plugin=0.0, i1=np.zeros(n), i2=i2)

    @staticmethod
    def _sym(seed, n):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(n, n))
        return M + M.T

    def test_pooled_eigenvalues_ignore_diagonal(self):
        M = self._sym(50, 12)
        spiked = M + np.diag(np.full(12, 1e6))
        base = tst._pooled_eigenvalues([self._comp(M)])
        spike = tst._pooled_eigenvalues([self._comp(spiked)])
        np.testing.assert_allclose(spike, base, rtol=0, atol=1e-9)
        assert np.abs(base).max() < 1e3

    def test_joint_draws_ignore_diagonal(self):
        M = self._sym(51, 10)
        spiked = M.copy()
        spiked[3, 3] += 1e8
        comps = [[self._comp(M)], [self._comp(spiked)]]
        W = tst._joint_chaos_draws(comps, 500, np.random.default_rng(6))
        np.testing.assert_allclose(W[1], W[0], rtol=0, atol=1e-6)

    def test_offdiagonal_helper(self):
        M = self._sym(52, 5)
        H = tst._offdiagonal(M)
        assert np.all(np.diag(H) == 0.0)
        off = ~np.eye(5, dtype=bool)
        np.testing.assert_array_equal(H[off], M[off])
        # input must not be mutated
        np.testing.assert_array_equal(np.diag(M), np.diag(self._sym(52, 5)))


CFG = PipelineConfig(mc_draws=2000, seed=7)


class TestFixedEpsTest:
    def test_report_invariants_and_determinism(self):
        data = make_data(30, 120, theta=0.8)
        r1 = ste_test(data, eps=1.0, alpha=0.05, config=CFG)
        r2 = ste_test(data, eps=1.0, alpha=0.05, config=CFG)
        assert r1 == r2
        assert 0.0 <= r1.p_value <= 1.0
        assert r1.reject == (r1.statistic > r1.quantile)
        assert r1.estimand == "STE" and r1.n == 120 and r1.folds == 2

    def test_statistic_matches_cross_fit(self):
        data = make_data(31, 110, theta=0.5)
        rep = cross_fit(data, inner="ste", eps=0.9, config=CFG)
        r = ste_test(data, eps=0.9, config=CFG)
        assert r.statistic == pytest.approx(data.n * rep.second_order, rel=1e-12)

    def test_mte_variant(self):
        data = make_data(32, 100, theta=0.6)
        r = mte_test(data, eps="median", config=CFG)
        assert r.estimand == "MTE"
        assert r.eps_source == "median"
        assert np.isfinite(r.statistic) and np.isfinite(r.quantile)

    def test_forced_zero_kernel_degenerate_path(self, monkeypatch):
        data = make_data(33, 90)
        monkeypatch.setattr(
            est, "hadamard_solve", lambda X, w, eps, **kw: np.zeros((len(w), len(w)))
        )
        real = est.precompute

        def null_potentials(data_eval, prop, outc, eps, tol, max_iter):
            pre = real(data_eval, prop, outc, eps, tol, max_iter)
            z = np.zeros(data_eval.n)
            from dataclasses import replace

            return replace(pre, U1=z, U0=z)

        monkeypatch.setattr(est, "precompute", null_potentials)
        r = ste_test(data, eps=0.8, config=CFG)
        comps = est.cross_fit_components(data, CFG.folds, "ste", 0.8, CFG, CFG.seed)
        plugin_sum = sum(c.n * c.plugin for c in comps)
        assert r.quantile == 0.0
        assert r.statistic == pytest.approx(plugin_sum, rel=1e-12)

    def test_alpha_validation(self):
        data = make_data(34, 60)
        with pytest.raises(ConfigError, match="alpha"):
            ste_test(data, eps=1.0, alpha=1.5, config=CFG)


class TestAggTest:
    def test_grid_validation(self):
        data = make_data(40, 80)
        with pytest.raises(ConfigError, match="nonempty"):
            agg_test(data, [], config=CFG)
        with pytest.raises(ConfigError, match="positive"):
            agg_test(data, [0.5, -1.0], config=CFG)
        with pytest.raises(ConfigError, match="distinct"):
            agg_test(data, [0.5, 0.5], config=CFG)
        with pytest.raises(ConfigError, match="beta"):
            agg_test(data, [0.5, 1.0], beta=2.0, config=CFG)

    def test_determinism_and_invariants(self):
        data = make_data(41, 110, theta=0.7)
        grid = [0.5, 1.0, 2.0]
        r1 = agg_test(data, grid, alpha=0.05, config=CFG)
        r2 = agg_test(data, grid, alpha=0.05, config=CFG)
        assert r1 == r2
        assert r1.reject == (r1.statistic > r1.quantile)
        assert 0.0 <= r1.p_value <= 1.0
        assert r1.eps_grid == (0.5, 1.0, 2.0)
        assert len(r1.per_eps) == 3
        assert r1.beta == r1.alpha

    def test_joint_quantile_dominates_marginal(self):
        data = make_data(42, 100, theta=0.4)
        r = agg_test(data, [0.6, 1.2, 2.4], alpha=0.05, config=CFG)
        # at beta = alpha each normalized marginal quantile is 1 by
        # construction, so the max-aggregated quantile cannot fall below it
        # (up to the draw-count granularity of the empirical quantile)
        assert r.quantile >= 1.0 - 0.05

    def test_statistic_is_max_normalized(self):
        data = make_data(43, 100, theta=0.6)
        r = agg_test(data, [0.7, 1.4], config=CFG)
        best = max(p["normalized"] for p in r.per_eps)
        assert r.statistic == pytest.approx(best, rel=1e-12)
        for p in r.per_eps:
            assert p["normalized"] == pytest.approx(
                p["statistic"] / p["marginal_quantile"], rel=1e-12
            )

    def test_singleton_grid_matches_fixed_test(self):
        data = make_data(44, 120, theta=0.9)
        fixed = ste_test(data, eps=1.1, alpha=0.05, config=CFG)
        single = agg_test(data, [1.1], alpha=0.05, beta=0.05, config=CFG)
        assert single.per_eps[0]["statistic"] == pytest.approx(
            fixed.statistic, rel=1e-10
        )
        # same law simulated through two devices: decisions agree and
        # p-values match within Monte Carlo error
        assert single.reject == fixed.reject
        assert single.p_value == pytest.approx(fixed.p_value, abs=0.05)

    def test_degenerate_grid_point_dropped(self, monkeypatch, caplog):
        data = make_data(45, 90, theta=0.5)
        real = tst._grid_fold_components

        def zero_first_eps(data_, grid, estimand, cfg, fold_seed):
            per_eps = real(data_, grid, estimand, cfg, fold_seed)
            from dataclasses import replace

            per_eps[0] = [
                replace(c, i2=np.zeros_like(c.i2)) for c in per_eps[0]
            ]
            return per_eps

        monkeypatch.setattr(tst, "_grid_fold_components", zero_first_eps)
        with caplog.at_level(logging.WARNING, logger="steffects.testing"):
            r = agg_test(data, [0.6, 1.2], config=CFG)
        assert any("dropping" in rec.message for rec in caplog.records)
        assert r.eps_grid == (1.2,)

    def test_mte_estimand(self):
        data = make_data(46, 90, theta=0.5)
        r = agg_test(data, [0.8, 1.6], config=CFG, estimand="mte")
        assert r.estimand == "MTE"
        assert np.isfinite(r.statistic)

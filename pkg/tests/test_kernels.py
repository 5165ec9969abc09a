"""Unit tests for Gram matrices, the discrepancy, and the median heuristic."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as ora
from steffects.kernels import GibbsGram, gibbs_gram, median_heuristic, mmd_squared
from steffects.ot_core import DiscreteMeasure


class TestGibbsGram:
    def test_zero_cost_gives_one(self):
        assert gibbs_gram(np.array([[0.0]]), np.array([[0.0]]), eps=1.0).values == (
            pytest.approx(1.0)
        )

    def test_known_value(self):
        # cost 2, eps 2 -> exp(-1)
        g = gibbs_gram(np.array([[0.0]]), np.array([[2.0]]), eps=2.0)
        assert g.values[0, 0] == pytest.approx(np.exp(-1.0))
        assert g.eps == 2.0

    def test_positive_semidefinite(self):
        g = gibbs_gram(np.array([[0.0], [2.0]]), np.array([[0.0], [2.0]]), eps=2.0)
        assert np.linalg.eigvalsh(g.values).min() >= -1e-10
        rng = np.random.default_rng(0)
        A = rng.normal(size=(12, 3))
        g = gibbs_gram(A, A, eps=0.7)
        assert np.linalg.eigvalsh(g.values).min() >= -1e-10

    def test_eps_validation(self):
        with pytest.raises(ValueError, match="eps"):
            gibbs_gram(np.array([[0.0]]), np.array([[0.0]]), eps=0.0)


class TestMedianHeuristic:
    def test_single_pair(self):
        assert median_heuristic(np.array([0.0, 2.0])) == pytest.approx(2.0)

    def test_three_atoms(self):
        # pair costs {0.5, 0.5, 2.0} -> median 0.5
        assert median_heuristic(np.array([0.0, 1.0, 2.0])) == pytest.approx(0.5)

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(3)
        Y = rng.normal(size=(100, 2))
        assert median_heuristic(Y) == pytest.approx(
            ora.median_halfsq_sorted(Y), abs=0.0
        )

    def test_identical_atoms_rejected(self):
        with pytest.raises(ValueError, match="identical"):
            median_heuristic(np.zeros((5, 2)))
        with pytest.raises(ValueError, match="at least 2"):
            median_heuristic(np.array([1.0]))


class TestMmdSquared:
    def test_identical_measures_zero(self):
        rng = np.random.default_rng(1)
        m = DiscreteMeasure(rng.normal(size=(6, 2)), rng.dirichlet(np.ones(6)))
        assert abs(mmd_squared(m, m, eps=1.0)) < 1e-12

    def test_two_single_atoms_closed_form(self):
        a = DiscreteMeasure(np.array([0.0]))
        b = DiscreteMeasure(np.array([2.0]))
        # 0.5 * (2 - 2 exp(-c/eps)) with c = 2
        assert mmd_squared(a, b, eps=2.0) == pytest.approx(1.0 - np.exp(-1.0))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_double_sum_oracle(self, seed):
        rng = np.random.default_rng(seed)
        mu = DiscreteMeasure(rng.normal(size=(5, 2)), rng.dirichlet(np.ones(5)))
        nu = DiscreteMeasure(rng.normal(size=(5, 2)), rng.dirichlet(np.ones(5)))
        got = mmd_squared(mu, nu, eps=0.9)
        want = ora.mmd_double_sum(mu.atoms, mu.weights, nu.atoms, nu.weights, 0.9)
        assert got == pytest.approx(want, abs=1e-12)
        assert got >= 0.0

    def test_shared_gram_path(self):
        rng = np.random.default_rng(2)
        atoms = rng.normal(size=(8, 2))
        mu = DiscreteMeasure(atoms, rng.dirichlet(np.ones(8)))
        nu = DiscreteMeasure(atoms, rng.dirichlet(np.ones(8)))
        g = gibbs_gram(atoms, atoms, eps=1.3)
        assert mmd_squared(mu, nu, gram=g) == pytest.approx(
            mmd_squared(mu, nu, eps=1.3), abs=1e-14
        )

    def test_argument_validation(self):
        a = DiscreteMeasure(np.array([0.0]))
        with pytest.raises(ValueError, match="provide eps"):
            mmd_squared(a, a)
        bad = GibbsGram(values=np.ones((2, 2)), eps=1.0)
        with pytest.raises(ValueError, match="same atom set"):
            mmd_squared(a, a, gram=bad)

"""Tests for noise Grams, their factorization and the random streams."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from core.errors import FactorizationError, ParameterError
from core.noise import (
    NoiseGram, NoiseKind, RngStream, kernel_oracle_gram, klmc_gram, rlmc_gram, rulmc_gram, sample_block
)

ALPHA_GRID = [i / 10 for i in range(11)]
GAMMA_GRID = [0.01, 0.05, 0.1, 0.5, 1.0, 2.0]


class TestClosedFormGrams:
    """Test the closed-form Gram entries."""

    def test_rlmc_gram(self):
        """Standardized pair with correlation sqrt(alpha)."""
        gram = rlmc_gram(0.25)
        assert np.allclose(gram.entries, [[1.0, 0.5], [0.5, 1.0]])
        assert gram.order == 2

    def test_klmc_gram_values(self):
        """KLMC Gram at gamma = 0.1."""
        g = klmc_gram(0.1).entries
        assert g[0, 0] == pytest.approx(1.150741569072e-03, rel=1e-10)
        assert g[1, 1] == pytest.approx(8.241998849109e-02, rel=1e-10)
        assert g[0, 1] == pytest.approx(8.214634969919e-03, rel=1e-10)

    def test_rulmc_gram_values(self):
        """RULMC Gram at alpha = 0.5, gamma = 0.1."""
        g = rulmc_gram(0.5, 0.1).entries
        assert g[0, 0] == pytest.approx(1.547297664641e-04, rel=1e-9)
        assert g[1, 1] == pytest.approx(1.150741569072e-03, rel=1e-10)
        assert g[2, 2] == pytest.approx(8.241998849109e-02, rel=1e-10)
        assert g[0, 1] == pytest.approx(3.701758775513e-04, rel=1e-9)
        assert g[0, 2] == pytest.approx(2.048533140428e-03, rel=1e-9)
        assert g[1, 2] == pytest.approx(8.214634969919e-03, rel=1e-10)

    def test_rulmc_gram_alpha_zero(self):
        """alpha = 0 gives a zero midpoint row that still factorizes."""
        gram = rulmc_gram(0.0, 0.5)
        assert np.allclose(gram.entries[0], 0.0)
        block = sample_block(gram, 4, RngStream(1))
        assert np.allclose(block[0], 0.0)

    def test_invalid_arguments(self):
        with pytest.raises(ParameterError):
            rlmc_gram(1.5)
        with pytest.raises(ParameterError):
            klmc_gram(0.0)
        with pytest.raises(ParameterError):
            rulmc_gram(0.5, -1.0)

    def test_indefinite_gram_rejected(self):
        """Materially indefinite matrices raise FactorizationError."""
        with pytest.raises(FactorizationError):
            NoiseGram(NoiseKind.RLMC, np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_entries_read_only(self):
        gram = klmc_gram(0.2)
        with pytest.raises(ValueError):
            gram.entries[0, 0] = 1.0


class TestKernelOracle:
    """Test closed forms against adaptive quadrature of the Brownian kernels."""

    @pytest.mark.parametrize("gamma", GAMMA_GRID)
    @pytest.mark.parametrize("alpha", ALPHA_GRID)
    def test_rulmc_matches_quadrature(self, alpha, gamma):
        closed = rulmc_gram(alpha, gamma).entries
        oracle = kernel_oracle_gram(NoiseKind.RULMC, gamma, alpha)
        assert np.max(np.abs(closed - oracle)) <= 1e-10

    @pytest.mark.parametrize("gamma", GAMMA_GRID)
    def test_klmc_matches_quadrature(self, gamma):
        closed = klmc_gram(gamma).entries
        oracle = kernel_oracle_gram(NoiseKind.KLMC, gamma)
        assert np.max(np.abs(closed - oracle)) <= 1e-10

    def test_no_oracle_for_rlmc(self):
        with pytest.raises(ParameterError):
            kernel_oracle_gram(NoiseKind.RLMC, 0.1)


class TestFactorization:
    """Test the Cholesky and clamped eigen-factors."""

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(1e-4, 5.0))
    def test_rulmc_gram_psd(self, alpha, gamma):
        """Grams are PSD up to rounding and the factor reproduces them."""
        gram = rulmc_gram(alpha, gamma)
        assert gram.min_eigenvalue() >= -1e-12
        L = gram.factor
        assert np.allclose(L @ L.T, gram.entries, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1e-4, 5.0))
    def test_klmc_gram_psd(self, gamma):
        gram = klmc_gram(gamma)
        assert gram.min_eigenvalue() >= -1e-12
        assert np.allclose(gram.factor @ gram.factor.T, gram.entries, atol=1e-12)

    def test_positive_definite_uses_cholesky(self):
        gram = klmc_gram(0.3)
        assert np.allclose(gram.factor, np.linalg.cholesky(gram.entries))
        assert np.allclose(np.triu(gram.factor, 1), 0.0)

    def test_rank_deficient_eigen_factor(self):
        """alpha = 1 makes the RLMC pair identical; the eigen-factor still reproduces it."""
        gram = rlmc_gram(1.0)
        assert np.allclose(gram.factor @ gram.factor.T, [[1.0, 1.0], [1.0, 1.0]], atol=1e-12)
        block = sample_block(gram, 5, RngStream(2))
        assert np.allclose(block[0], block[1])

    def test_rounding_negative_eigenvalue_clamped(self):
        entries = np.array([[1.0, 1.0], [1.0, 1.0 - 2e-14]])
        gram = NoiseGram(NoiseKind.RLMC, entries)
        assert np.all(np.isfinite(gram.factor))
        assert np.allclose(gram.factor @ gram.factor.T, entries, atol=1e-12)

    def test_sample_covariance(self):
        """Empirical covariance of 200k blocks matches the Gram."""
        gram = rulmc_gram(0.3, 0.5)
        draws = sample_block(gram, 200_000, RngStream(5))
        empirical = np.cov(draws)
        scale = np.sqrt(np.outer(np.diag(gram.entries), np.diag(gram.entries)))
        assert np.all(np.abs(empirical - gram.entries) <= 0.02 * scale + 1e-12)


class TestRngStream:
    """Test reproducibility and independence of streams."""

    def test_same_stream_same_draws(self):
        a = RngStream(42, 3).standard_normal(5)
        b = RngStream(42, 3).standard_normal(5)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(42, 0).standard_normal(5)
        b = RngStream(42, 1).standard_normal(5)
        assert not np.array_equal(a, b)

    def test_counter_advances(self):
        rng = RngStream(1)
        start = rng.counter
        rng.standard_normal(1000)
        assert rng.counter > start

    def test_negative_seed_rejected(self):
        with pytest.raises(ParameterError):
            RngStream(-1)

    def test_normal_draws_pass_ks_across_seeds(self):
        """At least 17 of 20 seeds give 1000 draws that a KS test accepts as N(0, 1)."""
        passed = sum(stats.kstest(RngStream(seed).standard_normal(1000), 'norm').pvalue > 0.01 for seed in range(20))
        assert passed >= 17

    def test_streams_uncorrelated(self):
        a = RngStream(7, 0).standard_normal(20_000)
        b = RngStream(7, 1).standard_normal(20_000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 5.0 / np.sqrt(20_000)


if __name__ == "__main__":
    pytest.main([__file__])

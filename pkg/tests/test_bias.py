"""Tests for stationary bias bounds, quadratic oracles and W2 estimates."""

import math

import numpy as np
import pytest

from core.bias import (
    BIAS_CSV_COLUMNS, BiasBoundInput, bias_sweep, lmc_stationary_variance_quadratic, rlmc_bias_bound,
    rlmc_stationary_variance_quadratic, rlmc_window_ok, rulmc_bias_bound, sample_stationary, w2_empirical_1d,
    w2_gaussian_diag, w2_rate
)
from core.errors import DimensionError, ParameterError
from core.noise import RngStream
from core.pipeline import SamplerConfig, SamplerKind
from core.potential import Potential
from core.schedule import Schedule


class TestBounds:
    """Test the closed-form bias bounds."""

    def test_rlmc_bound(self):
        """3 sqrt(0.1) 1.2^2 / (1 - 0.1/sqrt(3)) for m = M = d = 1."""
        b = BiasBoundInput(m=1.0, M=1.0, d=1, h=0.1)
        assert rlmc_bias_bound(b) == pytest.approx(1.4498086931, rel=1e-9)
        assert rlmc_bias_bound(b) == pytest.approx(1.449654, rel=1e-3)

    def test_rlmc_bound_grows_with_dimension(self):
        small = rlmc_bias_bound(BiasBoundInput(1.0, 1.0, 1, 0.1))
        large = rlmc_bias_bound(BiasBoundInput(1.0, 1.0, 4, 0.1))
        assert large == pytest.approx(2.0 * small)

    def test_rlmc_window(self):
        """h must stay below 2/(m+M) with a positive denominator."""
        assert rlmc_window_ok(BiasBoundInput(1.0, 1.0, 1, 0.5))
        with pytest.raises(ParameterError):
            rlmc_bias_bound(BiasBoundInput(1.0, 1.0, 1, 1.0))
        # inside 2/(m+M) but 1/kappa - M h / sqrt(3) <= 0
        b = BiasBoundInput(1.0, 10.0, 1, 0.1)
        assert not rlmc_window_ok(b)
        with pytest.raises(ParameterError):
            rlmc_bias_bound(b)

    def test_rulmc_bound(self):
        b = BiasBoundInput(m=1.0, M=1.0, d=1, h=0.01)
        assert rulmc_bias_bound(b) == pytest.approx(0.3030178236, rel=1e-9)

    def test_rulmc_bound_outside_window(self):
        with pytest.raises(ParameterError):
            rulmc_bias_bound(BiasBoundInput(1.0, 1.0, 1, 0.5))

    def test_invalid_input(self):
        with pytest.raises(ParameterError):
            BiasBoundInput(2.0, 1.0, 1, 0.1)
        with pytest.raises(ParameterError):
            BiasBoundInput(1.0, 1.0, 0, 0.1)
        with pytest.raises(ParameterError):
            BiasBoundInput(1.0, 1.0, 1, 0.0)

    def test_from_potential(self):
        b = BiasBoundInput.from_potential(Potential.diagonal([1.0, 2.0]), 0.05)
        assert b.kappa == 2.0
        assert b.d == 2


class TestQuadraticOracles:
    """Test exact stationary variances on f = x^2/2."""

    def test_rlmc_variance(self):
        assert rlmc_stationary_variance_quadratic(0.1) == pytest.approx(1.0001841960, rel=1e-9)

    def test_lmc_variance(self):
        """1 / (1 - h/2)."""
        assert lmc_stationary_variance_quadratic(0.1) == pytest.approx(1.0 / 0.95)

    def test_rlmc_bias_is_higher_order(self):
        """The midpoint chain's variance error shrinks much faster than Euler's."""
        for h in (0.05, 0.1, 0.2):
            rlmc_gap = abs(rlmc_stationary_variance_quadratic(h) - 1.0)
            lmc_gap = abs(lmc_stationary_variance_quadratic(h) - 1.0)
            assert rlmc_gap < 0.05 * lmc_gap

    def test_unstable_steps(self):
        with pytest.raises(ParameterError):
            lmc_stationary_variance_quadratic(2.0)
        with pytest.raises(ParameterError):
            rlmc_stationary_variance_quadratic(0.0)


class TestW2:
    """Test the W2 helpers."""

    def test_empirical_1d_shift(self):
        """Shifting a sample by c moves it by exactly |c|."""
        a = np.linspace(-1.0, 1.0, 11)
        assert w2_empirical_1d(a, a + 0.3) == pytest.approx(0.3)
        assert w2_empirical_1d(a[::-1], a) == pytest.approx(0.0)

    def test_empirical_1d_errors(self):
        with pytest.raises(DimensionError):
            w2_empirical_1d([1.0, 2.0], [1.0])
        with pytest.raises(ParameterError):
            w2_empirical_1d([], [])

    def test_gaussian_diag(self):
        """sqrt(|mu1 - mu2|^2 + |s1 - s2|^2)."""
        assert w2_gaussian_diag([3.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]) == pytest.approx(3.0)
        assert w2_gaussian_diag([0.0], [2.0], [0.0], [1.0]) == pytest.approx(1.0)
        with pytest.raises(DimensionError):
            w2_gaussian_diag([0.0], [1.0], [0.0, 0.0], [1.0, 1.0])
        with pytest.raises(ParameterError):
            w2_gaussian_diag([0.0], [0.0], [0.0], [1.0])


class TestSweeps:
    """Test the bias sweep and the W2 rate experiment."""

    def test_sample_stationary(self):
        p = Potential.isotropic()
        sample = sample_stationary(SamplerConfig(kind=SamplerKind.RLMC), p, 0.1, 1000, RngStream(1),
                                   burn_in_fraction=0.2, stride=10)
        assert sample.samples.shape == (80, 1)
        assert sample.sampler == "rlmc"
        with pytest.raises(ParameterError):
            sample_stationary(SamplerConfig(), p, 0.1, 100, RngStream(1), burn_in_fraction=1.0)

    def test_bias_sweep_rows(self):
        """One row per (sampler, h, replicate) with the oracle and the bound filled where they exist."""
        p = Potential.isotropic()
        rows = bias_sweep(p, [SamplerKind.RLMC, SamplerKind.LMC], [0.05, 0.1], 500, seed=3, seeds=2)
        assert len(rows) == 8
        assert {(r.sampler, r.h, r.replicate) for r in rows} == {
            (s, h, k) for s in ("rlmc", "lmc") for h in (0.05, 0.1) for k in (0, 1)
        }
        assert all(r.seed == 3 for r in rows)
        assert len({r.stream_id for r in rows}) == 8
        for row in rows:
            assert row.empirical_w2 >= 0.0
            assert row.w2_method == "sorted-1d"
            assert row.oracle_value is not None
            assert list(row.to_dict()) == BIAS_CSV_COLUMNS
        rlmc = [r for r in rows if r.sampler == "rlmc"]
        assert all(r.theory_bound is not None for r in rlmc)
        assert all(r.theory_bound is None for r in rows if r.sampler == "lmc")

    def test_bias_sweep_replicates_share_master_seed(self):
        """A second replicate under seed 3 is not the first replicate of a seed-4 sweep."""
        p = Potential.isotropic()
        two = bias_sweep(p, [SamplerKind.RLMC], [0.1], 300, seed=3, seeds=2)
        other = bias_sweep(p, [SamplerKind.RLMC], [0.1], 300, seed=4, seeds=1)
        assert [r.stream_id for r in two] == [0, 2]
        assert two[1].empirical_w2 != other[0].empirical_w2
        again = bias_sweep(p, [SamplerKind.RLMC], [0.1], 300, seed=3, seeds=2)
        assert [r.empirical_w2 for r in again] == [r.empirical_w2 for r in two]

    def test_bias_sweep_kinetic_multidimensional(self):
        p = Potential.isotropic(d=3)
        rows = bias_sweep(p, [SamplerKind.RULMC], [0.01], 300, seed=1)
        assert len(rows) == 1
        assert rows[0].w2_method == "gaussian-diag"
        assert rows[0].oracle_value is None
        assert rows[0].theory_bound == pytest.approx(0.3030178236 * math.sqrt(3.0), rel=1e-9)

    @pytest.mark.slow
    def test_empirical_w2_below_bounds(self):
        """Every bounded row sits under its bound, and the exact bias decays faster than the bound."""
        p = Potential.isotropic()
        h_grid = [0.02, 0.05, 0.1, 0.2]
        rows = bias_sweep(p, [SamplerKind.RLMC, SamplerKind.LMC, SamplerKind.RULMC], h_grid, 20_000, seed=13)
        bounded = [r for r in rows if r.theory_bound is not None]
        assert {r.h for r in bounded if r.sampler == "rlmc"} == set(h_grid)
        for row in bounded:
            assert row.empirical_w2 <= row.theory_bound, row.to_dict()

        log_h = np.log(h_grid)

        def slope(sampler, column):
            values = [getattr(r, column) for r in rows if r.sampler == sampler]
            return np.polyfit(log_h, np.log(values), 1)[0]

        bound_slope = slope("rlmc", "theory_bound")
        assert 0.5 <= bound_slope < 1.0
        assert slope("rlmc", "oracle_value") - bound_slope > 1.5
        assert slope("lmc", "oracle_value") == pytest.approx(1.0, abs=0.15)

    def test_w2_rate_rows(self):
        p = Potential.isotropic()
        rows = w2_rate(p, SamplerConfig(kind=SamplerKind.RLMC), Schedule.rlmc_fast(1.0, 1.0), [10, 50], 20, seed=5)
        assert [r.n for r in rows] == [10, 50]
        assert all(r.reference == 1.0 for r in rows)
        assert all(r.w2 >= 0.0 for r in rows)

    def test_w2_rate_arguments(self):
        p = Potential.isotropic()
        with pytest.raises(ParameterError):
            w2_rate(p, SamplerConfig(), Schedule.constant(0.1), [10], 1, seed=0)
        with pytest.raises(ParameterError):
            w2_rate(p, SamplerConfig(), Schedule.constant(0.1), [], 4, seed=0)


if __name__ == "__main__":
    pytest.main([__file__])

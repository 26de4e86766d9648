"""Tests for quadrature, asymptotic laws, intervals, the replicate harness and normality checks."""

import json
import math

import numpy as np
import pytest
from scipy import special

from core.clt import (
    AsymptoticLaw, CltReport, NormalizerKind, ReplicateJob, asym_bias_rho_overdamped, asym_variance_overdamped,
    asym_variance_underdamped, confidence_interval, kinetic_special_law, normality_check, normalizer_for,
    overdamped_bias_terms, overdamped_law, replicate_harness, run_replicate, underdamped_bias_terms,
    underdamped_general_law
)
from core.errors import ParameterError, RegimeError, ResolutionError
from core.pipeline import SamplerConfig, SamplerKind
from core.potential import PhaseTestFunction, Potential, TestFunction
from core.quadrature import QuadratureOracle, QuadratureRule
from core.schedule import (
    Regime, Schedule, Setting, classify_overdamped, classify_underdamped, empirical_gamma_hat
)


@pytest.fixture
def iso():
    return Potential.isotropic()


@pytest.fixture
def oracle(iso):
    return QuadratureOracle(iso)


class TestQuadrature:
    """Test the Gaussian and log-cosh oracles."""

    def test_gaussian_moments(self, oracle):
        assert oracle.expect_x(lambda x: x[:, 0] ** 2) == pytest.approx(1.0, abs=1e-12)
        assert oracle.expect_x(lambda x: x[:, 0] ** 4) == pytest.approx(3.0, abs=1e-12)
        assert oracle.expect_x(lambda x: x[:, 0] ** 3) == pytest.approx(0.0, abs=1e-12)

    def test_scaled_gaussian(self):
        """pi = N(0, 1/c) for f = c x^2/2."""
        q = QuadratureOracle(Potential.diagonal([4.0, 0.5]))
        assert q.expect_x(lambda x: x[:, 0] ** 2) == pytest.approx(0.25)
        assert q.expect_x(lambda x: x[:, 1] ** 2) == pytest.approx(2.0)

    def test_phase_expectation(self, oracle):
        """E_nu[v^2] = u."""
        assert oracle.expect_xv(lambda x, v: v[:, 0] ** 2, u=0.5) == pytest.approx(0.5)
        assert oracle.expect_xv(lambda x, v: x[:, 0] ** 2 * v[:, 0] ** 2, u=2.0) == pytest.approx(2.0)

    def test_resolution_error(self, iso):
        """Two nodes integrate degree 3 exactly, not degree 4."""
        q = QuadratureOracle(iso, nodes=2)
        assert q.exact_degree == 3
        with pytest.raises(ResolutionError):
            asym_variance_overdamped(TestFunction.quadratic(), iso, q)

    def test_logcosh_quadrature_matches_sampling(self):
        """Reweighted Gauss-Hermite agrees with exact rejection sampling."""
        p = Potential.logcosh(d=1, c=1.0, eps=0.5)
        gh = QuadratureOracle(p, nodes=40)
        mc = QuadratureOracle(p, QuadratureRule.MONTE_CARLO, samples=200_000, seed=3)
        assert gh.exact_degree is None
        exact = gh.expect_x(lambda x: x[:, 0] ** 2)
        estimate, se = mc.expect_x_with_error(lambda x: x[:, 0] ** 2)
        assert abs(estimate - exact) <= 4.0 * se + 1e-6
        assert exact < 1.0

    def test_invalid_oracle(self, iso):
        with pytest.raises(ParameterError):
            QuadratureOracle(iso, nodes=0)
        with pytest.raises(ParameterError):
            QuadratureOracle(iso).expect_xv(lambda x, v: v[:, 0], u=0.0)


class TestAsymptoticConstants:
    """Test variance and bias constants against closed forms on f = x^2/2."""

    def test_overdamped_variance(self, iso, oracle):
        """2 E[(2x)^2] = 8 for phi = x^2."""
        assert asym_variance_overdamped(TestFunction.quadratic(), iso, oracle) == pytest.approx(8.0)

    def test_overdamped_bias(self, iso, oracle):
        """varrho(x^2) = -1 - 1 + 4 = 2."""
        phi = TestFunction.quadratic()
        terms = overdamped_bias_terms(phi, iso, oracle)
        assert terms['trace_d2phi_squared'] == pytest.approx(4.0)
        assert asym_bias_rho_overdamped(phi, iso, oracle) == pytest.approx(2.0)

    def test_kinetic_bias(self, iso, oracle):
        """rho(x^2) = 7/6 - 1/2 - 1/12 = 7/12 at u = 1."""
        terms = underdamped_bias_terms(TestFunction.quadratic(), 1.0, iso, oracle)
        assert sum(terms.values()) == pytest.approx(7.0 / 12.0)

    def test_kinetic_bias_needs_kinetic_sampler(self, iso, oracle):
        with pytest.raises(ParameterError):
            underdamped_bias_terms(TestFunction.quadratic(), 1.0, iso, oracle, SamplerKind.RLMC)

    def test_kinetic_variance(self, iso, oracle):
        """(10/3) u E[(2x)^2] = 40/3 at u = 1."""
        law = kinetic_special_law(TestFunction.quadratic(), 1.0, iso, oracle)
        assert law.variance == pytest.approx(40.0 / 3.0)
        assert law.bias_constant == pytest.approx(7.0 / 12.0)
        assert law.normalizer is NormalizerKind.GAMMA_OVER_SQRT_GAMMA3
        assert law.mean == 0.0

    @pytest.mark.parametrize("u,expected", [(0.5, 2.0), (1.0, 4.0)])
    def test_general_underdamped_variance(self, oracle, u, expected):
        """4u E[(d/dv v)^2] = 4u."""
        g = PhaseTestFunction.velocity_polynomial(d=1, a1=1.0)
        assert asym_variance_underdamped(g, u, oracle) == pytest.approx(expected)


class TestLaws:
    """Test regime-dependent laws and intervals."""

    def test_overdamped_zero_regime(self, iso, oracle):
        law = overdamped_law(TestFunction.quadratic(), iso, oracle, classify_overdamped(0.4))
        assert law.mean == 0.0
        assert law.variance == pytest.approx(8.0)
        assert law.normalizer is NormalizerKind.SQRT_GAMMA

    def test_overdamped_finite_regime(self, iso, oracle):
        """Mean varrho * sqrt(6) at alpha = 1/3."""
        law = overdamped_law(TestFunction.quadratic(), iso, oracle, classify_overdamped(1.0 / 3.0))
        assert law.mean == pytest.approx(2.0 * math.sqrt(6.0))
        assert law.mean == pytest.approx(4.898979, rel=1e-6)

    def test_overdamped_infinite_regime(self, iso, oracle):
        law = overdamped_law(TestFunction.quadratic(), iso, oracle, classify_overdamped(0.2))
        assert law.in_probability
        assert law.variance == 0.0
        assert law.normalizer is NormalizerKind.GAMMA_OVER_GAMMA2
        with pytest.raises(RegimeError):
            confidence_interval(0.1, 10.0, law)

    def test_kinetic_finite_regime(self, iso, oracle):
        """Variance divided by gamma_hat^2 = 10 at alpha = 1/5."""
        law = kinetic_special_law(TestFunction.quadratic(), 1.0, iso, oracle, regime=classify_underdamped(0.2))
        assert law.normalizer is NormalizerKind.GAMMA_OVER_GAMMA4
        assert law.variance == pytest.approx(4.0 / 3.0)
        assert law.mean == pytest.approx(7.0 / 12.0)
        assert classify_underdamped(0.2).limit == pytest.approx(3.162278, rel=1e-6)

    def test_general_underdamped_needs_zero_regime(self, oracle):
        g = PhaseTestFunction.velocity_polynomial(d=1, a1=1.0)
        with pytest.raises(RegimeError):
            underdamped_general_law(g, 1.0, oracle, classify_overdamped(1.0 / 3.0))
        law = underdamped_general_law(g, 1.0, oracle, classify_overdamped(0.5))
        assert law.variance == pytest.approx(4.0)

    def test_zero_regime_mean_enforced(self):
        with pytest.raises(ParameterError):
            AsymptoticLaw(NormalizerKind.SQRT_GAMMA, 1.0, 1.0, classify_overdamped(0.5))

    def test_confidence_interval(self):
        """1.959964 * sqrt(2) / 10 = 0.277181."""
        law = AsymptoticLaw(NormalizerKind.SQRT_GAMMA, 0.0, 2.0, classify_overdamped(0.5))
        lower, upper = confidence_interval(1.0, 10.0, law, level=0.95)
        assert upper - 1.0 == pytest.approx(0.277181, abs=1e-6)
        assert 1.0 - lower == pytest.approx(0.277181, abs=1e-6)

    def test_confidence_interval_bias_corrected(self):
        """The center moves by mean / normalizer."""
        regime = classify_overdamped(1.0 / 3.0)
        law = AsymptoticLaw(NormalizerKind.SQRT_GAMMA, 1.0, 2.0, regime)
        lower, upper = confidence_interval(0.5, 10.0, law)
        assert (lower + upper) / 2.0 == pytest.approx(0.4)

    def test_level_zero_degenerates(self):
        law = AsymptoticLaw(NormalizerKind.SQRT_GAMMA, 0.0, 2.0, classify_overdamped(0.5))
        lower, upper = confidence_interval(1.0, 10.0, law, level=0.0)
        assert lower == pytest.approx(upper)
        with pytest.raises(ParameterError):
            confidence_interval(1.0, 10.0, law, level=1.0)

    @pytest.mark.parametrize("setting,alpha,expected", [
        (Setting.OVERDAMPED, 0.4, NormalizerKind.SQRT_GAMMA),
        (Setting.OVERDAMPED, 1.0 / 3.0, NormalizerKind.SQRT_GAMMA),
        (Setting.OVERDAMPED, 0.2, NormalizerKind.GAMMA_OVER_GAMMA2),
        (Setting.UNDERDAMPED, 0.25, NormalizerKind.GAMMA_OVER_SQRT_GAMMA3),
        (Setting.UNDERDAMPED, 0.2, NormalizerKind.GAMMA_OVER_GAMMA4),
        (Setting.UNDERDAMPED, 0.1, NormalizerKind.GAMMA_OVER_GAMMA4),
    ])
    def test_normalizer_for(self, setting, alpha, expected):
        classify = classify_overdamped if setting is Setting.OVERDAMPED else classify_underdamped
        assert normalizer_for(classify(alpha)) is expected

    def test_normalizer_values(self):
        sums = (4.0, 2.0, 16.0, 0.5)
        assert NormalizerKind.SQRT_GAMMA.evaluate(sums) == 2.0
        assert NormalizerKind.GAMMA_OVER_SQRT_GAMMA3.evaluate(sums) == 1.0
        assert NormalizerKind.GAMMA_OVER_GAMMA2.evaluate(sums) == 2.0
        assert NormalizerKind.GAMMA_OVER_GAMMA4.evaluate(sums) == 8.0
        assert NormalizerKind.SQRT_GAMMA.value == "sqrt(Gamma_n)"


class TestReplicateHarness:
    """Test replicated runs."""

    def create_job(self, n_steps=200, schedule=None, kind=SamplerKind.RLMC, checkpoints=()):
        """RLMC replicate job on f = x^2/2 with phi = x^2."""
        return ReplicateJob(
            sampler=SamplerConfig(kind=kind),
            potential=Potential.isotropic(),
            schedule=schedule or Schedule.polynomial(0.4),
            test_function=TestFunction.quadratic(),
            n_steps=n_steps,
            seed=17,
            checkpoints=checkpoints
        )

    def test_checkpoints_recorded(self):
        outcome = run_replicate(self.create_job(checkpoints=(50, 200)), 0, 0)
        assert [r['n'] for r in outcome.checkpoints] == [50, 200]
        assert outcome.checkpoints[-1]['estimate'] == outcome.estimate
        assert not outcome.diverged

    def test_serial_and_parallel_agree(self, iso, oracle):
        """Worker count does not change any replicate."""
        law = overdamped_law(TestFunction.quadratic(), iso, oracle, classify_overdamped(0.4))
        serial = replicate_harness(self.create_job(), 4, law, workers=1)
        parallel = replicate_harness(self.create_job(), 4, law, workers=2)
        assert serial.statistics == parallel.statistics
        assert [o.stream_id for o in parallel.outcomes] == [0, 1, 2, 3]
        assert len(set(serial.statistics)) == 4

    def test_statistic_is_normalized_estimate(self, iso, oracle):
        law = overdamped_law(TestFunction.quadratic(), iso, oracle, classify_overdamped(0.4))
        batch = replicate_harness(self.create_job(), 2, law)
        outcome = batch.outcomes[0]
        assert batch.statistics[0] == pytest.approx(math.sqrt(outcome.gamma_sums[0]) * outcome.estimate)

    def test_divergence_recorded(self, iso, oracle):
        """Diverged replicates are excluded, not raised."""
        law = overdamped_law(TestFunction.quadratic(), iso, oracle, classify_overdamped(0.4))
        job = self.create_job(n_steps=2000, schedule=Schedule.constant(10.0), kind=SamplerKind.LMC)
        with np.errstate(over='ignore', invalid='ignore'):
            batch = replicate_harness(job, 2, law)
        assert batch.excluded == [0, 1]
        assert batch.statistics == []
        assert all(o.divergence_step is not None for o in batch.outcomes)

    def test_needs_two_replicates(self, iso, oracle):
        law = overdamped_law(TestFunction.quadratic(), iso, oracle, classify_overdamped(0.4))
        with pytest.raises(ParameterError):
            replicate_harness(self.create_job(), 1, law)

    @pytest.mark.slow
    def test_overdamped_zero_regime_variance(self, iso, oracle):
        """Replicated statistics have variance close to 2 E[(2x)^2] = 8."""
        law = overdamped_law(TestFunction.quadratic(), iso, oracle, classify_overdamped(0.4))
        batch = replicate_harness(self.create_job(n_steps=10_000), 200, law, workers=4)
        assert np.var(batch.statistics, ddof=1) == pytest.approx(8.0, rel=0.3)

    @pytest.mark.slow
    def test_overdamped_zero_regime_coverage(self, iso, oracle):
        """At least 88% of 95% intervals from 200 replicates contain pi(A phi) = 0."""
        law = overdamped_law(TestFunction.quadratic(), iso, oracle, classify_overdamped(0.4))
        batch = replicate_harness(self.create_job(n_steps=10_000), 200, law, workers=4)
        assert not batch.excluded
        covered = 0
        for outcome in batch.outcomes:
            lower, upper = confidence_interval(outcome.estimate, law.normalizer.evaluate(outcome.gamma_sums), law)
            covered += lower <= 0.0 <= upper
        assert covered / batch.replicates >= 0.88

    @pytest.mark.slow
    def test_overdamped_finite_regime(self, iso, oracle):
        """At alpha = 1/3 the centering rho * gamma_hat_n moves toward rho * sqrt(6) and the spread stays near 8."""
        law = overdamped_law(TestFunction.quadratic(), iso, oracle, classify_overdamped(1.0 / 3.0))
        schedule = Schedule.polynomial(1.0 / 3.0)
        centering = []
        for n in (1_000, 10_000, 100_000):
            while schedule.n < n:
                schedule.next_gamma()
            centering.append(law.bias_constant * empirical_gamma_hat(schedule, Setting.OVERDAMPED))
        gaps = [abs(c - law.mean) for c in centering]
        assert gaps[0] > gaps[1] > gaps[2]
        assert law.mean == pytest.approx(2.0 * math.sqrt(6.0))

        batch = replicate_harness(self.create_job(n_steps=10_000, schedule=Schedule.polynomial(1.0 / 3.0)),
                                  200, law, workers=4)
        assert not batch.excluded
        assert np.all(np.isfinite(batch.normalized))
        assert np.var(batch.normalized, ddof=1) == pytest.approx(8.0, rel=0.3)

    @pytest.mark.slow
    def test_kinetic_zero_regime_smoke(self, iso, oracle):
        """RULMC on <v, grad x^2>: 200 finite replicates whose standardized statistics look Gaussian."""
        phi = TestFunction.quadratic()
        law = kinetic_special_law(phi, 1.0, iso, oracle, SamplerKind.RULMC, classify_underdamped(0.25))
        job = ReplicateJob(
            sampler=SamplerConfig(kind=SamplerKind.RULMC, u=1.0),
            potential=iso,
            schedule=Schedule.polynomial(0.25, gamma0=0.5),
            test_function=PhaseTestFunction.kinetic(phi),
            n_steps=20_000,
            seed=29
        )
        batch = replicate_harness(job, 200, law, workers=4)
        assert not batch.excluded
        values = np.asarray(batch.normalized)
        assert np.all(np.isfinite(values))
        centered = values - values.mean()
        report = normality_check(centered, target_variance=float(np.var(values, ddof=1)), critical_coefficient=1.63)
        assert report.passed, report.to_dict()


class TestParity:
    """Odd test functions against even potentials have vanishing bias constants."""

    @pytest.mark.parametrize("p", [
        Potential.isotropic(),
        Potential.diagonal([1.0, 4.0]),
        Potential.logcosh(d=1, c=1.0, eps=0.5),
    ], ids=["isotropic", "diagonal", "logcosh"])
    def test_linear_test_function(self, p):
        phi = TestFunction.linear(d=p.d)
        oracle = QuadratureOracle(p, nodes=40 if p.d == 1 else 20)
        assert abs(asym_bias_rho_overdamped(phi, p, oracle)) <= 1e-10
        for kind in (SamplerKind.RULMC, SamplerKind.KLMC):
            for u in (0.5, 1.0):
                assert abs(sum(underdamped_bias_terms(phi, u, p, oracle, kind).values())) <= 1e-10


class TestOracleAgreement:
    """Gauss-Hermite constants agree with exact-sampling Monte Carlo constants."""

    @staticmethod
    def close(quadrature, sampled, rel=0.05):
        return abs(quadrature - sampled) <= rel * max(1.0, abs(quadrature))

    @pytest.mark.parametrize("phi", [TestFunction.linear(), TestFunction.quadratic()], ids=["linear", "quadratic"])
    @pytest.mark.parametrize("p", [Potential.isotropic(), Potential.logcosh(d=1, c=1.0, eps=0.5)],
                             ids=["isotropic", "logcosh"])
    def test_overdamped_constants(self, phi, p):
        gh = QuadratureOracle(p, nodes=40)
        mc = QuadratureOracle(p, QuadratureRule.MONTE_CARLO, samples=200_000, seed=11)

        def grad_squared(x):
            return np.sum(phi.grad(x) ** 2, axis=-1)

        exact = gh.expect_x(grad_squared)
        estimate, se = mc.expect_x_with_error(grad_squared)
        assert abs(estimate - exact) <= 5.0 * se + 1e-9
        assert self.close(asym_variance_overdamped(phi, p, gh), asym_variance_overdamped(phi, p, mc))
        gh_terms = overdamped_bias_terms(phi, p, gh)
        mc_terms = overdamped_bias_terms(phi, p, mc)
        for name, value in gh_terms.items():
            assert self.close(value, mc_terms[name]), name

    @pytest.mark.parametrize("u", [0.5, 1.0])
    @pytest.mark.parametrize("phi", [TestFunction.linear(), TestFunction.quadratic()], ids=["linear", "quadratic"])
    @pytest.mark.parametrize("p", [Potential.isotropic(), Potential.logcosh(d=1, c=1.0, eps=0.5)],
                             ids=["isotropic", "logcosh"])
    def test_kinetic_constants(self, phi, p, u):
        gh = QuadratureOracle(p, nodes=40)
        mc = QuadratureOracle(p, QuadratureRule.MONTE_CARLO, samples=200_000, seed=11)
        for kind in (SamplerKind.RULMC, SamplerKind.KLMC):
            gh_law = kinetic_special_law(phi, u, p, gh, kind)
            mc_law = kinetic_special_law(phi, u, p, mc, kind)
            assert self.close(gh_law.variance, mc_law.variance)
            gh_terms = underdamped_bias_terms(phi, u, p, gh, kind)
            mc_terms = underdamped_bias_terms(phi, u, p, mc, kind)
            for name, value in gh_terms.items():
                assert self.close(value, mc_terms[name]), f"{kind.value} {name}"

    @pytest.mark.parametrize("u", [0.5, 1.0])
    def test_phase_variance(self, u):
        p = Potential.logcosh(d=1, c=1.0, eps=0.5)
        g = PhaseTestFunction.velocity_polynomial(d=1, a1=1.0, a2=0.5)
        gh = QuadratureOracle(p, nodes=40)
        mc = QuadratureOracle(p, QuadratureRule.MONTE_CARLO, samples=200_000, seed=11)

        def grad_v_squared(x, v):
            return np.sum(g.grad_v(v) ** 2, axis=-1)

        exact = gh.expect_xv(grad_v_squared, u)
        estimate, se = mc.expect_xv_with_error(grad_v_squared, u)
        assert abs(estimate - exact) <= 5.0 * se + 1e-9
        assert self.close(asym_variance_underdamped(g, u, gh), asym_variance_underdamped(g, u, mc))


class TestNormalityCheck:
    """Test the KS comparison."""

    def test_normal_quantiles_pass(self):
        R = 200
        quantiles = special.ndtri((np.arange(R) + 0.5) / R)
        report = normality_check(2.0 * quantiles, target_variance=4.0)
        assert report.passed
        assert report.ks_statistic == pytest.approx(0.5 / R, abs=1e-9)
        assert report.message == ""

    def test_shifted_statistics_fail(self):
        R = 200
        quantiles = special.ndtri((np.arange(R) + 0.5) / R)
        report = normality_check(quantiles + 1.0, target_variance=1.0)
        assert not report.passed
        assert report.mean == pytest.approx(1.0, abs=1e-9)

    def test_small_batches_flagged(self):
        report = normality_check([0.1, -0.2, 0.3], target_variance=1.0)
        assert "asymptotic" in report.message

    def test_degenerate_input(self):
        report = normality_check([1.0], target_variance=1.0)
        assert not report.passed
        assert normality_check([1.0, 2.0], target_variance=0.0).passed is False


class TestCltReport:
    """Test the summary serialization."""

    def test_json(self):
        law = AsymptoticLaw(NormalizerKind.SQRT_GAMMA, 0.0, 8.0, classify_overdamped(0.4))
        report = CltReport(law, 0.01, (-0.1, 0.12), None, 10, [3], 42, list(range(10)), 0.95)
        data = json.loads(report.to_json())
        assert data['regime'] == Regime.ZERO.value
        assert data['normalizer'] == "sqrt(Gamma_n)"
        assert data['interval'] == [-0.1, 0.12]
        assert data['excluded'] == [3]
        assert data['ks_statistic'] is None


if __name__ == "__main__":
    pytest.main([__file__])

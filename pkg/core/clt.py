"""Asymptotic laws of step-weighted averages, confidence intervals, and replicated normality checks."""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special, stats

from core.errors import DivergenceError, ParameterError, RegimeError
from core.noise import RngStream
from core.pipeline import (
    AveragingObserver, SamplerConfig, SamplerKind, State, centered_observable, run_chain
)
from core.potential import PhaseTestFunction, Potential, TestFunction
from core.quadrature import QuadratureOracle
from core.schedule import Regime, RegimeReport, Schedule, Setting, classify_underdamped
from utils.logging_setup import get_logger

logger = get_logger("clt")

# Moments of a standard Gaussian coordinate: E[u^2] = 1, E[u^4] = 3
GAUSS_M2 = 1.0
GAUSS_M4 = 3.0


class NormalizerKind(Enum):
    """Normalizers of the weighted average."""
    SQRT_GAMMA = "sqrt(Gamma_n)"
    GAMMA_OVER_SQRT_GAMMA3 = "Gamma_n/sqrt(Gamma3_n)"
    GAMMA_OVER_GAMMA2 = "Gamma_n/Gamma2_n"
    GAMMA_OVER_GAMMA4 = "Gamma_n/Gamma4_n"

    def evaluate(self, sums: Sequence[float]) -> float:
        """Evaluate from (Gamma1_n, Gamma2_n, Gamma3_n, Gamma4_n)."""
        g1, g2, g3, g4 = sums
        if self is NormalizerKind.SQRT_GAMMA:
            return math.sqrt(g1)
        if self is NormalizerKind.GAMMA_OVER_SQRT_GAMMA3:
            return g1 / math.sqrt(g3)
        if self is NormalizerKind.GAMMA_OVER_GAMMA2:
            return g1 / g2
        return g1 / g4


@dataclass
class AsymptoticLaw:
    """
    Limit law of normalizer * average.

    Attributes:
        normalizer: Normalizer kind
        mean: Limit mean (0 in the Zero regime)
        variance: Limit variance (0 for a convergence-in-probability limit)
        regime: Regime the law was derived for
        bias_constant: The bias constant (varrho or rho) before scaling
        in_probability: True when the limit is a constant, not a Gaussian
        notes: Metadata echoed into reports
    """
    normalizer: NormalizerKind
    mean: float
    variance: float
    regime: RegimeReport
    bias_constant: float = 0.0
    in_probability: bool = False
    notes: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.variance < 0.0:
            raise ParameterError(f"variance must be non-negative, got {self.variance}")
        if self.regime.regime is Regime.ZERO and self.mean != 0.0:
            raise ParameterError("Zero regime law must have mean 0")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'normalizer': self.normalizer.value,
            'mean': self.mean,
            'variance': self.variance,
            'regime': self.regime.to_dict(),
            'bias_constant': self.bias_constant,
            'in_probability': self.in_probability,
            'notes': dict(self.notes)
        }


def normalizer_for(report: RegimeReport) -> NormalizerKind:
    """Normalizer of the law for a given regime."""
    if report.setting is Setting.OVERDAMPED:
        if report.regime is Regime.INFINITE:
            return NormalizerKind.GAMMA_OVER_GAMMA2
        return NormalizerKind.SQRT_GAMMA
    if report.regime is Regime.ZERO:
        return NormalizerKind.GAMMA_OVER_SQRT_GAMMA3
    return NormalizerKind.GAMMA_OVER_GAMMA4


def _poly_degree(phi: TestFunction) -> Optional[int]:
    return 2 * max(phi.degree, 1)


def _sum(values: np.ndarray) -> np.ndarray:
    return np.sum(values, axis=-1)


def asym_variance_overdamped(phi: TestFunction, p: Potential, oracle: QuadratureOracle) -> float:
    """2 * E_pi ||grad phi||^2."""
    return 2.0 * oracle.expect_x(lambda x: _sum(phi.grad(x) ** 2), degree=_poly_degree(phi))


def overdamped_bias_terms(phi: TestFunction, p: Potential, oracle: QuadratureOracle) -> Dict[str, float]:
    """
    The six contributions to varrho.

    Every registered family has diagonal derivative tensors, so contractions
    with u (x) u under the standard Gaussian reduce to per-coordinate sums
    weighted by E[u_i^2] and E[u_i^4].
    """
    degree = _poly_degree(phi)

    def integrate(fn: Any) -> float:
        return oracle.expect_x(fn, degree=degree)

    return {
        'd3phi_gradf_uu': GAUSS_M2 * integrate(lambda x: _sum(phi.third_diag(x) * p.grad(x))),
        'd2f_gradphi_gradf': -0.5 * integrate(lambda x: _sum(p.hessian_diag(x) * phi.grad(x) * p.grad(x))),
        'd3f_gradphi_uu': 0.5 * GAUSS_M2 * integrate(lambda x: _sum(p.third_diag(x) * phi.grad(x))),
        'd2phi_gradf_gradf': -0.5 * integrate(lambda x: _sum(phi.hessian_diag(x) * p.grad(x) ** 2)),
        'trace_d2phi_squared': integrate(lambda x: _sum(phi.hessian_diag(x) ** 2)),
        'd4phi_uuuu': -GAUSS_M4 / 6.0 * integrate(lambda x: _sum(phi.fourth_diag(x))),
    }


def asym_bias_rho_overdamped(phi: TestFunction, p: Potential, oracle: QuadratureOracle) -> float:
    """varrho, the bias constant of the randomized-midpoint overdamped average."""
    return float(sum(overdamped_bias_terms(phi, p, oracle).values()))


def asym_variance_underdamped(g: PhaseTestFunction, u: float, oracle: QuadratureOracle) -> float:
    """4u * E_nu ||grad_v g||^2."""
    return 4.0 * u * oracle.expect_xv(lambda x, v: _sum(g.grad_v(v) ** 2), u, degree=2)


def underdamped_bias_terms(
    phi: TestFunction,
    u: float,
    p: Potential,
    oracle: QuadratureOracle,
    kind: SamplerKind = SamplerKind.RULMC
) -> Dict[str, float]:
    """
    The five contributions to rho for g = phi(x), with v ~ N(0, u I) integrated out.

    E[v_i^2] = u and E[v_i^4] = 3u^2 for the diagonal contractions.
    """
    if kind not in (SamplerKind.RULMC, SamplerKind.KLMC):
        raise ParameterError(f"no kinetic bias constant for sampler {kind.value}")
    degree = _poly_degree(phi)

    def integrate(fn: Any) -> float:
        return oracle.expect_x(fn, degree=degree)

    d3phi_gradf = integrate(lambda x: _sum(phi.third_diag(x) * p.grad(x)))
    d3f_gradphi = integrate(lambda x: _sum(p.third_diag(x) * phi.grad(x)))
    d2phi_d2f = integrate(lambda x: _sum(phi.hessian_diag(x) * p.hessian_diag(x)))
    d2f_gradphi_gradf = integrate(lambda x: _sum(p.hessian_diag(x) * phi.grad(x) * p.grad(x)))

    if kind is SamplerKind.RULMC:
        d2phi_gradf = integrate(lambda x: _sum(phi.hessian_diag(x) * p.grad(x) ** 2))
        return {
            'd3phi_gradf_vv': 5.0 * u / 12.0 * u * d3phi_gradf,
            'd3f_gradphi_vv': u / 24.0 * u * d3f_gradphi,
            'd2phi_d2f_vv': 7.0 * u / 12.0 * u * d2phi_d2f,
            'd2phi_gradf_gradf': -(u ** 2) / 4.0 * d2phi_gradf,
            'd2f_gradphi_gradf': -(u ** 2) / 24.0 * d2f_gradphi_gradf,
        }
    d4phi = integrate(lambda x: _sum(phi.fourth_diag(x)))
    return {
        'd3phi_gradf_vv': u / 6.0 * u * d3phi_gradf,
        'd3f_gradphi_vv': u / 24.0 * u * d3f_gradphi,
        'd2phi_d2f_vv': u / 12.0 * u * d2phi_d2f,
        'd4phi_vvvv': -1.0 / 12.0 * GAUSS_M4 * u ** 2 * d4phi,
        'd2f_gradphi_gradf': -(u ** 2) / 24.0 * d2f_gradphi_gradf,
    }


def overdamped_law(phi: TestFunction, p: Potential, oracle: QuadratureOracle, regime: RegimeReport) -> AsymptoticLaw:
    """Limit law of the randomized-midpoint overdamped average of A phi."""
    if regime.setting is not Setting.OVERDAMPED:
        raise ParameterError("overdamped law needs an overdamped regime report")
    variance = asym_variance_overdamped(phi, p, oracle)
    rho = asym_bias_rho_overdamped(phi, p, oracle)
    notes = {'variance_integrand': "2 ||grad phi||^2", 'oracle': oracle.to_dict()}

    if regime.regime is Regime.ZERO:
        return AsymptoticLaw(NormalizerKind.SQRT_GAMMA, 0.0, variance, regime, rho, notes=notes)
    if regime.regime is Regime.FINITE:
        return AsymptoticLaw(NormalizerKind.SQRT_GAMMA, rho * regime.limit, variance, regime, rho, notes=notes)
    # sqrt(Gamma_n) / gamma_hat_n = Gamma_n / Gamma2_n
    return AsymptoticLaw(NormalizerKind.GAMMA_OVER_GAMMA2, rho, 0.0, regime, rho, in_probability=True, notes=notes)


def kinetic_special_law(
    phi: TestFunction,
    u: float,
    p: Potential,
    oracle: QuadratureOracle,
    kind: SamplerKind = SamplerKind.RULMC,
    regime: Optional[RegimeReport] = None
) -> AsymptoticLaw:
    """
    Limit law of the kinetic average of <v, grad phi(x)>.

    Args:
        phi: x-part of the test function
        u: Inverse mass
        p: Potential
        oracle: Quadrature oracle for pi
        kind: RULMC or KLMC (selects the bias constant)
        regime: Underdamped regime; defaults to the Zero regime of alpha = 1/4

    Returns:
        AsymptoticLaw
    """
    if not u > 0.0:
        raise ParameterError(f"inverse mass u must be positive, got {u}")
    if regime is None:
        regime = classify_underdamped(0.25)
    if regime.setting is not Setting.UNDERDAMPED:
        raise ParameterError("kinetic law needs an underdamped regime report")

    base = 10.0 / 3.0 * u * oracle.expect_x(lambda x: _sum(phi.grad(x) ** 2), degree=_poly_degree(phi))
    rho = float(sum(underdamped_bias_terms(phi, u, p, oracle, kind).values()))
    notes = {
        'variance_integrand': "(10/3) u ||grad phi||^2 (squared gradient)",
        'sampler': kind.value,
        'oracle': oracle.to_dict()
    }

    if regime.regime is Regime.ZERO:
        return AsymptoticLaw(NormalizerKind.GAMMA_OVER_SQRT_GAMMA3, 0.0, base, regime, rho, notes=notes)
    if regime.regime is Regime.FINITE:
        return AsymptoticLaw(NormalizerKind.GAMMA_OVER_GAMMA4, rho, base / regime.limit ** 2, regime, rho, notes=notes)
    return AsymptoticLaw(NormalizerKind.GAMMA_OVER_GAMMA4, rho, 0.0, regime, rho, in_probability=True, notes=notes)


def underdamped_general_law(
    g: PhaseTestFunction,
    u: float,
    oracle: QuadratureOracle,
    regime: RegimeReport
) -> AsymptoticLaw:
    """Unbiased limit law of the kinetic average of L g for a general g (needs the overdamped gamma_hat -> 0)."""
    if regime.setting is not Setting.OVERDAMPED or regime.regime is not Regime.ZERO:
        raise RegimeError("general kinetic CLT is available only when Gamma2_n / sqrt(Gamma_n) -> 0")
    variance = asym_variance_underdamped(g, u, oracle)
    return AsymptoticLaw(NormalizerKind.SQRT_GAMMA, 0.0, variance, regime,
                         notes={'variance_integrand': "4u ||grad_v g||^2", 'oracle': oracle.to_dict()})


def confidence_interval(
    estimate: float,
    normalizer_value: float,
    law: AsymptoticLaw,
    level: float = 0.95
) -> Tuple[float, float]:
    """
    Bias-corrected interval for the integral of the centered test function.

    Args:
        estimate: Weighted average
        normalizer_value: Normalizer evaluated at the run's Gamma sums
        law: Asymptotic law
        level: Coverage level in [0, 1)

    Returns:
        (lower, upper)

    Raises:
        RegimeError: the limit is a constant, so no interval exists
    """
    if law.in_probability or law.regime.regime is Regime.INFINITE:
        raise RegimeError("biased regime: the average converges in probability, no interval")
    if not law.variance > 0.0:
        raise ParameterError("interval needs a positive limit variance")
    if not 0.0 <= level < 1.0:
        raise ParameterError(f"level must lie in [0, 1), got {level}")
    if not normalizer_value > 0.0:
        raise ParameterError(f"normalizer must be positive, got {normalizer_value}")

    z = float(special.ndtri(0.5 + level / 2.0))
    center = estimate - law.mean / normalizer_value
    half_width = z * math.sqrt(law.variance) / normalizer_value
    return center - half_width, center + half_width


class CheckpointObserver(AveragingObserver):
    """Averaging observer that also records (n, estimate, Gamma sums) at selected steps."""

    name = "average"

    def __init__(self, fn: Any, schedule: Schedule, checkpoints: Sequence[int]):
        super().__init__(fn)
        self.schedule = schedule
        self.checkpoints = set(int(n) for n in checkpoints)
        self.records: List[Dict[str, Any]] = []

    def observe(self, before: State, gamma: float, after: State) -> None:
        super().observe(before, gamma, after)
        if after.n in self.checkpoints:
            self.records.append({
                'n': after.n,
                'estimate': self.average.value,
                'gamma_sums': list(self.schedule.sums)
            })


@dataclass
class ReplicateJob:
    """Everything a worker needs to run one replicate (picklable)."""
    sampler: SamplerConfig
    potential: Potential
    schedule: Schedule
    test_function: Union[TestFunction, PhaseTestFunction]
    n_steps: int
    seed: int
    checkpoints: Tuple[int, ...] = ()


@dataclass
class ReplicateOutcome:
    """Result of one replicate."""
    replicate: int
    stream_id: int
    estimate: Optional[float]
    gamma_sums: List[float]
    checkpoints: List[Dict[str, Any]] = field(default_factory=list)
    diverged: bool = False
    divergence_step: Optional[int] = None


def run_replicate(job: ReplicateJob, replicate: int, stream_id: int) -> ReplicateOutcome:
    """Run one replicate on its own stream; divergence is recorded, not raised."""
    schedule = job.schedule.fresh()
    rng = RngStream(job.seed, stream_id)
    fn = centered_observable(job.sampler, job.potential, job.test_function)
    observer = CheckpointObserver(fn, schedule, job.checkpoints)
    try:
        run_chain(job.sampler, job.potential, schedule, job.n_steps, [observer], rng)
    except DivergenceError as e:
        return ReplicateOutcome(replicate, stream_id, None, list(schedule.sums), observer.records,
                                diverged=True, divergence_step=e.step)
    return ReplicateOutcome(replicate, stream_id, observer.average.value, list(schedule.sums), observer.records)


def _run_replicate_args(args: Tuple[ReplicateJob, int, int]) -> ReplicateOutcome:
    return run_replicate(*args)


@dataclass
class ReplicateReport:
    """Outcomes of a replicate batch and the standardized statistics of the converged ones."""
    outcomes: List[ReplicateOutcome]
    normalized: List[float]
    statistics: List[float]
    excluded: List[int]

    @property
    def replicates(self) -> int:
        return len(self.outcomes)


def replicate_harness(
    job: ReplicateJob,
    replicates: int,
    law: AsymptoticLaw,
    workers: int = 1,
    stream_ids: Optional[Sequence[int]] = None
) -> ReplicateReport:
    """
    Run independent replicates and standardize their averages.

    Replicate r uses stream id r unless `stream_ids` overrides the mapping.
    Results are ordered by replicate index regardless of completion order.

    Args:
        job: Replicate description
        replicates: Number of replicates, >= 2
        law: Law giving the normalizer and the centering mean
        workers: Worker processes; 1 runs serially
        stream_ids: Explicit stream id per replicate

    Returns:
        ReplicateReport with s_r = normalizer * estimate_r - law.mean
    """
    if replicates < 2:
        raise ParameterError(f"need at least two replicates, got {replicates}")
    ids = list(stream_ids) if stream_ids is not None else list(range(replicates))
    if len(ids) != replicates:
        raise ParameterError(f"{len(ids)} stream ids for {replicates} replicates")

    tasks = [(job, r, ids[r]) for r in range(replicates)]
    logger.info(f"Running {replicates} replicates of {job.n_steps} steps on {workers} worker(s)")
    if workers <= 1:
        outcomes = [_run_replicate_args(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(_run_replicate_args, tasks))

    normalized: List[float] = []
    statistics: List[float] = []
    excluded: List[int] = []
    for outcome in outcomes:
        if outcome.diverged:
            excluded.append(outcome.replicate)
            logger.warning(f"Replicate {outcome.replicate} (seed {job.seed}, stream {outcome.stream_id}) "
                           f"diverged at step {outcome.divergence_step}; excluded")
            continue
        value = law.normalizer.evaluate(outcome.gamma_sums) * outcome.estimate
        normalized.append(value)
        statistics.append(value - law.mean)
    if excluded:
        logger.warning(f"{len(excluded)} of {replicates} replicates excluded after divergence")
    return ReplicateReport(outcomes, normalized, statistics, excluded)


@dataclass
class NormalityReport:
    """Kolmogorov-Smirnov comparison of standardized statistics with N(0, 1)."""
    replicates: int
    ks_statistic: float
    critical_value: float
    passed: bool
    mean: float
    variance: float
    skewness: float
    message: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            'replicates': self.replicates,
            'ks_statistic': self.ks_statistic,
            'critical_value': self.critical_value,
            'passed': self.passed,
            'mean': self.mean,
            'variance': self.variance,
            'skewness': self.skewness,
            'message': self.message
        }


def normality_check(
    statistics: Sequence[float],
    target_variance: float,
    critical_coefficient: float = 1.36,
    min_replicates: int = 50
) -> NormalityReport:
    """
    KS distance of statistics / sqrt(target_variance) against the standard normal CDF.

    Passes when D <= critical_coefficient / sqrt(R); 1.36 is the 5% level and
    1.63 the 1% level. Reports sample mean, variance and skewness of the raw
    statistics. Never raises.
    """
    values = np.asarray(statistics, dtype=np.float64)
    R = int(values.size)
    if R < 2 or not target_variance > 0.0:
        return NormalityReport(R, 1.0, 0.0, False, float('nan'), float('nan'), float('nan'),
                               "need at least two statistics and a positive target variance")

    standardized = values / math.sqrt(target_variance)
    ks = float(stats.kstest(standardized, special.ndtr).statistic)
    critical = critical_coefficient / math.sqrt(R)
    variance = float(np.var(values, ddof=1))
    skewness = float(stats.skew(values)) if variance > 0.0 else 0.0
    passed = ks <= critical and variance > 0.0
    message = "" if R >= min_replicates else f"only {R} statistics; the KS critical value is asymptotic"
    return NormalityReport(R, ks, critical, passed, float(np.mean(values)), variance, skewness, message)


@dataclass
class CltReport:
    """Summary of a replicated CLT experiment."""
    law: AsymptoticLaw
    estimate: float
    interval: Optional[Tuple[float, float]]
    normality: Optional[NormalityReport]
    replicates: int
    excluded: List[int]
    seed: int
    stream_ids: List[int]
    level: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'regime': self.law.regime.label,
            'normalizer': self.law.normalizer.value,
            'mean': self.law.mean,
            'variance': self.law.variance,
            'law': self.law.to_dict(),
            'estimate': self.estimate,
            'interval': list(self.interval) if self.interval is not None else None,
            'level': self.level,
            'ks_statistic': self.normality.ks_statistic if self.normality else None,
            'normality': self.normality.to_dict() if self.normality else None,
            'replicates': self.replicates,
            'excluded': list(self.excluded),
            'seed': self.seed,
            'stream_ids': list(self.stream_ids)
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

"""Stationary bias: upper bounds, exact quadratic-target oracles, and empirical W2 estimates."""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike

from core.errors import DimensionError, ParameterError
from core.noise import RngStream
from core.pipeline import ChainObserver, MomentObserver, SamplerConfig, SamplerKind, TraceObserver, run_chain
from core.potential import Potential
from core.quadrature import QuadratureOracle, QuadratureRule
from core.schedule import Schedule
from utils.logging_setup import get_logger

logger = get_logger("bias")

RULMC_C1 = 82500.0
RULMC_C2 = 99000.0


@dataclass
class BiasBoundInput:
    """
    Constants entering the stationary bias bounds.

    Attributes:
        m: Strong-convexity constant
        M: Gradient-Lipschitz constant
        d: Dimension
        h: Constant step size
        C1: Numerator constant of the kinetic bound
        C2: Denominator constant of the kinetic bound
    """
    m: float
    M: float
    d: int
    h: float
    C1: float = RULMC_C1
    C2: float = RULMC_C2

    def __post_init__(self) -> None:
        if not (self.m > 0.0 and self.M >= self.m):
            raise ParameterError(f"need 0 < m <= M, got m={self.m}, M={self.M}")
        if self.d < 1:
            raise ParameterError(f"dimension must be >= 1, got {self.d}")
        if not self.h > 0.0:
            raise ParameterError(f"step size must be positive, got {self.h}")

    @property
    def kappa(self) -> float:
        return self.M / self.m

    @classmethod
    def from_potential(cls, p: Potential, h: float, **constants: float) -> "BiasBoundInput":
        return cls(p.m, p.M, p.d, h, **constants)


def rlmc_window_ok(b: BiasBoundInput) -> bool:
    """h in (0, 2/(m+M)) with a positive denominator."""
    return b.h < 2.0 / (b.m + b.M) and 1.0 / b.kappa - b.M * b.h / math.sqrt(3.0) > 0.0


def rlmc_bias_bound(b: BiasBoundInput) -> float:
    """
    W2 bias bound of the randomized-midpoint overdamped chain at constant step h:
    3 sqrt(d h) (1 + 2 M h)^2 / (1/kappa - M h / sqrt(3)).
    """
    if not b.h < 2.0 / (b.m + b.M):
        raise ParameterError(f"h = {b.h} outside (0, 2/(m+M)) = (0, {2.0 / (b.m + b.M):.6g})")
    denominator = 1.0 / b.kappa - b.M * b.h / math.sqrt(3.0)
    if denominator <= 0.0:
        raise ParameterError(f"h = {b.h} too large: 1/kappa - M h / sqrt(3) = {denominator:.6g} <= 0")
    return 3.0 * math.sqrt(b.d * b.h) * (1.0 + 2.0 * b.M * b.h) ** 2 / denominator


def rulmc_denominator(b: BiasBoundInput) -> float:
    kappa, h = b.kappa, b.h
    return 1.0 - h / (4.0 * kappa) - b.C2 * h ** 3 * kappa * (1.0 + kappa * h ** 3)


def rulmc_bias_bound(b: BiasBoundInput) -> float:
    """Square root of the kinetic W2^2 bound C1 h^3 (kappa h^3 + 1) d / (1 - h/(4 kappa) - C2 h^3 kappa (1 + kappa h^3))."""
    denominator = rulmc_denominator(b)
    if denominator <= 0.0:
        raise ParameterError(f"h = {b.h} too large: kinetic bound denominator {denominator:.6g} <= 0")
    kappa, h = b.kappa, b.h
    return math.sqrt(b.C1 * h ** 3 * (kappa * h ** 3 + 1.0) * b.d / denominator)


def rlmc_stationary_variance_quadratic(h: float) -> float:
    """
    Exact per-coordinate stationary variance of the randomized-midpoint chain on f = ||x||^2 / 2.

    The chain is x' = a(alpha) x + xi(alpha) with a = 1 - h + alpha h^2 and
    Var(xi | alpha) = 2h - 4 alpha h^2 + 2 alpha h^3, so the fixed point is
    E[Var xi] / (1 - E[a^2]).
    """
    if not h > 0.0:
        raise ParameterError(f"step size must be positive, got {h}")
    second_moment = (1.0 - h) ** 2 + (1.0 - h) * h ** 2 + h ** 4 / 3.0
    if second_moment >= 1.0:
        raise ParameterError(f"h = {h} is unstable: E[a^2] = {second_moment:.6g} >= 1")
    return (2.0 * h - 2.0 * h ** 2 + h ** 3) / (1.0 - second_moment)


def lmc_stationary_variance_quadratic(h: float) -> float:
    """Euler chain on f = ||x||^2 / 2: AR(1) fixed point 2h / (1 - (1 - h)^2)."""
    if not 0.0 < h < 2.0:
        raise ParameterError(f"Euler chain is unstable for h = {h}")
    return 2.0 * h / (1.0 - (1.0 - h) ** 2)


def w2_empirical_1d(samples_a: ArrayLike, samples_b: ArrayLike) -> float:
    """Exact W2 between two equal-size empirical measures on the line (sorted coupling)."""
    a = np.sort(np.asarray(samples_a, dtype=np.float64).reshape(-1))
    b = np.sort(np.asarray(samples_b, dtype=np.float64).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise ParameterError("W2 needs non-empty samples")
    if a.size != b.size:
        raise DimensionError(f"sample counts differ: {a.size} vs {b.size}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def w2_gaussian_diag(mu1: ArrayLike, sigma1: ArrayLike, mu2: ArrayLike, sigma2: ArrayLike) -> float:
    """W2 between N(mu1, diag(sigma1^2)) and N(mu2, diag(sigma2^2))."""
    arrays = [np.asarray(a, dtype=np.float64).reshape(-1) for a in (mu1, sigma1, mu2, sigma2)]
    if len({a.size for a in arrays}) != 1:
        raise DimensionError(f"dimension mismatch: {[a.size for a in arrays]}")
    m1, s1, m2, s2 = arrays
    if np.any(s1 <= 0.0) or np.any(s2 <= 0.0):
        raise ParameterError("standard deviations must be positive")
    return float(np.sqrt(np.sum((m1 - m2) ** 2) + np.sum((s1 - s2) ** 2)))


@dataclass
class StationarySample:
    """Thinned post-burn-in samples and moments of one constant-step chain."""
    sampler: str
    h: float
    samples: np.ndarray
    mean: np.ndarray
    variance: np.ndarray


def sample_stationary(
    cfg: SamplerConfig,
    p: Potential,
    h: float,
    n_steps: int,
    rng: RngStream,
    burn_in_fraction: float = 0.2,
    stride: int = 10
) -> StationarySample:
    """
    Run a constant-step chain and keep every `stride`-th state after the burn-in.

    Args:
        cfg: Sampler configuration
        p: Potential
        h: Constant step size
        n_steps: Total steps including burn-in
        rng: Stream for the chain
        burn_in_fraction: Leading fraction of steps discarded
        stride: Thinning stride

    Returns:
        StationarySample
    """
    if not 0.0 <= burn_in_fraction < 1.0:
        raise ParameterError(f"burn-in fraction must lie in [0, 1), got {burn_in_fraction}")
    burn_in = int(burn_in_fraction * n_steps)
    trace = TraceObserver(burn_in=burn_in, stride=stride)
    moments = MomentObserver(burn_in=burn_in)
    summary = run_chain(cfg, p, Schedule.constant(h), n_steps, [trace, moments], rng)
    logger.debug(f"{summary.sampler} h={h}: kept {trace.result()['count']} samples")
    return StationarySample(summary.sampler, h, trace.samples, moments.mean, moments.variance)


@dataclass
class BiasRow:
    """One row of a bias sweep."""
    h: float
    sampler: str
    seed: int
    replicate: int
    stream_id: int
    empirical_w2: float
    oracle_value: Optional[float]
    theory_bound: Optional[float]
    valid_window: bool
    w2_method: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            'h': self.h,
            'sampler': self.sampler,
            'seed': self.seed,
            'replicate': self.replicate,
            'stream_id': self.stream_id,
            'empirical_w2': self.empirical_w2,
            'oracle_value': self.oracle_value,
            'theory_bound': self.theory_bound,
            'valid_window': self.valid_window,
            'w2_method': self.w2_method
        }


BIAS_CSV_COLUMNS = ['h', 'sampler', 'seed', 'replicate', 'stream_id', 'empirical_w2', 'oracle_value', 'theory_bound', 'valid_window', 'w2_method']


def _bound_for(kind: SamplerKind, b: BiasBoundInput) -> Optional[float]:
    try:
        if kind is SamplerKind.RLMC:
            return rlmc_bias_bound(b)
        if kind is SamplerKind.RULMC:
            return rulmc_bias_bound(b)
    except ParameterError as e:
        logger.info(f"No bound for {kind.value} at h={b.h}: {e}")
    return None


def _oracle_for(kind: SamplerKind, p: Potential, h: float) -> Optional[float]:
    """Exact Gaussian W2 between pi_h and pi, when a closed-form stationary variance exists."""
    if not (p.is_quadratic and np.all(p.curvature == 1.0)):
        return None
    try:
        if kind is SamplerKind.RLMC:
            variance = rlmc_stationary_variance_quadratic(h)
        elif kind is SamplerKind.LMC:
            variance = lmc_stationary_variance_quadratic(h)
        else:
            return None
    except ParameterError:
        return None
    return math.sqrt(p.d) * abs(math.sqrt(variance) - 1.0)


def bias_sweep(
    p: Potential,
    kinds: Sequence[SamplerKind],
    h_grid: Sequence[float],
    n_steps: int,
    seed: int,
    seeds: int = 1,
    u: Optional[float] = None,
    burn_in_fraction: float = 0.2,
    stride: int = 10
) -> List[BiasRow]:
    """
    Empirical W2(pi, pi_h) against the closed-form oracle and the bound, per (sampler, h, seed).

    In one dimension W2 is the sorted coupling of the thinned chain against
    exact draws from pi; in higher dimension it is the diagonal-Gaussian
    closed form on the fitted moments against the moments of pi.
    """
    rows: List[BiasRow] = []
    reference = QuadratureOracle(p, QuadratureRule.MONTE_CARLO)
    bound_input_u = u if u is not None else 1.0 / p.M
    for kind in kinds:
        cfg = SamplerConfig(kind=kind, u=bound_input_u if kind.is_underdamped else None)
        for h in h_grid:
            b = BiasBoundInput.from_potential(p, h)
            bound = _bound_for(kind, b)
            window = rlmc_window_ok(b) if kind in (SamplerKind.RLMC, SamplerKind.LMC) else rulmc_denominator(b) > 0.0
            for k in range(seeds):
                # chain and reference draws get adjacent streams under the one master seed
                stream = 2 * len(rows)
                sample = sample_stationary(cfg, p, h, n_steps, RngStream(seed, stream), burn_in_fraction, stride)
                if p.d == 1:
                    exact = reference.sample_x(sample.samples.shape[0], RngStream(seed, stream + 1))
                    w2 = w2_empirical_1d(sample.samples[:, 0], exact[:, 0])
                    method = "sorted-1d"
                else:
                    target_sd = 1.0 / np.sqrt(p.curvature)
                    w2 = w2_gaussian_diag(sample.mean, np.sqrt(sample.variance), p.argmin, target_sd)
                    method = "gaussian-diag" if p.is_quadratic else "gaussian-diag-approx"
                rows.append(BiasRow(h, kind.value, seed, k, stream, w2, _oracle_for(kind, p, h), bound, window, method))
                logger.info(f"{kind.value} h={h:g} replicate={k} stream={stream}: W2={w2:.4g}, bound={bound}")
    return rows


class _CheckpointPositions(ChainObserver):
    """Observer recording the post-step position at selected step indices."""

    name = "checkpoints"

    def __init__(self, checkpoints: Sequence[int]):
        self.checkpoints = set(int(n) for n in checkpoints)
        self.positions: Dict[int, np.ndarray] = {}

    def observe(self, before: Any, gamma: float, after: Any) -> None:
        if after.n in self.checkpoints:
            self.positions[after.n] = after.x.copy()

    def result(self) -> Dict[str, Any]:
        return {'checkpoints': sorted(self.positions)}


@dataclass
class RateRow:
    """W2 between the law of x_n over replicates and pi, at one checkpoint."""
    n: int
    sampler: str
    w2: float
    reference: float
    replicates: int

    def to_dict(self) -> Dict[str, Any]:
        return {'n': self.n, 'sampler': self.sampler, 'w2': self.w2,
                'sqrt_d_over_m': self.reference, 'replicates': self.replicates}


RATE_CSV_COLUMNS = ['n', 'sampler', 'w2', 'sqrt_d_over_m', 'replicates']


def w2_rate(
    p: Potential,
    cfg: SamplerConfig,
    schedule: Schedule,
    checkpoints: Sequence[int],
    replicates: int,
    seed: int
) -> List[RateRow]:
    """
    Start `replicates` chains at the minimizer and measure W2(law of x_n, pi) at each checkpoint.

    The decreasing fast rules should drive W2 below eps * sqrt(d/m) after a
    number of steps polynomial in kappa / eps; rows report sqrt(d/m) as the
    reference scale.
    """
    if replicates < 2:
        raise ParameterError(f"need at least two replicates, got {replicates}")
    if not checkpoints:
        raise ParameterError("need at least one checkpoint")
    n_steps = max(int(n) for n in checkpoints)
    finals: Dict[int, List[np.ndarray]] = {int(n): [] for n in checkpoints}
    for r in range(replicates):
        observer = _CheckpointPositions(checkpoints)
        run_chain(cfg, p, schedule.fresh(), n_steps, [observer], RngStream(seed, r))
        for n, x in observer.positions.items():
            finals[n].append(x)

    reference = QuadratureOracle(p, QuadratureRule.MONTE_CARLO)
    scale = math.sqrt(p.d / p.m)
    rows: List[RateRow] = []
    for n in sorted(finals):
        positions = np.array(finals[n])
        if p.d == 1:
            exact = reference.sample_x(replicates, RngStream(seed, replicates + n))
            w2 = w2_empirical_1d(positions[:, 0], exact[:, 0])
        else:
            w2 = w2_gaussian_diag(positions.mean(axis=0), positions.std(axis=0, ddof=1),
                                  p.argmin, 1.0 / np.sqrt(p.curvature))
        rows.append(RateRow(n, cfg.kind.value, w2, scale, replicates))
        logger.info(f"{cfg.kind.value} n={n}: W2={w2:.4g} (sqrt(d/m)={scale:.4g})")
    return rows

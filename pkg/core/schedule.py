"""Step-size schedules, running power sums Gamma^(l), and CLT regime classification."""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from scipy import optimize

from core.errors import ParameterError
from core.potential import Potential
from utils.logging_setup import get_logger
from utils.validators import ValidationResult

logger = get_logger("schedule")


class ScheduleRule(Enum):
    """Registered step-size rules."""
    CONSTANT = "const"
    POLYNOMIAL = "poly"
    RLMC_FAST = "rlmc-fast"
    RULMC_FAST = "rulmc-fast"


class Setting(Enum):
    """Which diffusion the regime analysis refers to."""
    OVERDAMPED = "overdamped"
    UNDERDAMPED = "underdamped-special"


class Regime(Enum):
    """Limit of gamma_hat_n."""
    ZERO = "Zero"
    FINITE = "Finite"
    INFINITE = "Infinite"


class CompensatedSum:
    """Running sum with Neumaier compensation."""

    __slots__ = ("_sum", "_carry")

    def __init__(self) -> None:
        self._sum = 0.0
        self._carry = 0.0

    def add(self, value: float) -> None:
        total = self._sum + value
        if abs(self._sum) >= abs(value):
            self._carry += (self._sum - total) + value
        else:
            self._carry += (value - total) + self._sum
        self._sum = total

    @property
    def value(self) -> float:
        return self._sum + self._carry


@dataclass
class RegimeReport:
    """
    Outcome of a CLT regime classification.

    Attributes:
        setting: Overdamped or underdamped-special
        definition: Formula used for gamma_hat_n
        regime: Zero, Finite or Infinite
        limit: gamma_hat_infinity when Finite, else None
        rate_exponent: Exponent of n in the CLT normalizer
        numeric_gamma_hat: gamma_hat_n from accumulators, when available
    """
    setting: Setting
    definition: str
    regime: Regime
    limit: Optional[float] = None
    rate_exponent: float = 0.0
    numeric_gamma_hat: Optional[float] = None

    def __post_init__(self) -> None:
        if self.regime is Regime.FINITE and not (self.limit is not None and self.limit > 0):
            raise ParameterError("Finite regime requires a positive limit")

    @property
    def label(self) -> str:
        if self.regime is Regime.FINITE:
            return f"Finite({self.limit:.6f})"
        return self.regime.value

    def to_dict(self) -> Dict[str, Any]:
        return {
            'setting': self.setting.value,
            'definition': self.definition,
            'regime': self.regime.value,
            'limit': self.limit,
            'rate_exponent': self.rate_exponent,
            'numeric_gamma_hat': self.numeric_gamma_hat
        }


OVERDAMPED_DEFINITION = "Gamma2_n / sqrt(Gamma1_n)"
UNDERDAMPED_DEFINITION = "Gamma4_n / sqrt(Gamma3_n)"


def default_fast_lambda(m: float, M: float, K: float = 1.0) -> float:
    """
    Largest lambda with G(lambda) <= 0 for the fast overdamped rule.

    G(l) = (K - (m/10)(K+1)^2) l^2 + (X - (m/5) X (K+1)) l - (m/10) X^2, X = m + 34M,
    evaluated at K = n - K1 = 1. When the leading coefficient is not positive
    G has no largest admissible root and lambda = m is returned.
    """
    X = m + 34.0 * M
    a = K - (m / 10.0) * (K + 1.0) ** 2
    b = X - (m / 5.0) * X * (K + 1.0)
    c = -(m / 10.0) * X ** 2

    if a <= 0.0:
        logger.warning(f"Fast-rule polynomial has non-positive leading coefficient for m={m}; using lambda = m")
        return float(m)

    def G(lam: float) -> float:
        return a * lam * lam + b * lam + c

    upper = max(1.0, X)
    while G(upper) <= 0.0:
        upper *= 2.0
    return float(optimize.brentq(G, 0.0, upper, xtol=1e-14, rtol=1e-12))


@dataclass
class Schedule:
    """
    Step-size generator with Gamma^(1..4) accumulators.

    Rules (n = 1, 2, ... is the index of the emitted step):
        const      gamma_n = h
        poly       gamma_n = gamma0 n^{-alpha}
        rlmc-fast  gamma_n = 1 / (m + 34M + lambda (n - 1 - K1)^+)
        rulmc-fast gamma_n = 16 kappa / (32 kappa^{5/3} + (n - K1)^+)
    """
    rule: ScheduleRule
    params: Dict[str, float]
    n: int = 0
    _sums: Tuple[CompensatedSum, ...] = field(
        default_factory=lambda: tuple(CompensatedSum() for _ in range(4)), repr=False
    )

    def __post_init__(self) -> None:
        self._validate_params()

    @classmethod
    def constant(cls, h: float) -> "Schedule":
        return cls(ScheduleRule.CONSTANT, {'h': float(h)})

    @classmethod
    def polynomial(cls, alpha: float, gamma0: float = 1.0) -> "Schedule":
        return cls(ScheduleRule.POLYNOMIAL, {'alpha': float(alpha), 'gamma0': float(gamma0)})

    @classmethod
    def rlmc_fast(cls, m: float, M: float, lam: Optional[float] = None, K1: int = 0) -> "Schedule":
        if lam is None:
            lam = default_fast_lambda(m, M)
            logger.info(f"rlmc-fast lambda resolved to {lam:.6g}")
        return cls(ScheduleRule.RLMC_FAST, {'m': float(m), 'M': float(M), 'lambda': float(lam), 'K1': float(K1)})

    @classmethod
    def rulmc_fast(cls, kappa: float, K1: int = 0) -> "Schedule":
        return cls(ScheduleRule.RULMC_FAST, {'kappa': float(kappa), 'K1': float(K1)})

    def _validate_params(self) -> None:
        p = self.params
        if self.rule is ScheduleRule.CONSTANT:
            if not p.get('h', 0.0) > 0.0:
                raise ParameterError(f"constant step h must be positive, got {p.get('h')}")
        elif self.rule is ScheduleRule.POLYNOMIAL:
            if not 0.0 < p['alpha'] <= 1.0:
                raise ParameterError(f"polynomial exponent must lie in (0, 1], got {p['alpha']}")
            if not p['gamma0'] > 0.0:
                raise ParameterError(f"gamma0 must be positive, got {p['gamma0']}")
        elif self.rule is ScheduleRule.RLMC_FAST:
            if not (p['m'] > 0.0 and p['M'] >= p['m']):
                raise ParameterError(f"need 0 < m <= M, got m={p['m']}, M={p['M']}")
            if not p['lambda'] > 0.0:
                raise ParameterError(f"lambda must be positive, got {p['lambda']}")
            if p['K1'] < 0:
                raise ParameterError(f"K1 must be non-negative, got {p['K1']}")
        elif self.rule is ScheduleRule.RULMC_FAST:
            if not p['kappa'] >= 1.0:
                raise ParameterError(f"kappa must be >= 1, got {p['kappa']}")
            if p['K1'] < 0:
                raise ParameterError(f"K1 must be non-negative, got {p['K1']}")

    def gamma_at(self, n: int) -> float:
        """Step size gamma_n for n >= 1, without touching the accumulators."""
        if n < 1:
            raise ParameterError(f"step index starts at 1, got {n}")
        p = self.params
        if self.rule is ScheduleRule.CONSTANT:
            return p['h']
        if self.rule is ScheduleRule.POLYNOMIAL:
            return p['gamma0'] * float(n) ** (-p['alpha'])
        if self.rule is ScheduleRule.RLMC_FAST:
            lag = max(n - 1 - p['K1'], 0.0)
            return 1.0 / (p['m'] + 34.0 * p['M'] + p['lambda'] * lag)
        kappa = p['kappa']
        return 16.0 * kappa / (32.0 * kappa ** (5.0 / 3.0) + max(n - p['K1'], 0.0))

    def next_gamma(self) -> float:
        """Emit gamma_{n+1} and add its powers to the accumulators."""
        gamma = self.gamma_at(self.n + 1)
        power = gamma
        for acc in self._sums:
            acc.add(power)
            power *= gamma
        self.n += 1
        return gamma

    def gamma_sum(self, order: int = 1) -> float:
        """Gamma_n^(order) for order in 1..4."""
        if order not in (1, 2, 3, 4):
            raise ParameterError(f"accumulator order must be 1..4, got {order}")
        return self._sums[order - 1].value

    @property
    def sums(self) -> Tuple[float, float, float, float]:
        return tuple(acc.value for acc in self._sums)  # type: ignore[return-value]

    def fresh(self) -> "Schedule":
        """Same rule and parameters, accumulators reset."""
        return Schedule(self.rule, dict(self.params))

    def describe(self) -> str:
        def fmt(key: str) -> str:
            value = self.params[key]
            return f"{key}={int(value)}" if key == 'K1' else f"{key}={value:g}"
        return f"{self.rule.value}:" + ",".join(fmt(k) for k in self.params)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rule': self.rule.value,
            'params': dict(self.params),
            'n': self.n,
            'gamma_sums': list(self.sums)
        }


def classify_overdamped(alpha: float, gamma0: float = 1.0) -> RegimeReport:
    """
    Analytic regime for gamma_n = gamma0 n^{-alpha} in the overdamped setting.

    Gamma_n ~ n^{1-alpha}/(1-alpha) and Gamma2_n ~ n^{1-2 alpha}/(1-2 alpha), so
    gamma_hat_n behaves like n^{1/2 - 3 alpha/2}.
    """
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"polynomial exponent must lie in (0, 1], got {alpha}")
    third = 1.0 / 3.0
    if math.isclose(alpha, third, rel_tol=0.0, abs_tol=1e-12):
        limit = math.sqrt(6.0) * gamma0 ** 1.5
        return RegimeReport(Setting.OVERDAMPED, OVERDAMPED_DEFINITION, Regime.FINITE, limit, third)
    if alpha > third:
        return RegimeReport(Setting.OVERDAMPED, OVERDAMPED_DEFINITION, Regime.ZERO, None, (1.0 - alpha) / 2.0)
    # Gamma_n / Gamma2_n normalizes the convergence in probability
    return RegimeReport(Setting.OVERDAMPED, OVERDAMPED_DEFINITION, Regime.INFINITE, None, alpha)


def classify_underdamped(alpha: float, gamma0: float = 1.0) -> RegimeReport:
    """
    Analytic regime for gamma_n = gamma0 n^{-alpha} for the kinetic test-function class.

    Valid for alpha in (0, 1/4]. Zero and Finite regimes normalize by
    Gamma_n / sqrt(Gamma3_n) ~ n^{(1+alpha)/2}; the Infinite regime by
    Gamma_n / Gamma4_n ~ n^{3 alpha}.
    """
    if not 0.0 < alpha <= 0.25 + 1e-15:
        raise ParameterError(f"underdamped regime analysis needs alpha in (0, 1/4], got {alpha}")
    fifth = 0.2
    if math.isclose(alpha, fifth, rel_tol=0.0, abs_tol=1e-12):
        limit = math.sqrt(10.0) * gamma0 ** 2.5
        return RegimeReport(Setting.UNDERDAMPED, UNDERDAMPED_DEFINITION, Regime.FINITE, limit, (1.0 + alpha) / 2.0)
    if alpha > fifth:
        return RegimeReport(Setting.UNDERDAMPED, UNDERDAMPED_DEFINITION, Regime.ZERO, None, (1.0 + alpha) / 2.0)
    return RegimeReport(Setting.UNDERDAMPED, UNDERDAMPED_DEFINITION, Regime.INFINITE, None, 3.0 * alpha)


def empirical_gamma_hat(s: Schedule, setting: Setting) -> float:
    """gamma_hat_n from the accumulators of a schedule that has emitted n >= 1 steps."""
    if s.n < 1:
        raise ParameterError("gamma_hat needs at least one emitted step")
    g1, g2, g3, g4 = s.sums
    if setting is Setting.OVERDAMPED:
        return g2 / math.sqrt(g1)
    return g4 / math.sqrt(g3)


def classify_schedule(s: Schedule, setting: Setting) -> RegimeReport:
    """Regime of any registered rule, with the numeric gamma_hat attached when steps were emitted."""
    if s.rule is ScheduleRule.POLYNOMIAL:
        classify = classify_overdamped if setting is Setting.OVERDAMPED else classify_underdamped
        report = classify(s.params['alpha'], s.params['gamma0'])
    elif s.rule is ScheduleRule.CONSTANT:
        definition = OVERDAMPED_DEFINITION if setting is Setting.OVERDAMPED else UNDERDAMPED_DEFINITION
        report = RegimeReport(setting, definition, Regime.INFINITE, None, 0.0)
    else:
        # Fast rules decay like 1/n: Gamma_n ~ log n and all higher sums converge
        definition = OVERDAMPED_DEFINITION if setting is Setting.OVERDAMPED else UNDERDAMPED_DEFINITION
        report = RegimeReport(setting, definition, Regime.ZERO, None, 0.0)
    if s.n >= 1:
        report.numeric_gamma_hat = empirical_gamma_hat(s, setting)
    return report


def decreasing_step_bound(m: float, M: float) -> float:
    """Largest admissible step m / (m^2 + M^2 (33 + kappa)) for the decreasing overdamped rule."""
    kappa = M / m
    return m / (m * m + M * M * (33.0 + kappa))


def validate_schedule(
    s: Schedule,
    setting: Setting,
    potential: Optional[Potential] = None,
    check_steps: int = 1000
) -> List[ValidationResult]:
    """
    Advisory checks of a schedule's hypotheses. Never raises.

    Args:
        s: Schedule to check (its accumulators are not touched)
        setting: Overdamped or underdamped-special
        potential: Supplies m and M for the early-step bound
        check_steps: Number of leading steps inspected numerically

    Returns:
        List of ValidationResult, one per check
    """
    results: List[ValidationResult] = []
    rule = s.rule
    gammas = [s.gamma_at(k) for k in range(1, check_steps + 1)]

    increasing = [k + 1 for k in range(len(gammas) - 1) if gammas[k + 1] > gammas[k] * (1.0 + 1e-15)]
    if increasing:
        results.append(ValidationResult(False, f"step sizes increase at n={increasing[0]}",
                                        ["Use a non-increasing rule"]))
    else:
        results.append(ValidationResult(True, "step sizes are non-increasing"))

    if setting is Setting.UNDERDAMPED and rule is ScheduleRule.POLYNOMIAL and not 0.0 < s.params['alpha'] <= 0.25:
        results.append(ValidationResult(
            False,
            f"alpha={s.params['alpha']:g} lies outside (0, 1/4] for the kinetic CLT",
            ["Use poly:alpha in (0, 0.25]"]
        ))
    else:
        try:
            report = classify_schedule(s, setting)
            if report.regime is Regime.INFINITE:
                results.append(ValidationResult(
                    False,
                    "biased regime: gamma_hat_inf = inf",
                    ["Decrease the step sizes faster to obtain a CLT with finite bias"]
                ))
            else:
                results.append(ValidationResult(True, f"regime {report.label}"))
        except ParameterError as e:
            results.append(ValidationResult(False, str(e)))

    if setting is Setting.UNDERDAMPED:
        # (1/sqrt(Gamma_n)) sum gamma_k^{3/2} must diverge
        if rule is ScheduleRule.CONSTANT or (rule is ScheduleRule.POLYNOMIAL and s.params['alpha'] < 0.5):
            results.append(ValidationResult(True, "sum gamma^{3/2} / sqrt(Gamma_n) diverges"))
        else:
            results.append(ValidationResult(
                False,
                "sum gamma^{3/2} / sqrt(Gamma_n) stays bounded",
                ["Use poly with alpha < 1/2"]
            ))

    if potential is not None and setting is Setting.OVERDAMPED and rule is not ScheduleRule.CONSTANT:
        bound = decreasing_step_bound(potential.m, potential.M)
        early = gammas[:10]
        if max(early) <= bound * (1.0 + 1e-12):
            results.append(ValidationResult(True, f"early steps below {bound:.6g}"))
        else:
            results.append(ValidationResult(
                False,
                f"gamma_1 = {early[0]:.6g} exceeds the decreasing-step bound {bound:.6g}",
                [f"Use rlmc-fast:m={potential.m:g},M={potential.M:g}"]
            ))

    for result in results:
        if not result.is_valid:
            logger.warning(f"Schedule {s.describe()}: {result.message}")
    return results

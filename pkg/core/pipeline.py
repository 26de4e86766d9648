"""Chain runner: drives an engine along a schedule and streams states through observers."""

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from core.average import RunningAverage, generator_overdamped, generator_underdamped, update_average
from core.errors import DivergenceError, ParameterError
from core.noise import RngStream
from core.potential import PhaseTestFunction, Potential, TestFunction
from core.schedule import Schedule
from engines.overdamped import OverdampedEngine
from engines.state import OverdampedState, UnderdampedState
from engines.underdamped import UnderdampedEngine
from utils.logging_setup import get_logger
from utils.validators import ValidationResult

logger = get_logger("pipeline")

State = Union[OverdampedState, UnderdampedState]
Engine = Union[OverdampedEngine, UnderdampedEngine]


class SamplerKind(Enum):
    """Available samplers."""
    LMC = "lmc"
    RLMC = "rlmc"
    KLMC = "klmc"
    RULMC = "rulmc"

    @property
    def is_underdamped(self) -> bool:
        return self in (SamplerKind.KLMC, SamplerKind.RULMC)


class InitialPolicy(Enum):
    """How the first state is chosen."""
    ARGMIN = "argmin"
    EXPLICIT = "explicit"


@dataclass
class SamplerConfig:
    """
    Sampler selection and its parameters.

    Attributes:
        kind: Sampler kind
        u: Inverse mass for the underdamped samplers (None means 1/M)
        initial: Initial-state policy
        x0: Explicit initial position
        v0: Explicit initial velocity (underdamped only)
    """
    kind: SamplerKind = SamplerKind.RLMC
    u: Optional[float] = None
    initial: InitialPolicy = InitialPolicy.ARGMIN
    x0: Optional[List[float]] = None
    v0: Optional[List[float]] = None

    def __post_init__(self) -> None:
        if self.u is not None and not self.u > 0.0:
            raise ParameterError(f"inverse mass u must be positive, got {self.u}")
        if self.initial is InitialPolicy.EXPLICIT and self.x0 is None:
            raise ParameterError("explicit initial policy needs x0")

    def check_u_window(self, potential: Potential) -> ValidationResult:
        """Advisory check of u against the kinetic-CLT window (0, 4/(2M - m))."""
        if not self.kind.is_underdamped:
            return ValidationResult(True, "no inverse mass for overdamped samplers")
        u = self.u if self.u is not None else 1.0 / potential.M
        upper = 4.0 / (2.0 * potential.M - potential.m)
        if 0.0 < u < upper:
            return ValidationResult(True, f"u = {u:.6g} lies in (0, {upper:.6g})")
        return ValidationResult(False, f"u = {u:.6g} outside (0, {upper:.6g})", [f"Use u = 1/M = {1.0 / potential.M:.6g}"])

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'u': self.u,
            'initial': self.initial.value,
            'x0': self.x0,
            'v0': self.v0
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SamplerConfig":
        return cls(
            kind=SamplerKind(data.get('kind', 'rlmc')),
            u=data.get('u'),
            initial=InitialPolicy(data.get('initial', 'argmin')),
            x0=data.get('x0'),
            v0=data.get('v0')
        )


def build_engine(cfg: SamplerConfig, potential: Potential) -> Engine:
    """Create the engine instance for a sampler configuration."""
    if cfg.kind == SamplerKind.LMC:
        return OverdampedEngine(potential, randomized=False)
    elif cfg.kind == SamplerKind.RLMC:
        return OverdampedEngine(potential, randomized=True)
    elif cfg.kind == SamplerKind.KLMC:
        return UnderdampedEngine(potential, cfg.u, randomized=False)
    elif cfg.kind == SamplerKind.RULMC:
        return UnderdampedEngine(potential, cfg.u, randomized=True)
    else:
        raise ValueError(f"Unknown sampler kind: {cfg.kind}")


def initial_state(cfg: SamplerConfig, engine: Engine) -> State:
    if cfg.initial is InitialPolicy.ARGMIN:
        return engine.initial_state()
    if isinstance(engine, UnderdampedEngine):
        return engine.initial_state(cfg.x0, cfg.v0)
    return engine.initial_state(cfg.x0)


class ChainObserver:
    """Receives (pre-step state, step size, post-step state) triples."""

    name = "observer"

    def observe(self, before: State, gamma: float, after: State) -> None:
        raise NotImplementedError

    def result(self) -> Dict[str, Any]:
        raise NotImplementedError


class AveragingObserver(ChainObserver):
    """Accumulates fn(pre-step state) with weight gamma."""

    name = "average"

    def __init__(self, fn: Callable[[State], float]):
        self.fn = fn
        self.average = RunningAverage()

    def observe(self, before: State, gamma: float, after: State) -> None:
        value = self.fn(before)
        # A state can still be finite while the observable overflows
        if not np.isfinite(value):
            raise DivergenceError(f"Non-finite observation at step {before.n}", step=before.n)
        update_average(self.average, gamma, value)

    def result(self) -> Dict[str, Any]:
        return self.average.to_dict()


class TraceObserver(ChainObserver):
    """Keeps every `stride`-th post-step position after `burn_in` steps."""

    name = "trace"

    def __init__(self, burn_in: int = 0, stride: int = 1, keep_velocity: bool = False):
        if stride < 1 or burn_in < 0:
            raise ParameterError(f"need stride >= 1 and burn_in >= 0, got {stride}, {burn_in}")
        self.burn_in = burn_in
        self.stride = stride
        self.keep_velocity = keep_velocity
        self._x: List[np.ndarray] = []
        self._v: List[np.ndarray] = []

    def observe(self, before: State, gamma: float, after: State) -> None:
        k = after.n - self.burn_in
        if k > 0 and k % self.stride == 0:
            self._x.append(after.x.copy())
            if self.keep_velocity and isinstance(after, UnderdampedState):
                self._v.append(after.v.copy())

    @property
    def samples(self) -> np.ndarray:
        return np.array(self._x)

    @property
    def velocities(self) -> np.ndarray:
        return np.array(self._v)

    def result(self) -> Dict[str, Any]:
        return {'count': len(self._x), 'burn_in': self.burn_in, 'stride': self.stride}


class MomentObserver(ChainObserver):
    """Running per-coordinate mean and variance of post-step positions after burn-in (Welford)."""

    name = "moments"

    def __init__(self, burn_in: int = 0):
        self.burn_in = burn_in
        self.count = 0
        self._mean: Optional[np.ndarray] = None
        self._m2: Optional[np.ndarray] = None

    def observe(self, before: State, gamma: float, after: State) -> None:
        if after.n <= self.burn_in:
            return
        x = after.x
        if self._mean is None:
            self._mean = np.zeros_like(x)
            self._m2 = np.zeros_like(x)
        self.count += 1
        delta = x - self._mean
        self._mean += delta / self.count
        self._m2 += delta * (x - self._mean)

    @property
    def mean(self) -> np.ndarray:
        return self._mean if self._mean is not None else np.zeros(0)

    @property
    def variance(self) -> np.ndarray:
        if self._m2 is None or self.count < 2:
            return np.zeros(0)
        return self._m2 / (self.count - 1)

    def result(self) -> Dict[str, Any]:
        return {'count': self.count, 'mean': self.mean.tolist(), 'variance': self.variance.tolist()}


@dataclass
class ChainSummary:
    """Final state and observer outputs of one chain."""
    sampler: str
    schedule: str
    n_steps: int
    seed: int
    stream_id: int
    final_state: Dict[str, Any]
    observers: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    gamma_sums: List[float] = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'sampler': self.sampler,
            'schedule': self.schedule,
            'n_steps': self.n_steps,
            'seed': self.seed,
            'stream_id': self.stream_id,
            'final_state': self.final_state,
            'observers': self.observers,
            'gamma_sums': self.gamma_sums
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def run_chain(
    cfg: SamplerConfig,
    potential: Potential,
    sched: Schedule,
    n_steps: int,
    observers: Sequence[ChainObserver],
    rng: RngStream
) -> ChainSummary:
    """
    Run one chain for n_steps, streaming states through the observers.

    Args:
        cfg: Sampler configuration
        potential: Target potential
        sched: Schedule; advanced in place
        n_steps: Number of steps, >= 1
        observers: Observers fed after every step
        rng: Stream owned by this chain

    Returns:
        ChainSummary

    Raises:
        DivergenceError: with the offending step index and the stream seed
    """
    if n_steps < 1:
        raise ParameterError(f"n_steps must be >= 1, got {n_steps}")
    engine = build_engine(cfg, potential)
    state = initial_state(cfg, engine)
    logger.debug(f"Chain {engine.name} on {potential.describe()}, schedule {sched.describe()}, "
                 f"{n_steps} steps, {rng}")

    start = time.time()
    try:
        for _ in range(n_steps):
            gamma = sched.next_gamma()
            after = engine.step(state, gamma, rng)
            for observer in observers:
                observer.observe(state, gamma, after)
            state = after
    except DivergenceError as e:
        e.seed = rng.seed
        e.replicate = rng.stream_id
        logger.error(f"Chain diverged at step {e.step} (seed {rng.seed}, stream {rng.stream_id})")
        raise

    return ChainSummary(
        sampler=engine.name,
        schedule=sched.describe(),
        n_steps=n_steps,
        seed=rng.seed,
        stream_id=rng.stream_id,
        final_state=state.to_dict(),
        observers={observer.name: observer.result() for observer in observers},
        gamma_sums=list(sched.sums),
        wall_time=time.time() - start
    )


def centered_observable(
    cfg: SamplerConfig,
    potential: Potential,
    test_function: Union[TestFunction, PhaseTestFunction]
) -> Callable[[State], float]:
    """State -> A phi(x) (overdamped) or L g(x, v) (underdamped)."""
    if cfg.kind.is_underdamped:
        if not isinstance(test_function, PhaseTestFunction):
            raise ParameterError("underdamped samplers need a test function over (x, v)")
        u = cfg.u if cfg.u is not None else 1.0 / potential.M
        return lambda s: generator_underdamped(test_function, u, potential, s.x, s.v)
    if not isinstance(test_function, TestFunction):
        raise ParameterError("overdamped samplers need a test function over x")
    return lambda s: generator_overdamped(test_function, potential, s.x)


def raw_observable(test_function: Union[TestFunction, PhaseTestFunction]) -> Callable[[State], float]:
    """State -> phi(x) or g(x, v), for estimating the expectation itself."""
    if isinstance(test_function, PhaseTestFunction):
        return lambda s: test_function.value(s.x, s.v)
    return lambda s: test_function.value(s.x)


def estimate_expectation(
    cfg: SamplerConfig,
    potential: Potential,
    sched: Schedule,
    n_steps: int,
    test_function: Union[TestFunction, PhaseTestFunction],
    rng: RngStream,
    centered: bool = True,
    extra_observers: Sequence[ChainObserver] = ()
) -> RunningAverage:
    """
    Run a chain with the averaging observer attached.

    Args:
        cfg: Sampler configuration
        potential: Target potential
        sched: Schedule; advanced in place
        n_steps: Number of steps
        test_function: phi (overdamped) or g (underdamped)
        rng: Stream owned by this chain
        centered: Average the generator image A phi / L g when True, phi itself otherwise
        extra_observers: Further observers to attach

    Returns:
        Final RunningAverage
    """
    fn = centered_observable(cfg, potential, test_function) if centered else raw_observable(test_function)
    averaging = AveragingObserver(fn)
    run_chain(cfg, potential, sched, n_steps, [averaging, *extra_observers], rng)
    return averaging.average

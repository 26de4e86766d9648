"""Overdamped Langevin engines: Euler (LMC) and randomized midpoint (RLMC)."""

from typing import Any, Dict, Optional

import numpy as np
from numpy.typing import ArrayLike

from core.errors import DimensionError
from core.noise import RngStream, rlmc_gram, sample_block
from core.potential import Potential
from engines.state import OverdampedState, check_step, ensure_finite, forced_block
from utils.logging_setup import get_logger

logger = get_logger("overdamped")


def lmc_step(
    s: OverdampedState,
    gamma: float,
    p: Potential,
    rng: Optional[RngStream] = None,
    noise: Optional[ArrayLike] = None
) -> OverdampedState:
    """
    One Euler step x' = x - gamma grad f(x) + sqrt(2 gamma) Z.

    Args:
        s: Current state
        gamma: Step size
        p: Potential
        rng: Stream for Z; unused when `noise` is given
        noise: Forced standard-normal vector Z of shape (d,)

    Returns:
        Next state
    """
    check_step(gamma)
    z = forced_block(noise, (s.d,)) if noise is not None else rng.standard_normal(s.d)
    x_next = s.x - gamma * p.grad(s.x) + np.sqrt(2.0 * gamma) * z
    ensure_finite(s.n + 1, x_next)
    return OverdampedState(x_next, s.n + 1)


def rlmc_step(
    s: OverdampedState,
    gamma: float,
    p: Potential,
    rng: Optional[RngStream] = None,
    alpha: Optional[float] = None,
    noise: Optional[ArrayLike] = None
) -> OverdampedState:
    """
    One randomized-midpoint step.

    Draws alpha ~ U[0, 1] and the standardized pair (U', U) with correlation
    sqrt(alpha), then

        x_half = x - alpha gamma grad f(x) + sqrt(2 alpha gamma) U'
        x_next = x - gamma grad f(x_half) + sqrt(2 gamma) U

    Args:
        s: Current state
        gamma: Step size
        p: Potential
        rng: Stream for alpha and the noise pair
        alpha: Forced midpoint fraction
        noise: Forced pair as an array of shape (2, d), rows (U', U)

    Returns:
        Next state
    """
    check_step(gamma)
    if alpha is None:
        alpha = rng.uniform()
    if noise is not None:
        pair = forced_block(noise, (2, s.d))
    else:
        pair = sample_block(rlmc_gram(alpha), s.d, rng)

    x_half = s.x - alpha * gamma * p.grad(s.x) + np.sqrt(2.0 * alpha * gamma) * pair[0]
    x_next = s.x - gamma * p.grad(x_half) + np.sqrt(2.0 * gamma) * pair[1]
    ensure_finite(s.n + 1, x_half, x_next)
    return OverdampedState(x_next, s.n + 1)


class OverdampedEngine:
    """Bound (potential, kind) pair exposing a uniform `step` for the chain runner."""

    def __init__(self, potential: Potential, randomized: bool = True):
        """
        Initialize overdamped engine.

        Args:
            potential: Target potential f
            randomized: RLMC when True, LMC otherwise
        """
        self.potential = potential
        self.randomized = randomized

    @property
    def name(self) -> str:
        return "rlmc" if self.randomized else "lmc"

    def initial_state(self, x0: Optional[ArrayLike] = None) -> OverdampedState:
        """Start at x0, or at the minimizer of f when x0 is None."""
        if x0 is None:
            return OverdampedState(self.potential.argmin.copy(), 0)
        x0 = np.array(x0, dtype=np.float64).reshape(-1)
        if x0.size != self.potential.d:
            raise DimensionError(f"initial x has d={x0.size}, potential has d={self.potential.d}")
        return OverdampedState(x0, 0)

    def step(self, state: OverdampedState, gamma: float, rng: RngStream) -> OverdampedState:
        if self.randomized:
            return rlmc_step(state, gamma, self.potential, rng)
        return lmc_step(state, gamma, self.potential, rng)

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.name, 'potential': self.potential.describe()}

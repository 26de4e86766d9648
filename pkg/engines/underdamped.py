"""Underdamped (kinetic) Langevin engines with friction 2: KLMC and randomized midpoint RULMC."""

from typing import Any, Dict, Optional

import numpy as np
from numpy.typing import ArrayLike

from core.errors import DimensionError, ParameterError
from core.noise import RngStream, klmc_gram, rulmc_gram, sample_block
from core.potential import Potential
from engines.state import UnderdampedState, check_step, ensure_finite, forced_block
from utils.logging_setup import get_logger

logger = get_logger("underdamped")


def _check_u(u: float) -> None:
    if not u > 0.0 or not np.isfinite(u):
        raise ParameterError(f"inverse mass u must be positive, got {u}")


def klmc_step(
    s: UnderdampedState,
    gamma: float,
    u: float,
    p: Potential,
    rng: Optional[RngStream] = None,
    noise: Optional[ArrayLike] = None
) -> UnderdampedState:
    """
    One exponential-integrator step of the kinetic diffusion.

        x' = x + (1 - e^{-2g})/2 v - (u/2)(g - (1 - e^{-2g})/2) grad f(x) + sqrt(u) sigma1 U1
        v' = v e^{-2g} - u (1 - e^{-2g})/2 grad f(x) + 2 sqrt(u) sigma2 U2

    Args:
        s: Current state
        gamma: Step size g
        u: Inverse mass
        p: Potential
        rng: Stream for the noise pair
        noise: Forced (sigma1 U1, sigma2 U2) as an array of shape (2, d)

    Returns:
        Next state
    """
    check_step(gamma)
    _check_u(u)
    if noise is not None:
        block = forced_block(noise, (2, s.d))
    else:
        block = sample_block(klmc_gram(gamma), s.d, rng)

    decay = -np.expm1(-2.0 * gamma)  # 1 - e^{-2g}
    grad = p.grad(s.x)
    root_u = np.sqrt(u)
    x_next = s.x + 0.5 * decay * s.v - 0.5 * u * (gamma - 0.5 * decay) * grad + root_u * block[0]
    v_next = s.v * np.exp(-2.0 * gamma) - 0.5 * u * decay * grad + 2.0 * root_u * block[1]
    ensure_finite(s.n + 1, x_next, v_next)
    return UnderdampedState(x_next, v_next, s.n + 1)


def rulmc_step(
    s: UnderdampedState,
    gamma: float,
    u: float,
    p: Potential,
    rng: Optional[RngStream] = None,
    alpha: Optional[float] = None,
    noise: Optional[ArrayLike] = None
) -> UnderdampedState:
    """
    One randomized-midpoint step of the kinetic diffusion.

    With t = alpha g and alpha ~ U[0, 1]:

        x_half = x + (1 - e^{-2t})/2 v - (u/2)(t - (1 - e^{-2t})/2) grad f(x) + sqrt(u) sigma1 U1
        x'     = x + (1 - e^{-2g})/2 v - (u/2) g (1 - e^{-2(1-alpha) g}) grad f(x_half) + sqrt(u) sigma2 U2
        v'     = v e^{-2g} - u g e^{-2(1-alpha) g} grad f(x_half) + 2 sqrt(u) sigma3 U3

    Args:
        s: Current state
        gamma: Step size g
        u: Inverse mass
        p: Potential
        rng: Stream for alpha and the noise triple
        alpha: Forced midpoint fraction
        noise: Forced (sigma1 U1, sigma2 U2, sigma3 U3) as an array of shape (3, d)

    Returns:
        Next state
    """
    check_step(gamma)
    _check_u(u)
    if alpha is None:
        alpha = rng.uniform()
    if noise is not None:
        block = forced_block(noise, (3, s.d))
    else:
        block = sample_block(rulmc_gram(alpha, gamma), s.d, rng)

    t = alpha * gamma
    decay_half = -np.expm1(-2.0 * t)
    decay_full = -np.expm1(-2.0 * gamma)
    tail = np.exp(-2.0 * (1.0 - alpha) * gamma)
    root_u = np.sqrt(u)

    x_half = s.x + 0.5 * decay_half * s.v - 0.5 * u * (t - 0.5 * decay_half) * p.grad(s.x) + root_u * block[0]
    grad_half = p.grad(x_half)
    x_next = s.x + 0.5 * decay_full * s.v - 0.5 * u * gamma * (1.0 - tail) * grad_half + root_u * block[1]
    v_next = s.v * np.exp(-2.0 * gamma) - u * gamma * tail * grad_half + 2.0 * root_u * block[2]
    ensure_finite(s.n + 1, x_half, x_next, v_next)
    return UnderdampedState(x_next, v_next, s.n + 1)


class UnderdampedEngine:
    """Kinetic engine bound to a potential and inverse mass."""

    def __init__(self, potential: Potential, u: Optional[float] = None, randomized: bool = True):
        """
        Initialize underdamped engine.

        Args:
            potential: Target potential f
            u: Inverse mass; defaults to 1/M
            randomized: RULMC when True, KLMC otherwise
        """
        self.potential = potential
        self.randomized = randomized
        if u is None:
            u = 1.0 / potential.M
            logger.info(f"Inverse mass not set; using u = 1/M = {u:.6g}")
        _check_u(u)
        self.u = float(u)

    @property
    def name(self) -> str:
        return "rulmc" if self.randomized else "klmc"

    def initial_state(self, x0: Optional[ArrayLike] = None, v0: Optional[ArrayLike] = None) -> UnderdampedState:
        """Start at (x0, v0); missing parts default to the minimizer and zero velocity."""
        d = self.potential.d
        x = self.potential.argmin.copy() if x0 is None else np.array(x0, dtype=np.float64).reshape(-1)
        v = np.zeros(d) if v0 is None else np.array(v0, dtype=np.float64).reshape(-1)
        if x.size != d or v.size != d:
            raise DimensionError(f"initial state must have d={d}, got x:{x.size} v:{v.size}")
        return UnderdampedState(x, v, 0)

    def step(self, state: UnderdampedState, gamma: float, rng: RngStream) -> UnderdampedState:
        if self.randomized:
            return rulmc_step(state, gamma, self.u, self.potential, rng)
        return klmc_step(state, gamma, self.u, self.potential, rng)

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.name, 'potential': self.potential.describe(), 'u': self.u}

"""Step-weighted empirical averages and the diffusion generators that produce centered test functions."""

from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np
from numpy.typing import ArrayLike

from core.errors import DimensionError, ParameterError
from core.potential import PhaseTestFunction, Potential, TestFunction
from core.schedule import CompensatedSum


@dataclass
class RunningAverage:
    """
    Weighted mean pi_n(phi) = sum gamma_k c_k / Gamma_n maintained recursively.

    The recursion pi_{n+1} = pi_n + (gamma_{n+1}/Gamma_{n+1}) (c - pi_n) is
    applied to the mean, while the weighted sum is kept in a compensated
    accumulator and used to correct drift every `resync` updates.
    """
    value: float = 0.0
    n: int = 0
    _gamma_sum: CompensatedSum = field(default_factory=CompensatedSum, repr=False)
    _weighted: CompensatedSum = field(default_factory=CompensatedSum, repr=False)
    resync: int = 1024

    @property
    def gamma_sum(self) -> float:
        return self._gamma_sum.value

    def to_dict(self) -> Dict[str, Any]:
        return {'estimate': self.value, 'gamma_sum': self.gamma_sum, 'n': self.n}


def update_average(a: RunningAverage, gamma_next: float, value: float) -> RunningAverage:
    """
    Fold one weighted observation into the average (in place).

    Args:
        a: Average to update
        gamma_next: Weight gamma_{n+1} > 0
        value: phi evaluated at the pre-step state x_n

    Returns:
        The same RunningAverage
    """
    if not gamma_next > 0.0:
        raise ParameterError(f"weight must be positive, got {gamma_next}")
    if not np.isfinite(value):
        raise ParameterError(f"non-finite observation {value}")

    a._gamma_sum.add(gamma_next)
    a._weighted.add(gamma_next * value)
    a.n += 1
    a.value += (gamma_next / a._gamma_sum.value) * (value - a.value)
    if a.n % a.resync == 0:
        a.value = a._weighted.value / a._gamma_sum.value
    return a


def generator_overdamped(phi: TestFunction, p: Potential, x: ArrayLike) -> float:
    """A phi(x) = -<grad f(x), grad phi(x)> + Laplacian phi(x)."""
    if phi.d != p.d:
        raise DimensionError(f"test function has d={phi.d}, potential has d={p.d}")
    return float(-np.dot(p.grad(x), phi.grad(x)) + phi.laplacian(x))


def generator_underdamped(g: PhaseTestFunction, u: float, p: Potential, x: ArrayLike, v: ArrayLike) -> float:
    """L g(x, v) = 2u Laplacian_v g - 2 <v, grad_v g> - u <grad f(x), grad_v g> + <v, grad_x g>."""
    if g.d != p.d:
        raise DimensionError(f"test function has d={g.d}, potential has d={p.d}")
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    grad_v = g.grad_v(v)
    return float(
        2.0 * u * g.laplacian_v()
        - 2.0 * np.dot(v, grad_v)
        - u * np.dot(p.grad(x), grad_v)
        + np.dot(v, g.grad_x(x))
    )

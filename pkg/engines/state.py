"""Chain states shared by the overdamped and underdamped engines."""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from core.errors import DimensionError, DivergenceError, ParameterError

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class OverdampedState:
    """Position iterate x_n after n steps."""
    x: FloatArray
    n: int = 0

    @property
    def d(self) -> int:
        return int(self.x.size)

    def to_dict(self) -> Dict[str, Any]:
        return {'x': self.x.tolist(), 'n': self.n}


@dataclass(frozen=True)
class UnderdampedState:
    """Position/velocity iterate (x_n, v_n) after n steps."""
    x: FloatArray
    v: FloatArray
    n: int = 0

    def __post_init__(self) -> None:
        if self.x.shape != self.v.shape:
            raise DimensionError(f"x has shape {self.x.shape}, v has shape {self.v.shape}")

    @property
    def d(self) -> int:
        return int(self.x.size)

    def to_dict(self) -> Dict[str, Any]:
        return {'x': self.x.tolist(), 'v': self.v.tolist(), 'n': self.n}


def ensure_finite(step: int, *arrays: FloatArray, seed: Optional[int] = None) -> None:
    """Raise DivergenceError if any array holds NaN or Inf."""
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise DivergenceError(f"Non-finite state at step {step}", step=step, seed=seed)


def forced_block(noise: Any, shape: Tuple[int, ...]) -> FloatArray:
    """Reshape a caller-supplied noise block, checking its size."""
    block = np.asarray(noise, dtype=np.float64)
    if block.size != int(np.prod(shape)):
        raise DimensionError(f"forced noise must have {int(np.prod(shape))} entries, got {block.size}")
    return block.reshape(shape)


def check_step(gamma: float) -> None:
    if not gamma > 0.0 or not np.isfinite(gamma):
        raise ParameterError(f"step size must be positive, got {gamma}")

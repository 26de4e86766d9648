"""Exception types raised by the simulation and analysis layers."""

from typing import Optional


class LangevinError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(LangevinError, ValueError):
    """Vector or matrix dimensions do not agree."""


class ParameterError(LangevinError, ValueError):
    """A numeric parameter lies outside its admissible range."""


class FactorizationError(LangevinError, ValueError):
    """A covariance matrix is materially indefinite."""


class RegimeError(LangevinError, ValueError):
    """A CLT quantity was requested in a regime where it does not exist."""


class DivergenceError(LangevinError, RuntimeError):
    """A chain produced a non-finite state."""

    def __init__(
        self,
        message: str,
        step: int,
        seed: Optional[int] = None,
        replicate: Optional[int] = None
    ):
        super().__init__(message)
        self.step = step
        self.seed = seed
        self.replicate = replicate


class ConfigError(LangevinError, ValueError):
    """An experiment configuration could not be parsed or validated."""

    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        field: Optional[str] = None
    ):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.field = field


class ResolutionError(LangevinError, ValueError):
    """A quadrature rule cannot integrate the requested polynomial degree exactly."""

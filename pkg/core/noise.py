"""Correlated Gaussian noise blocks for the randomized-midpoint and kinetic samplers.

The Gram matrices here are per-coordinate covariances; the d coordinates of a
block are independent copies. For the underdamped samplers (friction fixed at
2) the entries are Brownian-kernel integrals over one step:

    sigma1 U1 = int_0^{a g} (1 - e^{-2(a g - s)}) dW_s     (RULMC midpoint position)
    sigma2 U2 = int_0^{g}   (1 - e^{-2(g - s)})   dW_s     (end-of-step position)
    sigma3 U3 = int_0^{g}   e^{-2(g - s)}         dW_s     (end-of-step velocity)

`kernel_oracle_gram` evaluates the same integrals by adaptive quadrature.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np
from numpy.typing import NDArray
from scipy import integrate

from core.errors import FactorizationError, ParameterError
from utils.logging_setup import get_logger

logger = get_logger("noise")

FloatArray = NDArray[np.float64]

# Eigenvalues in [-EIG_CLAMP, 0] are rounding noise of a rank-deficient Gram
EIG_CLAMP = 1e-12


class NoiseKind(Enum):
    """Sampler families that own a noise block."""
    RLMC = "rlmc"
    RULMC = "rulmc"
    KLMC = "klmc"


class RngStream:
    """
    Reproducible random stream on the counter-based Philox generator.

    Identical (seed, stream_id) pairs give identical draws on any host or
    thread; distinct stream ids give independent streams through the
    SeedSequence spawn key.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ParameterError(f"seed and stream id must be non-negative, got ({seed}, {stream_id})")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seed_seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._bit_generator = np.random.Philox(seed_seq)
        self.generator = np.random.Generator(self._bit_generator)

    @property
    def counter(self) -> int:
        """Current Philox block counter."""
        state = self._bit_generator.state["state"]["counter"]
        return int(sum(int(word) << (64 * i) for i, word in enumerate(state)))

    def uniform(self) -> float:
        return float(self.generator.random())

    def standard_normal(self, size: Any = None) -> Any:
        return self.generator.standard_normal(size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class NoiseGram:
    """
    Per-coordinate covariance of one step's Gaussian noise block.

    Attributes:
        kind: Sampler the block belongs to
        entries: Symmetric PSD matrix of order 2 or 3
        alpha: Midpoint fraction the block was built for (None for KLMC)
        gamma: Step size the block was built for (None for the RLMC pair)
    """
    kind: NoiseKind
    entries: FloatArray
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    _factor: FloatArray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        entries = np.array(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.shape[0] not in (2, 3):
            raise ParameterError(f"Noise Gram must be 2x2 or 3x3, got shape {entries.shape}")
        entries = 0.5 * (entries + entries.T)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "_factor", _psd_factor(entries))

    @property
    def order(self) -> int:
        return int(self.entries.shape[0])

    @property
    def factor(self) -> FloatArray:
        """L with L L^T equal to the (clamped) Gram; lower-triangular when the Gram is positive definite."""
        return self._factor

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'entries': self.entries.tolist(),
            'alpha': self.alpha,
            'gamma': self.gamma
        }


def _psd_factor(gram: FloatArray, tol: float = EIG_CLAMP) -> FloatArray:
    """
    Factor L with L L^T equal to a PSD matrix.

    Positive-definite Grams get their Cholesky factor. Rank-deficient ones fall
    back to V sqrt(w) from the eigendecomposition, with eigenvalues in
    [-tol, 0] clamped to zero.

    Raises:
        FactorizationError: if an eigenvalue is below -tol (materially indefinite)
    """
    eigenvalues, eigenvectors = np.linalg.eigh(gram)
    if eigenvalues[0] < -tol:
        raise FactorizationError(f"Gram matrix is indefinite (eigenvalue {eigenvalues[0]:.3e})")
    if eigenvalues[0] > tol:
        try:
            return np.linalg.cholesky(gram)
        except np.linalg.LinAlgError:
            logger.debug("Cholesky failed on a near-singular Gram, using the eigen-factor")
    return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")


def _check_gamma(gamma: float) -> None:
    if not gamma > 0.0 or not np.isfinite(gamma):
        raise ParameterError(f"gamma must be positive, got {gamma}")


def _position_variance(t: float) -> float:
    """int_0^t (1 - e^{-2s})^2 ds = t + (1 - e^{-4t})/4 - (1 - e^{-2t})."""
    return t - np.expm1(-4.0 * t) / 4.0 + np.expm1(-2.0 * t)


def _velocity_variance(t: float) -> float:
    """int_0^t e^{-4s} ds = (1 - e^{-4t})/4."""
    return -np.expm1(-4.0 * t) / 4.0


def _position_velocity_covariance(t: float) -> float:
    """int_0^t (1 - e^{-2s}) e^{-2s} ds = (1 - e^{-2t})^2 / 4."""
    return np.expm1(-2.0 * t) ** 2 / 4.0


def rlmc_gram(alpha: float) -> NoiseGram:
    """
    Covariance of the standardized RLMC pair (U', U).

    Args:
        alpha: Midpoint fraction in [0, 1]

    Returns:
        Order-2 Gram [[1, sqrt(alpha)], [sqrt(alpha), 1]]
    """
    _check_alpha(alpha)
    r = np.sqrt(alpha)
    return NoiseGram(NoiseKind.RLMC, np.array([[1.0, r], [r, 1.0]]), alpha=alpha)


def rulmc_gram(alpha: float, gamma: float) -> NoiseGram:
    """
    Gram of (sigma1 U1, sigma2 U2, sigma3 U3) for one RULMC step.

    Args:
        alpha: Midpoint fraction in [0, 1]
        gamma: Step size, > 0

    Returns:
        Order-3 NoiseGram
    """
    _check_alpha(alpha)
    _check_gamma(gamma)
    t = alpha * gamma
    sinh_t = np.sinh(t)
    decay = np.exp(-2.0 * gamma)

    g11 = _position_variance(t)
    g22 = _position_variance(gamma)
    g33 = _velocity_variance(gamma)
    g12 = t - (np.exp(-t) + decay * sinh_t) * sinh_t
    g23 = decay * np.sinh(gamma) ** 2
    g13 = decay * sinh_t ** 2

    entries = np.array([
        [g11, g12, g13],
        [g12, g22, g23],
        [g13, g23, g33],
    ])
    gram = NoiseGram(NoiseKind.RULMC, entries, alpha=alpha, gamma=gamma)
    logger.debug(f"RULMC Gram alpha={alpha:.4f} gamma={gamma:.4g}: min eig {gram.min_eigenvalue():.3e}")
    return gram


def klmc_gram(gamma: float) -> NoiseGram:
    """
    Gram of (sigma1 U1, sigma2 U2) for one KLMC step.

    Args:
        gamma: Step size, > 0

    Returns:
        Order-2 NoiseGram
    """
    _check_gamma(gamma)
    g11 = _position_variance(gamma)
    g22 = _velocity_variance(gamma)
    g12 = _position_velocity_covariance(gamma)
    return NoiseGram(NoiseKind.KLMC, np.array([[g11, g12], [g12, g22]]), gamma=gamma)


def kernel_oracle_gram(kind: NoiseKind, gamma: float, alpha: float = 1.0,
                       tol: float = 1e-13) -> FloatArray:
    """
    Evaluate the underdamped Gram entries as Brownian-kernel integrals.

    Args:
        kind: NoiseKind.RULMC or NoiseKind.KLMC
        gamma: Step size
        alpha: Midpoint fraction (RULMC only)
        tol: Absolute tolerance handed to the adaptive quadrature

    Returns:
        Gram matrix computed by scipy.integrate.quad
    """
    _check_gamma(gamma)
    _check_alpha(alpha)
    t = alpha * gamma

    def midpoint_kernel(s: float) -> float:
        return 1.0 - np.exp(-2.0 * (t - s)) if s <= t else 0.0

    def position_kernel(s: float) -> float:
        return 1.0 - np.exp(-2.0 * (gamma - s))

    def velocity_kernel(s: float) -> float:
        return np.exp(-2.0 * (gamma - s))

    def quad(fn: Any, upper: float) -> float:
        if upper <= 0.0:
            return 0.0
        value, _ = integrate.quad(fn, 0.0, upper, epsabs=tol, epsrel=1e-12, limit=200)
        return float(value)

    if kind is NoiseKind.KLMC:
        kernels = (position_kernel, velocity_kernel)
        uppers = (gamma, gamma)
    elif kind is NoiseKind.RULMC:
        kernels = (midpoint_kernel, position_kernel, velocity_kernel)
        uppers = (t, gamma, gamma)
    else:
        raise ParameterError(f"No kernel oracle for noise kind {kind.value}")

    n = len(kernels)
    gram = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            upper = min(uppers[i], uppers[j])
            gram[i, j] = gram[j, i] = quad(lambda s, a=kernels[i], b=kernels[j]: a(s) * b(s), upper)
    return gram


def sample_block(gram: NoiseGram, d: int, rng: RngStream) -> FloatArray:
    """
    Draw one noise block with per-coordinate covariance `gram`.

    Args:
        gram: Noise Gram of order k
        d: Dimension of each vector
        rng: Stream to draw from

    Returns:
        Array of shape (k, d); row i is the i-th noise vector
    """
    z = rng.standard_normal((gram.order, d))
    return gram.factor @ z

"""Expectations under the target pi and the kinetic measure nu = pi x N(0, u I)."""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from core.errors import ParameterError, ResolutionError
from core.noise import RngStream
from core.potential import Potential
from utils.logging_setup import get_logger

logger = get_logger("quadrature")

# Batched integrand: (N, d) points -> (N,) values
PointFn = Callable[[np.ndarray], np.ndarray]
PhaseFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

MAX_GRID_POINTS = 2_000_000


class QuadratureRule(Enum):
    """Integration rules."""
    GAUSS_HERMITE = "gauss-hermite"
    MONTE_CARLO = "monte-carlo"


@dataclass
class QuadratureOracle:
    """
    Integrates batched functions against pi (and nu).

    For quadratic potentials pi is the Gaussian N(0, diag(1/c)) and the
    Gauss-Hermite tensor grid is exact for polynomials up to degree
    2 * nodes - 1 per coordinate. For the log-cosh family each marginal
    density is exp(-c x^2/2) cosh(x)^{-eps}; the Gaussian nodes are reused with
    weights multiplied by cosh^{-eps} and renormalized, which converges
    spectrally but is no longer exact.

    The Monte Carlo rule draws exact samples: Gaussian draws, with
    accept/reject against cosh(x)^{-eps} <= 1 for the log-cosh family.

    Attributes:
        potential: Target potential
        rule: Integration rule
        nodes: Gauss-Hermite nodes per axis
        samples: Monte Carlo sample count
        seed: Monte Carlo seed
    """
    potential: Potential
    rule: QuadratureRule = QuadratureRule.GAUSS_HERMITE
    nodes: int = 20
    samples: int = 200_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.nodes < 1:
            raise ParameterError(f"need at least one node, got {self.nodes}")
        if self.samples < 2:
            raise ParameterError(f"need at least two samples, got {self.samples}")

    @property
    def exact_degree(self) -> Optional[int]:
        """Largest per-coordinate polynomial degree integrated exactly, None if not exact."""
        if self.rule is QuadratureRule.GAUSS_HERMITE and self.potential.is_quadratic:
            return 2 * self.nodes - 1
        return None

    def check_degree(self, degree: int) -> None:
        """Raise ResolutionError if a polynomial integrand of this degree is not integrated exactly."""
        exact = self.exact_degree
        if exact is not None and degree > exact:
            raise ResolutionError(
                f"{self.nodes} Gauss-Hermite nodes integrate degree <= {exact}, integrand has degree {degree}"
            )

    def _marginal_rule(self, scale: float, eps: float) -> Tuple[np.ndarray, np.ndarray]:
        z, w = hermegauss(self.nodes)
        x = scale * z
        w = w / math.sqrt(2.0 * math.pi)
        if eps:
            w = w * np.cosh(x) ** (-eps)
            w = w / w.sum()
        return x, w

    def _tensor_grid(self, scales: np.ndarray, x_axes: int) -> Tuple[np.ndarray, np.ndarray]:
        n_axes = scales.size
        if self.nodes ** n_axes > MAX_GRID_POINTS:
            raise ResolutionError(
                f"tensor grid of {self.nodes}^{n_axes} points is too large; use the Monte Carlo rule"
            )
        rules = [self._marginal_rule(scales[i], self.potential.eps if i < x_axes else 0.0) for i in range(n_axes)]
        mesh = np.meshgrid(*[r[0] for r in rules], indexing="ij")
        weights = np.meshgrid(*[r[1] for r in rules], indexing="ij")
        points = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        weight = np.prod(np.stack([w.reshape(-1) for w in weights], axis=-1), axis=-1)
        return points, weight

    def sample_x(self, n: int, rng: RngStream) -> np.ndarray:
        """Exact draws from pi, shape (n, d)."""
        sigma = 1.0 / np.sqrt(self.potential.curvature)
        if not self.potential.eps:
            return rng.standard_normal((n, self.potential.d)) * sigma
        out = np.empty((n, self.potential.d))
        for i in range(self.potential.d):
            filled = 0
            while filled < n:
                proposal = rng.standard_normal(2 * (n - filled) + 16) * sigma[i]
                accept = rng.generator.random(proposal.size) < np.cosh(proposal) ** (-self.potential.eps)
                kept = proposal[accept][: n - filled]
                out[filled:filled + kept.size, i] = kept
                filled += kept.size
        return out

    def expect_x(self, fn: PointFn, degree: Optional[int] = None) -> float:
        """E_pi[fn(x)]."""
        return self.expect_x_with_error(fn, degree)[0]

    def expect_x_with_error(self, fn: PointFn, degree: Optional[int] = None) -> Tuple[float, float]:
        """E_pi[fn(x)] and its standard error (zero for quadrature)."""
        if degree is not None:
            self.check_degree(degree)
        d = self.potential.d
        if self.rule is QuadratureRule.GAUSS_HERMITE:
            scales = 1.0 / np.sqrt(self.potential.curvature)
            points, weight = self._tensor_grid(scales, d)
            return float(np.dot(weight, fn(points))), 0.0
        rng = RngStream(self.seed, 0)
        values = fn(self.sample_x(self.samples, rng))
        return float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(values.size))

    def expect_xv(self, fn: PhaseFn, u: float, degree: Optional[int] = None) -> float:
        """E_nu[fn(x, v)] with v ~ N(0, u I) independent of x."""
        return self.expect_xv_with_error(fn, u, degree)[0]

    def expect_xv_with_error(self, fn: PhaseFn, u: float, degree: Optional[int] = None) -> Tuple[float, float]:
        if not u > 0.0:
            raise ParameterError(f"inverse mass u must be positive, got {u}")
        if degree is not None:
            self.check_degree(degree)
        d = self.potential.d
        if self.rule is QuadratureRule.GAUSS_HERMITE:
            scales = np.concatenate([1.0 / np.sqrt(self.potential.curvature), np.full(d, math.sqrt(u))])
            points, weight = self._tensor_grid(scales, d)
            return float(np.dot(weight, fn(points[:, :d], points[:, d:]))), 0.0
        rng = RngStream(self.seed, 1)
        x = self.sample_x(self.samples, rng)
        v = rng.standard_normal((self.samples, d)) * math.sqrt(u)
        values = fn(x, v)
        return float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(values.size))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rule': self.rule.value,
            'nodes': self.nodes if self.rule is QuadratureRule.GAUSS_HERMITE else None,
            'samples': self.samples if self.rule is QuadratureRule.MONTE_CARLO else None,
            'target': self.potential.describe()
        }

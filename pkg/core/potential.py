"""Registered analytic potentials and polynomial test functions.

Every family here is separable across coordinates, so all derivative tensors
up to order four are diagonal and exact. The CLT bias constants need trusted
third and fourth derivatives, which is why arbitrary closures are not accepted.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import DimensionError, ParameterError
from utils.logging_setup import get_logger
from utils.validators import ValidationResult

logger = get_logger("potential")

FloatArray = NDArray[np.float64]

# Central finite-difference step for consistency checks
FD_STEP = 1e-5


class PotentialFamily(Enum):
    """Registered potential families."""
    ISOTROPIC_QUADRATIC = "iso"
    DIAGONAL_QUADRATIC = "diag"
    QUADRATIC_PLUS_LOGCOSH = "logcosh"


def _as_vector(x: ArrayLike, d: int, name: str = "x") -> FloatArray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape != (d,):
        raise DimensionError(f"{name} has shape {arr.shape}, expected ({d},)")
    return arr


def _as_points(x: ArrayLike, d: int, name: str = "x") -> FloatArray:
    """Accept a single point of shape (d,) or a batch of shape (N, d)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1:] != (d,) or arr.ndim > 2:
        raise DimensionError(f"{name} has shape {arr.shape}, expected (d,) or (N, d) with d={d}")
    return arr


def _log_cosh(x: FloatArray) -> FloatArray:
    # log cosh(x) = |x| + log1p(exp(-2|x|)) - log 2, stable for large |x|
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


@dataclass(frozen=True)
class Potential:
    """
    Strongly convex potential f with gradient-Lipschitz constant M.

    Attributes:
        family: Registered family tag
        curvature: Per-coordinate curvature of the quadratic part
        eps: Amplitude of the log-cosh perturbation (0 for quadratic families)
    """
    family: PotentialFamily
    curvature: FloatArray
    eps: float = 0.0

    def __post_init__(self) -> None:
        curvature = np.array(self.curvature, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "curvature", curvature)
        curvature.setflags(write=False)
        if curvature.size == 0:
            raise ParameterError("Potential needs a positive dimension")
        if not np.all(np.isfinite(curvature)) or np.any(curvature <= 0):
            raise ParameterError(f"Curvatures must be positive and finite, got {curvature}")
        if self.eps < 0:
            raise ParameterError(f"Log-cosh amplitude must be >= 0, got {self.eps}")
        if self.family is not PotentialFamily.QUADRATIC_PLUS_LOGCOSH and self.eps != 0.0:
            raise ParameterError(f"Family {self.family.value} takes no log-cosh amplitude")

    @classmethod
    def isotropic(cls, d: int = 1, c: float = 1.0) -> "Potential":
        """f(x) = c/2 ||x||^2."""
        return cls(PotentialFamily.ISOTROPIC_QUADRATIC, np.full(d, float(c)))

    @classmethod
    def diagonal(cls, curvatures: Sequence[float]) -> "Potential":
        """f(x) = 1/2 sum_i c_i x_i^2."""
        return cls(PotentialFamily.DIAGONAL_QUADRATIC, np.asarray(curvatures, dtype=np.float64))

    @classmethod
    def logcosh(cls, d: int = 1, c: float = 1.0, eps: float = 0.5) -> "Potential":
        """f(x) = c/2 ||x||^2 + eps * sum_i log cosh(x_i)."""
        return cls(PotentialFamily.QUADRATIC_PLUS_LOGCOSH, np.full(d, float(c)), float(eps))

    @property
    def d(self) -> int:
        return int(self.curvature.size)

    @property
    def m(self) -> float:
        """Strong-convexity constant."""
        return float(np.min(self.curvature))

    @property
    def M(self) -> float:
        """Gradient-Lipschitz constant (sech^2 lies in (0, 1])."""
        return float(np.max(self.curvature)) + self.eps

    @property
    def kappa(self) -> float:
        return self.M / self.m

    @property
    def argmin(self) -> FloatArray:
        """Minimizer x* of f; the origin for every registered family."""
        return np.zeros(self.d)

    @property
    def is_quadratic(self) -> bool:
        return self.family is not PotentialFamily.QUADRATIC_PLUS_LOGCOSH

    def eval_f(self, x: ArrayLike) -> float:
        """Return f(x)."""
        x = _as_vector(x, self.d)
        value = 0.5 * float(np.dot(self.curvature, x * x))
        if self.eps:
            value += self.eps * float(np.sum(_log_cosh(x)))
        return value

    def grad(self, x: ArrayLike) -> FloatArray:
        """Return the gradient of f at x."""
        x = _as_points(x, self.d)
        g = self.curvature * x
        if self.eps:
            g = g + self.eps * np.tanh(x)
        return g

    def hessian_diag(self, x: ArrayLike) -> FloatArray:
        """Diagonal of D^2 f(x)."""
        x = _as_points(x, self.d)
        h = np.broadcast_to(self.curvature, x.shape).copy()
        if self.eps:
            h = h + self.eps / np.cosh(x) ** 2
        return h

    def d2(self, x: ArrayLike) -> FloatArray:
        """Return the Hessian D^2 f(x) as a dense matrix."""
        return np.diag(self.hessian_diag(x))

    def third_diag(self, x: ArrayLike) -> FloatArray:
        """Diagonal entries T_iii of D^3 f(x); zero for quadratic families."""
        x = _as_points(x, self.d)
        if not self.eps:
            return np.zeros_like(x)
        sech2 = 1.0 / np.cosh(x) ** 2
        return self.eps * (-2.0 * sech2 * np.tanh(x))

    def d3_contract(self, x: ArrayLike, a: ArrayLike, b: ArrayLike) -> FloatArray:
        """
        Contract D^3 f(x) with a and b in its last two slots.

        Returns the vector w with w_i = sum_jk T_ijk a_j b_k, so that
        <w, v> = <D^3 f(x), v (x) a (x) b>.
        """
        a = _as_vector(a, self.d, "a")
        b = _as_vector(b, self.d, "b")
        return self.third_diag(x) * a * b

    def to_dict(self) -> Dict[str, Any]:
        """Convert potential to dictionary."""
        return {
            'family': self.family.value,
            'curvature': self.curvature.tolist(),
            'eps': self.eps,
            'm': self.m,
            'M': self.M,
            'kappa': self.kappa
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Potential":
        """Create potential from dictionary."""
        return cls(
            PotentialFamily(data['family']),
            np.asarray(data['curvature'], dtype=np.float64),
            float(data.get('eps', 0.0))
        )

    def describe(self) -> str:
        """Descriptor string that round-trips through the config layer."""
        if self.family is PotentialFamily.DIAGONAL_QUADRATIC:
            return "diag:curv=" + ";".join(f"{c:g}" for c in self.curvature)
        if self.family is PotentialFamily.ISOTROPIC_QUADRATIC:
            return f"iso:d={self.d},c={self.curvature[0]:g}"
        return f"logcosh:d={self.d},c={self.curvature[0]:g},eps={self.eps:g}"


class TestFunctionFamily(Enum):
    """Registered test-function families."""
    __test__ = False
    COORDINATE_LINEAR = "linear"
    COORDINATE_QUADRATIC = "quadratic"
    CUSTOM_POLYNOMIAL = "poly"


@dataclass(frozen=True)
class TestFunction:
    """
    Separable quartic polynomial phi(x) = sum_i sum_k c_{ik} x_i^k, k = 1..4.

    Attributes:
        family: Registered family tag
        coeffs: Array of shape (d, 4); column k-1 holds the degree-k coefficients
    """
    __test__ = False  # not a pytest class

    family: TestFunctionFamily
    coeffs: FloatArray

    def __post_init__(self) -> None:
        coeffs = np.array(self.coeffs, dtype=np.float64)
        if coeffs.ndim != 2 or coeffs.shape[1] != 4 or coeffs.shape[0] == 0:
            raise DimensionError(f"Test function coefficients must have shape (d, 4), got {coeffs.shape}")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def linear(cls, d: int = 1, coef: float = 1.0) -> "TestFunction":
        """phi(x) = coef * sum_i x_i."""
        coeffs = np.zeros((d, 4))
        coeffs[:, 0] = coef
        return cls(TestFunctionFamily.COORDINATE_LINEAR, coeffs)

    @classmethod
    def quadratic(cls, d: int = 1, coef: float = 1.0) -> "TestFunction":
        """phi(x) = coef * sum_i x_i^2."""
        coeffs = np.zeros((d, 4))
        coeffs[:, 1] = coef
        return cls(TestFunctionFamily.COORDINATE_QUADRATIC, coeffs)

    @classmethod
    def polynomial(cls, d: int, c1: float = 0.0, c2: float = 0.0,
                   c3: float = 0.0, c4: float = 0.0) -> "TestFunction":
        """phi(x) = sum_i (c1 x_i + c2 x_i^2 + c3 x_i^3 + c4 x_i^4)."""
        coeffs = np.tile(np.array([c1, c2, c3, c4], dtype=np.float64), (d, 1))
        return cls(TestFunctionFamily.CUSTOM_POLYNOMIAL, coeffs)

    @property
    def d(self) -> int:
        return int(self.coeffs.shape[0])

    @property
    def degree(self) -> int:
        nonzero = np.nonzero(np.any(self.coeffs != 0, axis=0))[0]
        return int(nonzero[-1]) + 1 if nonzero.size else 0

    @property
    def is_odd(self) -> bool:
        return not np.any(self.coeffs[:, 1::2])

    def value(self, x: ArrayLike) -> float:
        x = _as_vector(x, self.d)
        c = self.coeffs
        return float(np.sum(x * (c[:, 0] + x * (c[:, 1] + x * (c[:, 2] + x * c[:, 3])))))

    def grad(self, x: ArrayLike) -> FloatArray:
        x = _as_points(x, self.d)
        c = self.coeffs
        return c[:, 0] + x * (2 * c[:, 1] + x * (3 * c[:, 2] + x * 4 * c[:, 3]))

    def hessian_diag(self, x: ArrayLike) -> FloatArray:
        x = _as_points(x, self.d)
        c = self.coeffs
        return 2 * c[:, 1] + x * (6 * c[:, 2] + x * 12 * c[:, 3])

    def hessian(self, x: ArrayLike) -> FloatArray:
        return np.diag(self.hessian_diag(x))

    def third_diag(self, x: ArrayLike) -> FloatArray:
        x = _as_points(x, self.d)
        c = self.coeffs
        return 6 * c[:, 2] + x * 24 * c[:, 3]

    def fourth_diag(self, x: ArrayLike) -> FloatArray:
        x = _as_points(x, self.d)
        return np.broadcast_to(24 * self.coeffs[:, 3], x.shape).copy()

    def laplacian(self, x: ArrayLike) -> float:
        return float(np.sum(self.hessian_diag(x)))

    def to_dict(self) -> Dict[str, Any]:
        return {'family': self.family.value, 'coeffs': self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TestFunction":
        return cls(TestFunctionFamily(data['family']), np.asarray(data['coeffs']))

    def describe(self) -> str:
        c = self.coeffs[0]
        if self.family is TestFunctionFamily.COORDINATE_LINEAR:
            return f"linear:d={self.d},coef={c[0]:g}"
        if self.family is TestFunctionFamily.COORDINATE_QUADRATIC:
            return f"quadratic:d={self.d},coef={c[1]:g}"
        return f"poly:d={self.d},c1={c[0]:g},c2={c[1]:g},c3={c[2]:g},c4={c[3]:g}"


@dataclass(frozen=True)
class PhaseTestFunction:
    """
    Test function over (x, v): g(x, v) = phi(x) + sum_i (a1_i v_i + a2_i v_i^2).

    The v-part is a polynomial of degree two with constant coefficients, so
    grad_v and Laplacian_v are analytic. `kinetic=True` marks the class
    g = phi(x) whose generator image is <v, grad phi(x)>.
    """
    x_part: Optional[TestFunction]
    a1: FloatArray = field(default_factory=lambda: np.zeros(1))
    a2: FloatArray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self) -> None:
        a1 = np.asarray(self.a1, dtype=np.float64).reshape(-1)
        a2 = np.asarray(self.a2, dtype=np.float64).reshape(-1)
        if a1.shape != a2.shape:
            raise DimensionError("v-coefficient vectors must have the same length")
        if self.x_part is not None and self.x_part.d != a1.size:
            raise DimensionError(f"x-part has d={self.x_part.d}, v-part has d={a1.size}")
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)

    @classmethod
    def kinetic(cls, phi: TestFunction) -> "PhaseTestFunction":
        """g(x, v) = phi(x), so that L g = <v, grad phi(x)>."""
        return cls(phi, np.zeros(phi.d), np.zeros(phi.d))

    @classmethod
    def velocity_polynomial(cls, d: int = 1, a1: float = 0.0, a2: float = 0.0) -> "PhaseTestFunction":
        return cls(None, np.full(d, float(a1)), np.full(d, float(a2)))

    @property
    def d(self) -> int:
        return int(self.a1.size)

    @property
    def is_kinetic(self) -> bool:
        return self.x_part is not None and not np.any(self.a1) and not np.any(self.a2)

    def value(self, x: ArrayLike, v: ArrayLike) -> float:
        v = _as_vector(v, self.d, "v")
        base = self.x_part.value(x) if self.x_part is not None else 0.0
        return base + float(np.sum(self.a1 * v + self.a2 * v * v))

    def grad_x(self, x: ArrayLike) -> FloatArray:
        if self.x_part is None:
            return np.zeros_like(_as_points(x, self.d))
        return self.x_part.grad(x)

    def grad_v(self, v: ArrayLike) -> FloatArray:
        v = _as_points(v, self.d, "v")
        return self.a1 + 2.0 * self.a2 * v

    def laplacian_v(self) -> float:
        return float(2.0 * np.sum(self.a2))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'x_part': self.x_part.to_dict() if self.x_part is not None else None,
            'a1': self.a1.tolist(),
            'a2': self.a2.tolist()
        }

    def describe(self) -> str:
        if self.is_kinetic:
            return f"kinetic:{self.x_part.describe()}"
        return f"vpoly:d={self.d},a1={self.a1[0]:g},a2={self.a2[0]:g}"


def _central_difference_grad(p: Potential, x: FloatArray, step: float = FD_STEP) -> FloatArray:
    g = np.empty(p.d)
    for i in range(p.d):
        e = np.zeros(p.d)
        e[i] = step
        g[i] = (p.eval_f(x + e) - p.eval_f(x - e)) / (2 * step)
    return g


def _central_difference_hessian(p: Potential, x: FloatArray, step: float = FD_STEP) -> FloatArray:
    h = np.empty((p.d, p.d))
    for i in range(p.d):
        e = np.zeros(p.d)
        e[i] = step
        h[:, i] = (p.grad(x + e) - p.grad(x - e)) / (2 * step)
    return h


@dataclass
class RegularityReport:
    """Per-probe outcome of the strong-convexity / smoothness spot check."""
    potential: str
    m: float
    M: float
    results: List[ValidationResult] = field(default_factory=list)
    margins: List[float] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return all(r.is_valid for r in self.results)

    @property
    def min_margin(self) -> float:
        return min(self.margins) if self.margins else float("nan")

    @property
    def violations(self) -> List[ValidationResult]:
        return [r for r in self.results if not r.is_valid]


def verify_regularity(
    p: Potential,
    probe_points: Sequence[ArrayLike],
    grad_rtol: float = 1e-6,
    eig_tol: float = 1e-12
) -> RegularityReport:
    """
    Spot-check m I <= D^2 f(x) <= M I and the analytic gradient on probe points.

    Args:
        p: Potential to check
        probe_points: Non-empty list of probe vectors
        grad_rtol: Relative tolerance for the finite-difference gradient check
        eig_tol: Slack allowed on the eigenvalue bounds

    Returns:
        RegularityReport; violations are reported, never raised
    """
    if len(probe_points) == 0:
        raise ParameterError("verify_regularity needs at least one probe point")

    report = RegularityReport(p.describe(), p.m, p.M)
    for probe in probe_points:
        x = _as_vector(probe, p.d)
        eigs = np.linalg.eigvalsh(p.d2(x))
        margin = min(eigs[0] - p.m, p.M - eigs[-1])
        report.margins.append(float(margin))

        g = p.grad(x)
        fd = _central_difference_grad(p, x)
        grad_err = float(np.linalg.norm(g - fd))
        grad_ok = grad_err <= grad_rtol * (1.0 + float(np.linalg.norm(g)))
        hess = p.d2(x)
        hess_err = float(np.linalg.norm(hess - _central_difference_hessian(p, x)))
        hess_ok = hess_err <= grad_rtol * (1.0 + float(np.linalg.norm(hess)))
        bounds_ok = margin >= -eig_tol

        if bounds_ok and grad_ok and hess_ok:
            report.results.append(ValidationResult(True, f"probe {x.tolist()}: margin {margin:.3g}"))
        else:
            suggestions = []
            if not bounds_ok:
                suggestions.append(f"Hessian spectrum [{eigs[0]:.6g}, {eigs[-1]:.6g}] leaves [m, M] by {-margin:.3g}")
            if not grad_ok:
                suggestions.append(f"Gradient differs from central differences by {grad_err:.3g}")
            if not hess_ok:
                suggestions.append(f"Hessian differs from central differences by {hess_err:.3g}")
            report.results.append(ValidationResult(False, f"probe {x.tolist()} fails the regularity check", suggestions))
            logger.warning(f"Regularity check failed for {p.describe()} at {x.tolist()}")

    logger.debug(f"Regularity check for {p.describe()}: {len(report.violations)} violations, "
                 f"min margin {report.min_margin:.3g}")
    return report

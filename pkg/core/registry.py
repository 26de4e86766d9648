"""Registry of potentials, test functions, schedules and samplers addressable by descriptor strings."""

import difflib
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

from core.errors import ParameterError
from core.pipeline import SamplerConfig, SamplerKind
from core.potential import PhaseTestFunction, Potential, TestFunction
from core.schedule import Schedule
from utils.logging_setup import get_logger

logger = get_logger("registry")

CATEGORIES = ("potential", "test_function", "schedule", "sampler")


@dataclass(frozen=True)
class ParamSpec:
    """
    One descriptor parameter.

    Attributes:
        name: Key in the descriptor
        kind: 'int', 'float', 'floats' (';'-separated) or 'auto-float' (float or 'auto')
        default: Default value; None marks a parameter resolved from context
        help: One-line description
    """
    name: str
    kind: str
    default: Any = None
    help: str = ""

    def coerce(self, raw: str) -> Any:
        try:
            if self.kind == 'int':
                return int(raw)
            if self.kind == 'float':
                return float(raw)
            if self.kind == 'floats':
                return [float(part) for part in raw.split(';') if part.strip()]
            if self.kind == 'auto-float':
                return None if raw.strip().lower() == 'auto' else float(raw)
        except ValueError:
            raise ParameterError(f"parameter '{self.name}' expects {self.kind}, got '{raw}'")
        return raw

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, 'type': self.kind, 'default': self.default, 'help': self.help}


# build(params, context) -> object; context carries the resolved potential
Builder = Callable[[Dict[str, Any], Dict[str, Any]], Any]


@dataclass(frozen=True)
class RegistryEntry:
    """A named, parameterized constructor."""
    category: str
    name: str
    summary: str
    params: Tuple[ParamSpec, ...]
    build: Builder = field(compare=False, repr=False)

    def resolve_params(self, raw: Dict[str, str]) -> Dict[str, Any]:
        known = {spec.name: spec for spec in self.params}
        unknown = [key for key in raw if key not in known]
        if unknown:
            hint = difflib.get_close_matches(unknown[0], list(known), n=1)
            suffix = f"; did you mean '{hint[0]}'?" if hint else ""
            raise ParameterError(f"{self.category} '{self.name}' has no parameter '{unknown[0]}'{suffix}")
        values = {spec.name: spec.default for spec in self.params}
        for key, text in raw.items():
            values[key] = known[key].coerce(text)
        return values

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'summary': self.summary,
            'params': [spec.to_dict() for spec in self.params]
        }


def parse_descriptor(text: str) -> Tuple[str, Dict[str, str]]:
    """
    Split 'name:key=value,key=value' into its name and raw parameters.

    The 'kinetic' test function takes a nested descriptor, returned whole
    under the key 'inner'.
    """
    text = text.strip()
    if not text:
        raise ParameterError("empty descriptor")
    name, _, rest = text.partition(':')
    name = name.strip()
    if name == 'kinetic':
        if not rest.strip():
            raise ParameterError("kinetic test function needs an inner descriptor, e.g. kinetic:quadratic:coef=1")
        return name, {'inner': rest.strip()}
    params: Dict[str, str] = {}
    for item in filter(None, (part.strip() for part in rest.split(','))):
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ParameterError(f"malformed parameter '{item}' in descriptor '{text}'")
        params[key.strip()] = value.strip()
    return name, params


class Registry:
    """Descriptor name -> entry, per category."""

    def __init__(self) -> None:
        self._entries: Dict[str, Dict[str, RegistryEntry]] = {c: {} for c in CATEGORIES}

    def register(self, entry: RegistryEntry) -> None:
        if entry.category not in self._entries:
            raise ParameterError(f"unknown registry category '{entry.category}'")
        self._entries[entry.category][entry.name] = entry

    def names(self, category: str) -> List[str]:
        return sorted(self._entries[category])

    def get(self, category: str, name: str) -> RegistryEntry:
        entries = self._entries[category]
        if name not in entries:
            hint = difflib.get_close_matches(name, list(entries), n=1)
            suffix = f"; did you mean '{hint[0]}'?" if hint else ""
            raise ParameterError(f"unknown {category} '{name}'{suffix}")
        return entries[name]

    def build(self, category: str, descriptor: str, context: Optional[Dict[str, Any]] = None) -> Any:
        name, raw = parse_descriptor(descriptor)
        entry = self.get(category, name)
        if name == 'kinetic':
            params: Dict[str, Any] = {'inner': raw['inner']}
        else:
            params = entry.resolve_params(raw)
        ctx = dict(context or {})
        ctx['registry'] = self
        return entry.build(params, ctx)

    def to_dict(self) -> Dict[str, List[Dict[str, Any]]]:
        return {c: [self._entries[c][n].to_dict() for n in self.names(c)] for c in CATEGORIES}

    def render_text(self) -> str:
        lines: List[str] = []
        for category in CATEGORIES:
            entries = [self._entries[category][n] for n in self.names(category)]
            if not entries:
                continue
            lines.append(f"{category}s:")
            for entry in entries:
                lines.append(f"  {entry.name:<12} {entry.summary}")
                for spec in entry.params:
                    default = "from potential" if spec.default is None else spec.default
                    lines.append(f"      {spec.name} ({spec.kind}, default {default}): {spec.help}")
        return "\n".join(lines)


def _potential_from(context: Dict[str, Any]) -> Potential:
    potential = context.get('potential')
    if potential is None:
        raise ParameterError("this descriptor needs a potential to resolve its defaults")
    return potential


def _dimension(params: Dict[str, Any], context: Dict[str, Any]) -> int:
    potential = context.get('potential')
    d = params.get('d')
    if d is None:
        return potential.d if potential is not None else 1
    if potential is not None and d != potential.d:
        raise ParameterError(f"test function has d={d}, potential has d={potential.d}")
    return int(d)


def _build_rlmc_fast(params: Dict[str, Any], context: Dict[str, Any]) -> Schedule:
    m, M = params['m'], params['M']
    if m is None or M is None:
        potential = _potential_from(context)
        m = potential.m if m is None else m
        M = potential.M if M is None else M
    return Schedule.rlmc_fast(m, M, lam=params['lambda'], K1=params['K1'])


def _build_rulmc_fast(params: Dict[str, Any], context: Dict[str, Any]) -> Schedule:
    kappa = params['kappa']
    if kappa is None:
        kappa = _potential_from(context).kappa
    return Schedule.rulmc_fast(kappa, K1=params['K1'])


def _build_kinetic(params: Dict[str, Any], context: Dict[str, Any]) -> PhaseTestFunction:
    inner = context['registry'].build('test_function', params['inner'], context)
    if not isinstance(inner, TestFunction):
        raise ParameterError("kinetic test function wraps a test function over x")
    return PhaseTestFunction.kinetic(inner)


def _sampler(kind: SamplerKind) -> Builder:
    def build(params: Dict[str, Any], context: Dict[str, Any]) -> SamplerConfig:
        return SamplerConfig(kind=kind, u=params.get('u'))
    return build


D_PARAM = ParamSpec('d', 'int', None, "dimension; defaults to the potential's")
U_PARAM = ParamSpec('u', 'float', None, "inverse mass; defaults to 1/M")


def default_registry() -> Registry:
    """Registry with every built-in family."""
    registry = Registry()
    entries = [
        RegistryEntry("potential", "iso", "f(x) = c/2 ||x||^2",
                      (ParamSpec('d', 'int', 1, "dimension"), ParamSpec('c', 'float', 1.0, "curvature")),
                      lambda p, ctx: Potential.isotropic(p['d'], p['c'])),
        RegistryEntry("potential", "diag", "f(x) = 1/2 sum c_i x_i^2",
                      (ParamSpec('curv', 'floats', [1.0], "';'-separated curvatures"),),
                      lambda p, ctx: Potential.diagonal(p['curv'])),
        RegistryEntry("potential", "logcosh", "f(x) = c/2 ||x||^2 + eps sum log cosh(x_i)",
                      (ParamSpec('d', 'int', 1, "dimension"), ParamSpec('c', 'float', 1.0, "curvature"),
                       ParamSpec('eps', 'float', 0.5, "perturbation amplitude")),
                      lambda p, ctx: Potential.logcosh(p['d'], p['c'], p['eps'])),

        RegistryEntry("test_function", "linear", "phi(x) = coef sum x_i",
                      (D_PARAM, ParamSpec('coef', 'float', 1.0, "coefficient")),
                      lambda p, ctx: TestFunction.linear(_dimension(p, ctx), p['coef'])),
        RegistryEntry("test_function", "quadratic", "phi(x) = coef sum x_i^2",
                      (D_PARAM, ParamSpec('coef', 'float', 1.0, "coefficient")),
                      lambda p, ctx: TestFunction.quadratic(_dimension(p, ctx), p['coef'])),
        RegistryEntry("test_function", "poly", "phi(x) = sum_i (c1 x_i + c2 x_i^2 + c3 x_i^3 + c4 x_i^4)",
                      (D_PARAM, ParamSpec('c1', 'float', 0.0, "degree-1 coefficient"),
                       ParamSpec('c2', 'float', 0.0, "degree-2 coefficient"),
                       ParamSpec('c3', 'float', 0.0, "degree-3 coefficient"),
                       ParamSpec('c4', 'float', 0.0, "degree-4 coefficient")),
                      lambda p, ctx: TestFunction.polynomial(_dimension(p, ctx), p['c1'], p['c2'], p['c3'], p['c4'])),
        RegistryEntry("test_function", "kinetic", "g(x, v) = phi(x), averaged as <v, grad phi(x)>",
                      (ParamSpec('inner', 'str', None, "test function over x, e.g. quadratic:coef=1"),),
                      _build_kinetic),
        RegistryEntry("test_function", "vpoly", "g(x, v) = sum_i (a1 v_i + a2 v_i^2)",
                      (D_PARAM, ParamSpec('a1', 'float', 0.0, "linear coefficient"),
                       ParamSpec('a2', 'float', 0.0, "quadratic coefficient")),
                      lambda p, ctx: PhaseTestFunction.velocity_polynomial(_dimension(p, ctx), p['a1'], p['a2'])),

        RegistryEntry("schedule", "const", "gamma_n = h",
                      (ParamSpec('h', 'float', 0.1, "step size"),),
                      lambda p, ctx: Schedule.constant(p['h'])),
        RegistryEntry("schedule", "poly", "gamma_n = gamma0 n^-alpha",
                      (ParamSpec('alpha', 'float', 0.4, "decay exponent in (0, 1]"),
                       ParamSpec('gamma0', 'float', 1.0, "first step")),
                      lambda p, ctx: Schedule.polynomial(p['alpha'], p['gamma0'])),
        RegistryEntry("schedule", "rlmc-fast", "gamma_n = 1/(m + 34M + lambda (n - 1 - K1)^+)",
                      (ParamSpec('m', 'float', None, "strong convexity"),
                       ParamSpec('M', 'float', None, "gradient Lipschitz constant"),
                       ParamSpec('lambda', 'auto-float', None, "decay rate or 'auto'"),
                       ParamSpec('K1', 'int', 0, "warm-phase length")),
                      _build_rlmc_fast),
        RegistryEntry("schedule", "rulmc-fast", "gamma_n = 16 kappa/(32 kappa^(5/3) + (n - K1)^+)",
                      (ParamSpec('kappa', 'float', None, "condition number"),
                       ParamSpec('K1', 'int', 0, "warm-phase length")),
                      _build_rulmc_fast),

        RegistryEntry("sampler", "lmc", "Euler overdamped Langevin", (), _sampler(SamplerKind.LMC)),
        RegistryEntry("sampler", "rlmc", "randomized-midpoint overdamped Langevin", (), _sampler(SamplerKind.RLMC)),
        RegistryEntry("sampler", "klmc", "exponential-integrator kinetic Langevin", (U_PARAM,),
                      _sampler(SamplerKind.KLMC)),
        RegistryEntry("sampler", "rulmc", "randomized-midpoint kinetic Langevin", (U_PARAM,),
                      _sampler(SamplerKind.RULMC)),
    ]
    for entry in entries:
        registry.register(entry)
    return registry


def list_registry(registry: Optional[Registry] = None, as_json: bool = False) -> str:
    """Text or JSON listing of every registered family with its parameter schema."""
    registry = registry if registry is not None else default_registry()
    if as_json:
        return json.dumps(registry.to_dict(), indent=2, sort_keys=True)
    return registry.render_text()

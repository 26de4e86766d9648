"""Experiment configuration: INI-style text parsed into a validated ExperimentConfig."""

import configparser
import difflib
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple, Union

from core.errors import ConfigError, LangevinError
from core.pipeline import InitialPolicy, SamplerConfig, SamplerKind
from core.potential import PhaseTestFunction, Potential, TestFunction
from core.registry import Registry, default_registry
from core.schedule import Schedule
from utils.logging_setup import get_logger

logger = get_logger("config")


class ExperimentKind(Enum):
    """Experiment types run by the CLI."""
    BIAS_SWEEP = "bias-sweep"
    CLT_REPLICATES = "clt-replicates"
    W2_RATE = "w2-rate"
    REGIME_TABLE = "regime-table"
    SINGLE_RUN = "single-run"


class OutputFormat(Enum):
    """Format of the per-row results file."""
    CSV = "csv"
    JSON = "json"


SECTIONS: Dict[str, Tuple[str, ...]] = {
    'experiment': (
        'kind', 'name', 'n_steps', 'replicates', 'seed', 'level', 'workers', 'seeds',
        'h_grid', 'alpha_grid', 'samplers', 'checkpoints', 'burn_in_fraction', 'stride', 'nodes',
        'potential', 'sampler', 'schedule', 'test_function'
    ),
    'potential': ('descriptor',),
    'sampler': ('descriptor', 'u', 'x0', 'v0'),
    'schedule': ('descriptor',),
    'test_function': ('descriptor',),
    'output': ('dir', 'format'),
}

# Common misnamings mapped to the key that was meant
ALIASES = {
    'stepsize': 'schedule',
    'step_size': 'schedule',
    'steps': 'n_steps',
    'target': 'potential',
    'phi': 'test_function',
    'observable': 'test_function',
    'confidence': 'level',
    'r': 'replicates',
    'out': 'dir',
}

DEFAULT_H_GRID = (0.02, 0.05, 0.1, 0.2)
DEFAULT_ALPHA_GRID = (0.1, 0.2, 0.25, 1.0 / 3.0, 0.4, 0.5)


@dataclass
class ResolvedExperiment:
    """Objects built from the descriptors of a config."""
    potential: Potential
    sampler: SamplerConfig
    schedule: Schedule
    test_function: Optional[Union[TestFunction, PhaseTestFunction]]


@dataclass
class ExperimentConfig:
    """
    A fully defaulted experiment description.

    Every field is echoed into manifest.json so that each reported number can
    be traced back to the config and the seed.
    """
    kind: ExperimentKind
    seed: int
    name: str = ""
    potential: str = "iso:d=1,c=1"
    sampler: str = "rlmc"
    schedule: str = "poly:alpha=0.4"
    test_function: Optional[str] = None
    n_steps: int = 10_000
    replicates: int = 1
    level: float = 0.95
    workers: Optional[int] = None
    seeds: int = 1
    h_grid: List[float] = field(default_factory=lambda: list(DEFAULT_H_GRID))
    alpha_grid: List[float] = field(default_factory=lambda: list(DEFAULT_ALPHA_GRID))
    samplers: List[str] = field(default_factory=lambda: ["rlmc", "rulmc"])
    checkpoints: List[int] = field(default_factory=list)
    burn_in_fraction: float = 0.2
    stride: int = 10
    nodes: int = 20
    u: Optional[float] = None
    x0: Optional[List[float]] = None
    v0: Optional[List[float]] = None
    output_dir: str = "results"
    output_format: OutputFormat = OutputFormat.CSV
    notes: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.name:
            self.name = self.kind.value

    def with_overrides(
        self,
        seed: Optional[int] = None,
        workers: Optional[int] = None,
        output_dir: Optional[str] = None,
        output_format: Optional[str] = None
    ) -> "ExperimentConfig":
        """Copy with CLI flag values taking precedence."""
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes['seed'] = int(seed)
        if workers is not None:
            changes['workers'] = int(workers)
        if output_dir is not None:
            changes['output_dir'] = str(output_dir)
        if output_format is not None:
            changes['output_format'] = OutputFormat(output_format)
        return replace(self, **changes)

    def resolve(self, registry: Optional[Registry] = None) -> ResolvedExperiment:
        """Build potential, sampler, schedule and test function."""
        registry = registry if registry is not None else default_registry()
        potential = _build(registry, 'potential', self.potential, {})
        context = {'potential': potential}
        sampler = _build(registry, 'sampler', self.sampler, context)
        u = self.u if self.u is not None else sampler.u
        sampler = SamplerConfig(
            kind=sampler.kind,
            u=u,
            initial=InitialPolicy.ARGMIN if self.x0 is None else InitialPolicy.EXPLICIT,
            x0=self.x0,
            v0=self.v0
        )
        schedule = _build(registry, 'schedule', self.schedule, context)
        test_function = None
        if self.test_function is not None:
            test_function = _build(registry, 'test_function', self.test_function, context)
        return ResolvedExperiment(potential, sampler, schedule, test_function)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'name': self.name,
            'seed': self.seed,
            'potential': self.potential,
            'sampler': self.sampler,
            'schedule': self.schedule,
            'test_function': self.test_function,
            'n_steps': self.n_steps,
            'replicates': self.replicates,
            'level': self.level,
            'workers': self.workers,
            'seeds': self.seeds,
            'h_grid': list(self.h_grid),
            'alpha_grid': list(self.alpha_grid),
            'samplers': list(self.samplers),
            'checkpoints': list(self.checkpoints),
            'burn_in_fraction': self.burn_in_fraction,
            'stride': self.stride,
            'nodes': self.nodes,
            'u': self.u,
            'x0': self.x0,
            'v0': self.v0,
            'output_dir': self.output_dir,
            'output_format': self.output_format.value,
            'notes': list(self.notes)
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        values = dict(data)
        values['kind'] = ExperimentKind(values['kind'])
        values['output_format'] = OutputFormat(values.get('output_format', 'csv'))
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in values.items() if k in known})


def _build(registry: Registry, category: str, descriptor: str, context: Dict[str, Any]) -> Any:
    try:
        return registry.build(category, descriptor, context)
    except LangevinError as e:
        raise ConfigError(f"{category} '{descriptor}': {e}", field=category)


def _locate_lines(text: str) -> Dict[Tuple[str, str], int]:
    """(section, key) -> 1-based line number, for error messages."""
    lines: Dict[Tuple[str, str], int] = {}
    section = ""
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in '#;':
            continue
        header = re.match(r'^\[([^\]]+)\]', stripped)
        if header:
            section = header.group(1).strip().lower()
            lines[(section, '')] = number
            continue
        key = re.split(r'[=:]', stripped, maxsplit=1)[0].strip().lower()
        lines.setdefault((section, key), number)
    return lines


def _suggest(key: str, candidates: Tuple[str, ...]) -> str:
    if key in ALIASES:
        return ALIASES[key]
    matches = difflib.get_close_matches(key, candidates, n=1)
    return matches[0] if matches else ""


def _number(text: str, key: str, line: Optional[int]) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"'{key}' expects a number, got '{text}'", line=line, field=key)


def _integer(text: str, key: str, line: Optional[int]) -> int:
    try:
        return int(text.strip().replace('_', ''))
    except ValueError:
        raise ConfigError(f"'{key}' expects an integer, got '{text}'", line=line, field=key)


def _number_list(text: str, key: str, line: Optional[int]) -> List[float]:
    parts = [p for p in re.split(r'[,;\s]+', text.strip()) if p]
    if not parts:
        raise ConfigError(f"'{key}' needs at least one value", line=line, field=key)
    return [_number(p, key, line) for p in parts]


def parse_config(text: str, seed: Optional[int] = None, registry: Optional[Registry] = None) -> ExperimentConfig:
    """
    Parse and validate an experiment config.

    Args:
        text: INI text with [experiment], [potential], [sampler], [schedule],
            [test_function] and [output] sections
        seed: Seed from the command line; overrides the config's
        registry: Registry used to resolve descriptors

    Returns:
        ExperimentConfig with every default filled in

    Raises:
        ConfigError: with the line number for syntax errors and unknown keys,
            and the field name for validation failures
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=('#',))
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("expected a [section] header", line=e.lineno)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"duplicate key '{e.option}' in [{e.section}]", line=e.lineno, field=e.option)
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section [{e.section}]", line=e.lineno)
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ConfigError("malformed line, expected 'key = value'", line=line)

    lines = _locate_lines(text)
    for section in parser.sections():
        name = section.strip().lower()
        if name not in SECTIONS:
            hint = _suggest(name, tuple(SECTIONS))
            suffix = f"; did you mean [{hint}]?" if hint else ""
            raise ConfigError(f"unknown section [{section}]{suffix}", line=lines.get((name, '')), field=name)
        for key in parser[section]:
            if key not in SECTIONS[name]:
                hint = _suggest(key, SECTIONS[name])
                suffix = f"; did you mean '{hint}'?" if hint else ""
                raise ConfigError(f"unknown key '{key}' in [{name}]{suffix}", line=lines.get((name, key)), field=key)

    def get(section: str, key: str) -> Optional[str]:
        if parser.has_option(section, key):
            value = parser.get(section, key).strip()
            return value if value else None
        return None

    def line_of(section: str, key: str) -> Optional[int]:
        return lines.get((section, key))

    kind_text = get('experiment', 'kind')
    if kind_text is None:
        raise ConfigError("missing experiment kind", line=line_of('experiment', ''), field='kind')
    try:
        kind = ExperimentKind(kind_text)
    except ValueError:
        choices = ", ".join(k.value for k in ExperimentKind)
        raise ConfigError(f"unknown experiment kind '{kind_text}' (choose from {choices})",
                          line=line_of('experiment', 'kind'), field='kind')

    seed_text = get('experiment', 'seed')
    if seed is None:
        if seed_text is None:
            raise ConfigError("a seed is required (set seed in [experiment] or pass --seed)", field='seed')
        seed = _integer(seed_text, 'seed', line_of('experiment', 'seed'))

    values: Dict[str, Any] = {'kind': kind, 'seed': int(seed)}
    for component in ('potential', 'sampler', 'schedule', 'test_function'):
        descriptor = get(component, 'descriptor') or get('experiment', component)
        if descriptor is not None:
            values[component] = descriptor

    integers = ('n_steps', 'replicates', 'workers', 'seeds', 'stride', 'nodes')
    for key in integers:
        text_value = get('experiment', key)
        if text_value is not None:
            values[key] = _integer(text_value, key, line_of('experiment', key))
    for key in ('level', 'burn_in_fraction'):
        text_value = get('experiment', key)
        if text_value is not None:
            values[key] = _number(text_value, key, line_of('experiment', key))
    for key in ('h_grid', 'alpha_grid'):
        text_value = get('experiment', key)
        if text_value is not None:
            values[key] = _number_list(text_value, key, line_of('experiment', key))
    checkpoints = get('experiment', 'checkpoints')
    if checkpoints is not None:
        values['checkpoints'] = [int(n) for n in _number_list(checkpoints, 'checkpoints', line_of('experiment', 'checkpoints'))]
    samplers = get('experiment', 'samplers')
    if samplers is not None:
        values['samplers'] = [s for s in re.split(r'[,;\s]+', samplers) if s]

    u_text = get('sampler', 'u')
    if u_text is not None:
        values['u'] = _number(u_text, 'u', line_of('sampler', 'u'))
    for key in ('x0', 'v0'):
        text_value = get('sampler', key)
        if text_value is not None:
            values[key] = _number_list(text_value, key, line_of('sampler', key))

    out_dir = get('output', 'dir')
    if out_dir is not None:
        values['output_dir'] = out_dir
    fmt = get('output', 'format')
    if fmt is not None:
        try:
            values['output_format'] = OutputFormat(fmt)
        except ValueError:
            raise ConfigError(f"format must be csv or json, got '{fmt}'", line=line_of('output', 'format'), field='format')
    name = get('experiment', 'name')
    if name is not None:
        values['name'] = name

    cfg = ExperimentConfig(**values)
    validate_config(cfg, registry)
    return cfg


def validate_config(cfg: ExperimentConfig, registry: Optional[Registry] = None) -> ResolvedExperiment:
    """
    Check field ranges and resolve every descriptor.

    Appends a note to cfg.notes when u falls back to 1/M.

    Raises:
        ConfigError: naming the offending field
    """
    if cfg.n_steps < 1:
        raise ConfigError(f"n_steps must be >= 1, got {cfg.n_steps}", field='n_steps')
    if cfg.replicates < 1:
        raise ConfigError(f"replicates must be >= 1, got {cfg.replicates}", field='replicates')
    if not 0.0 <= cfg.level < 1.0:
        raise ConfigError(f"level must lie in [0, 1), got {cfg.level}", field='level')
    if cfg.workers is not None and cfg.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}", field='workers')
    if cfg.seeds < 1:
        raise ConfigError(f"seeds must be >= 1, got {cfg.seeds}", field='seeds')
    if cfg.stride < 1:
        raise ConfigError(f"stride must be >= 1, got {cfg.stride}", field='stride')
    if not 0.0 <= cfg.burn_in_fraction < 1.0:
        raise ConfigError(f"burn_in_fraction must lie in [0, 1), got {cfg.burn_in_fraction}", field='burn_in_fraction')
    if cfg.u is not None and not cfg.u > 0.0:
        raise ConfigError(f"u must be positive, got {cfg.u}", field='u')

    resolved = cfg.resolve(registry)

    if cfg.kind is ExperimentKind.CLT_REPLICATES:
        if cfg.test_function is None:
            raise ConfigError("clt-replicates needs a test function", field='test_function')
        if cfg.replicates < 2:
            raise ConfigError("clt-replicates needs replicates >= 2", field='replicates')
    if cfg.kind is ExperimentKind.W2_RATE:
        if not cfg.checkpoints:
            raise ConfigError("w2-rate needs checkpoints", field='checkpoints')
        if min(cfg.checkpoints) < 1:
            raise ConfigError("checkpoints must be >= 1", field='checkpoints')
        if cfg.replicates < 2:
            raise ConfigError("w2-rate needs replicates >= 2", field='replicates')
    if cfg.kind is ExperimentKind.BIAS_SWEEP:
        if any(h <= 0.0 for h in cfg.h_grid):
            raise ConfigError("h_grid values must be positive", field='h_grid')
        unknown = [s for s in cfg.samplers if s not in {k.value for k in SamplerKind}]
        if unknown:
            raise ConfigError(f"unknown sampler '{unknown[0]}' in samplers", field='samplers')
    if cfg.kind is ExperimentKind.REGIME_TABLE:
        if any(not 0.0 < a <= 1.0 for a in cfg.alpha_grid):
            raise ConfigError("alpha_grid values must lie in (0, 1]", field='alpha_grid')

    if resolved.sampler.kind.is_underdamped and resolved.test_function is not None \
            and not isinstance(resolved.test_function, PhaseTestFunction):
        raise ConfigError("underdamped samplers need a kinetic: or vpoly: test function", field='test_function')
    if not resolved.sampler.kind.is_underdamped and isinstance(resolved.test_function, PhaseTestFunction):
        raise ConfigError("overdamped samplers need a test function over x", field='test_function')

    underdamped_in_use = resolved.sampler.kind.is_underdamped or (
        cfg.kind is ExperimentKind.BIAS_SWEEP and any(SamplerKind(s).is_underdamped for s in cfg.samplers)
    )
    if underdamped_in_use and resolved.sampler.u is None:
        note = (f"u defaults to 1/M = {1.0 / resolved.potential.M:.6g}, "
                f"the inverse mass under which the kinetic bias bounds hold")
        if note not in cfg.notes:
            cfg.notes.append(note)
            logger.info(note)
    return resolved

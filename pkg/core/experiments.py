"""Experiment orchestration: runs one ExperimentConfig and writes its result files."""

import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from core.bias import BIAS_CSV_COLUMNS, RATE_CSV_COLUMNS, bias_sweep, w2_rate
from core.clt import (
    AsymptoticLaw, CheckpointObserver, CltReport, ReplicateJob, confidence_interval, kinetic_special_law,
    normality_check, normalizer_for, overdamped_law, replicate_harness, underdamped_general_law
)
from core.config import ExperimentConfig, ExperimentKind, ResolvedExperiment, validate_config
from core.errors import DivergenceError, LangevinError, RegimeError
from core.noise import RngStream
from core.pipeline import MomentObserver, SamplerKind, centered_observable, run_chain
from core.potential import PhaseTestFunction, TestFunction
from core.quadrature import MAX_GRID_POINTS, QuadratureOracle, QuadratureRule
from core.registry import Registry
from core.results import Manifest, write_json, write_rows
from core.schedule import (
    Regime, Schedule, Setting, classify_overdamped, classify_schedule, classify_underdamped,
    empirical_gamma_hat, validate_schedule
)
from utils.logging_setup import get_logger

logger = get_logger("experiments")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGENCE = 2
EXIT_VALIDATION = 3

SINGLE_RUN_COLUMNS = ['replicate', 'n', 'estimate', 'normalizer', 'statistic', 'gamma1', 'gamma2', 'gamma3', 'gamma4']
CLT_COLUMNS = ['replicate', 'stream_id', 'n', 'estimate', 'normalizer', 'statistic', 'diverged']
REGIME_COLUMNS = ['setting', 'alpha', 'regime', 'limit', 'rate_exponent', 'normalizer', 'numeric_gamma_hat', 'horizon']


@dataclass
class ExperimentOutput:
    """Rows, summary and provenance produced by one experiment kind."""
    columns: List[str]
    rows: List[Dict[str, Any]]
    summary: Dict[str, Any]
    stream_ids: List[int] = field(default_factory=list)
    messages: List[str] = field(default_factory=list)
    partial: bool = False
    exit_code: int = EXIT_OK


@dataclass
class ExperimentResult:
    """Exit status and files of run_experiment."""
    exit_code: int
    output_dir: Path
    files: List[Path] = field(default_factory=list)
    message: str = ""


def make_oracle(resolved: ResolvedExperiment, cfg: ExperimentConfig) -> QuadratureOracle:
    """Gauss-Hermite tensor grid when it fits, exact-sampling Monte Carlo otherwise."""
    axes = resolved.potential.d * (2 if resolved.sampler.kind.is_underdamped else 1)
    if cfg.nodes ** axes <= MAX_GRID_POINTS:
        return QuadratureOracle(resolved.potential, QuadratureRule.GAUSS_HERMITE, nodes=cfg.nodes)
    logger.info(f"{cfg.nodes}^{axes} grid points exceed the tensor limit; using Monte Carlo quadrature")
    return QuadratureOracle(resolved.potential, QuadratureRule.MONTE_CARLO, seed=cfg.seed)


def build_law(resolved: ResolvedExperiment, cfg: ExperimentConfig) -> AsymptoticLaw:
    """
    Asymptotic law matching the sampler, the schedule and the test function.

    Raises:
        RegimeError: no law is available for this combination
    """
    g = resolved.test_function
    kind = resolved.sampler.kind
    oracle = make_oracle(resolved, cfg)
    potential = resolved.potential

    if not kind.is_underdamped:
        if not isinstance(g, TestFunction):
            raise RegimeError("overdamped laws need a test function over x")
        regime = classify_schedule(resolved.schedule.fresh(), Setting.OVERDAMPED)
        if kind is SamplerKind.LMC and regime.regime is not Regime.ZERO:
            raise RegimeError("the Euler overdamped chain has a bias constant only in the Zero regime")
        return overdamped_law(g, potential, oracle, regime)

    if not isinstance(g, PhaseTestFunction):
        raise RegimeError("underdamped laws need a test function over (x, v)")
    u = resolved.sampler.u if resolved.sampler.u is not None else 1.0 / potential.M
    if g.is_kinetic:
        regime = classify_schedule(resolved.schedule.fresh(), Setting.UNDERDAMPED)
        return kinetic_special_law(g.x_part, u, potential, oracle, kind, regime)
    regime = classify_schedule(resolved.schedule.fresh(), Setting.OVERDAMPED)
    return underdamped_general_law(g, u, oracle, regime)


def _checkpoints(cfg: ExperimentConfig) -> Tuple[int, ...]:
    return tuple(sorted({n for n in cfg.checkpoints if n <= cfg.n_steps} | {cfg.n_steps}))


def _single_run(cfg: ExperimentConfig, resolved: ResolvedExperiment, workers: int) -> ExperimentOutput:
    rng = RngStream(cfg.seed, 0)
    schedule = resolved.schedule.fresh()
    setting = Setting.UNDERDAMPED if resolved.sampler.kind.is_underdamped else Setting.OVERDAMPED
    messages = [r.message for r in validate_schedule(schedule, setting, resolved.potential) if not r.is_valid]

    observers: List[Any] = [MomentObserver(burn_in=int(cfg.burn_in_fraction * cfg.n_steps))]
    averaging: Optional[CheckpointObserver] = None
    if resolved.test_function is not None:
        fn = centered_observable(resolved.sampler, resolved.potential, resolved.test_function)
        averaging = CheckpointObserver(fn, schedule, _checkpoints(cfg))
        observers.append(averaging)
    summary = run_chain(resolved.sampler, resolved.potential, schedule, cfg.n_steps, observers, rng)

    law: Optional[AsymptoticLaw] = None
    if averaging is not None:
        try:
            law = build_law(resolved, cfg)
        except LangevinError as e:
            messages.append(f"no asymptotic law: {e}")

    rows: List[Dict[str, Any]] = []
    report: Dict[str, Any] = {'chain': summary.to_dict()}
    if averaging is not None:
        for record in averaging.records:
            normalizer = law.normalizer.evaluate(record['gamma_sums']) if law is not None else None
            g1, g2, g3, g4 = record['gamma_sums']
            rows.append({
                'replicate': 0,
                'n': record['n'],
                'estimate': record['estimate'],
                'normalizer': normalizer,
                'statistic': normalizer * record['estimate'] - law.mean if law is not None else None,
                'gamma1': g1, 'gamma2': g2, 'gamma3': g3, 'gamma4': g4
            })
    if law is not None:
        report['law'] = law.to_dict()
        estimate = averaging.average.value
        normalizer_value = law.normalizer.evaluate(schedule.sums)
        try:
            lower, upper = confidence_interval(estimate, normalizer_value, law, cfg.level)
            report['interval'] = [lower, upper]
        except LangevinError as e:
            report['interval'] = None
            report['limit_statistic'] = normalizer_value * estimate
            messages.append(str(e))
    return ExperimentOutput(SINGLE_RUN_COLUMNS, rows, report, [0], messages)


def _clt_replicates(cfg: ExperimentConfig, resolved: ResolvedExperiment, workers: int) -> ExperimentOutput:
    law = build_law(resolved, cfg)
    job = ReplicateJob(resolved.sampler, resolved.potential, resolved.schedule.fresh(),
                       resolved.test_function, cfg.n_steps, cfg.seed, _checkpoints(cfg))
    batch = replicate_harness(job, cfg.replicates, law, workers=workers)

    rows: List[Dict[str, Any]] = []
    for outcome in batch.outcomes:
        if outcome.diverged:
            rows.append({'replicate': outcome.replicate, 'stream_id': outcome.stream_id,
                         'n': outcome.divergence_step, 'diverged': True})
            continue
        for record in outcome.checkpoints:
            normalizer = law.normalizer.evaluate(record['gamma_sums'])
            rows.append({
                'replicate': outcome.replicate,
                'stream_id': outcome.stream_id,
                'n': record['n'],
                'estimate': record['estimate'],
                'normalizer': normalizer,
                'statistic': normalizer * record['estimate'] - law.mean,
                'diverged': False
            })

    converged = [o for o in batch.outcomes if not o.diverged]
    messages: List[str] = []
    if batch.excluded:
        messages.append(f"{len(batch.excluded)} of {batch.replicates} replicates diverged and were excluded")
    if len(converged) < 2:
        summary = {'excluded': batch.excluded, 'replicates': batch.replicates, 'law': law.to_dict()}
        return ExperimentOutput(CLT_COLUMNS, rows, summary, [o.stream_id for o in batch.outcomes],
                                messages, partial=True, exit_code=EXIT_DIVERGENCE)

    estimates = np.array([o.estimate for o in converged])
    interval: Optional[Tuple[float, float]] = None
    normality = None
    extra: Dict[str, Any] = {}
    if law.in_probability:
        messages.append("biased regime: the normalized average converges in probability; no interval")
        extra['limit_statistic_mean'] = float(np.mean(batch.normalized))
    else:
        first = converged[0]
        interval = confidence_interval(first.estimate, law.normalizer.evaluate(first.gamma_sums), law, cfg.level)
        normality = normality_check(batch.statistics, law.variance)
        covered = 0
        for outcome in converged:
            lower, upper = confidence_interval(outcome.estimate, law.normalizer.evaluate(outcome.gamma_sums),
                                               law, cfg.level)
            covered += int(lower <= 0.0 <= upper)
        extra['coverage'] = covered / len(converged)
        extra['statistic_variance'] = float(np.var(batch.statistics, ddof=1))

    report = CltReport(
        law=law,
        estimate=float(np.mean(estimates)),
        interval=interval,
        normality=normality,
        replicates=batch.replicates,
        excluded=batch.excluded,
        seed=cfg.seed,
        stream_ids=[o.stream_id for o in batch.outcomes],
        level=cfg.level
    )
    summary = report.to_dict()
    summary.update(extra)
    logger.info(f"CLT replicates: regime {law.regime.label}, "
                f"KS={summary['ks_statistic']}, coverage={extra.get('coverage')}")
    return ExperimentOutput(CLT_COLUMNS, rows, summary, report.stream_ids, messages,
                            partial=bool(batch.excluded))


def _log_log_slope(rows: List[Dict[str, Any]], sampler: str) -> Optional[float]:
    by_h: Dict[float, List[float]] = {}
    for row in rows:
        if row['sampler'] == sampler and row['empirical_w2'] > 0.0:
            by_h.setdefault(row['h'], []).append(row['empirical_w2'])
    if len(by_h) < 2:
        return None
    hs = sorted(by_h)
    medians = [float(np.median(by_h[h])) for h in hs]
    slope, _ = np.polyfit(np.log(hs), np.log(medians), 1)
    return float(slope)


def _bias_sweep(cfg: ExperimentConfig, resolved: ResolvedExperiment, workers: int) -> ExperimentOutput:
    kinds = [SamplerKind(name) for name in cfg.samplers]
    bias_rows = bias_sweep(resolved.potential, kinds, cfg.h_grid, cfg.n_steps, cfg.seed, seeds=cfg.seeds,
                           u=resolved.sampler.u, burn_in_fraction=cfg.burn_in_fraction, stride=cfg.stride)
    rows = [row.to_dict() for row in bias_rows]
    summary = {
        'potential': resolved.potential.describe(),
        'slopes': {name: _log_log_slope(rows, name) for name in cfg.samplers},
        'bound_violations': sum(
            1 for row in rows if row['theory_bound'] is not None and row['empirical_w2'] > row['theory_bound']
        ),
        'rows': len(rows)
    }
    return ExperimentOutput(BIAS_CSV_COLUMNS, rows, summary, [row['stream_id'] for row in rows])


def _w2_rate(cfg: ExperimentConfig, resolved: ResolvedExperiment, workers: int) -> ExperimentOutput:
    rate_rows = w2_rate(resolved.potential, resolved.sampler, resolved.schedule.fresh(), cfg.checkpoints,
                        cfg.replicates, cfg.seed)
    rows = [row.to_dict() for row in rate_rows]
    last = rows[-1]
    summary = {
        'sampler': resolved.sampler.kind.value,
        'schedule': resolved.schedule.describe(),
        'final_n': last['n'],
        'final_w2': last['w2'],
        'final_ratio': last['w2'] / last['sqrt_d_over_m']
    }
    return ExperimentOutput(RATE_CSV_COLUMNS, rows, summary, list(range(cfg.replicates)))


def _regime_table(cfg: ExperimentConfig, resolved: ResolvedExperiment, workers: int) -> ExperimentOutput:
    rows: List[Dict[str, Any]] = []
    messages: List[str] = []
    classifiers = (
        (Setting.OVERDAMPED, classify_overdamped),
        (Setting.UNDERDAMPED, classify_underdamped),
    )
    for alpha in cfg.alpha_grid:
        schedule = Schedule.polynomial(alpha)
        for _ in range(cfg.n_steps):
            schedule.next_gamma()
        for setting, classify in classifiers:
            try:
                report = classify(alpha)
            except LangevinError as e:
                messages.append(f"{setting.value} alpha={alpha:g}: {e}")
                rows.append({'setting': setting.value, 'alpha': alpha, 'regime': "n/a", 'horizon': cfg.n_steps,
                             'numeric_gamma_hat': empirical_gamma_hat(schedule, setting)})
                continue
            rows.append({
                'setting': setting.value,
                'alpha': alpha,
                'regime': report.regime.value,
                'limit': report.limit,
                'rate_exponent': report.rate_exponent,
                'normalizer': normalizer_for(report).value,
                'numeric_gamma_hat': empirical_gamma_hat(schedule, setting),
                'horizon': cfg.n_steps
            })
    summary = {'alphas': list(cfg.alpha_grid), 'horizon': cfg.n_steps, 'rows': len(rows)}
    return ExperimentOutput(REGIME_COLUMNS, rows, summary, [], messages)


RUNNERS: Dict[ExperimentKind, Callable[[ExperimentConfig, ResolvedExperiment, int], ExperimentOutput]] = {
    ExperimentKind.SINGLE_RUN: _single_run,
    ExperimentKind.CLT_REPLICATES: _clt_replicates,
    ExperimentKind.BIAS_SWEEP: _bias_sweep,
    ExperimentKind.W2_RATE: _w2_rate,
    ExperimentKind.REGIME_TABLE: _regime_table,
}


def run_experiment(
    cfg: ExperimentConfig,
    output_dir: Optional[Path] = None,
    registry: Optional[Registry] = None
) -> ExperimentResult:
    """
    Run an experiment and write results.csv (or .json), summary.json and manifest.json.

    Args:
        cfg: Parsed configuration
        output_dir: Directory for the files; defaults to cfg.output_dir
        registry: Registry used to resolve descriptors

    Returns:
        ExperimentResult with exit code 0 (success), 2 (divergence) or 3 (validation failure)
    """
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = cfg.workers if cfg.workers is not None else (os.cpu_count() or 1)
    manifest = Manifest(config=cfg.to_dict(), seed=cfg.seed)
    files: List[Path] = []
    logger.info(f"Starting {cfg.kind.value} experiment '{cfg.name}' (seed {cfg.seed}, {workers} worker(s))")
    start = time.time()

    try:
        resolved = validate_config(cfg, registry)
        manifest.config = cfg.to_dict()
        output = RUNNERS[cfg.kind](cfg, resolved, workers)
    except DivergenceError as e:
        logger.error(f"Divergence at step {e.step} (seed {e.seed}, stream {e.replicate}): {e}")
        manifest.partial = True
        manifest.exit_code = EXIT_DIVERGENCE
        manifest.error = str(e)
    except LangevinError as e:
        logger.error(f"Validation failed: {e}")
        manifest.partial = True
        manifest.exit_code = EXIT_VALIDATION
        manifest.error = str(e)
    else:
        files.append(write_rows(out / "results", cfg.output_format.value, output.columns, output.rows))
        files.append(write_json(out / "summary.json", output.summary))
        manifest.stream_ids = output.stream_ids
        manifest.messages = list(cfg.notes) + output.messages
        manifest.partial = output.partial
        manifest.exit_code = output.exit_code

    manifest.wall_time = time.time() - start
    manifest.files = [f.name for f in files] + ["manifest.json"]
    files.append(manifest.write(out))
    logger.info(f"Finished {cfg.kind.value} in {manifest.wall_time:.2f}s with exit code {manifest.exit_code}")
    return ExperimentResult(manifest.exit_code, out, files, manifest.error or "")

"""Experiment orchestration: settings schedules, trial generation, adversaries.

Two seeds with separate roles drive every experiment. ``settings_seed`` is
the parties' private key and governs only which context each trial is
measured in; ``master_seed`` governs everything the source and detectors do.
"""

import dataclasses
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
from nipype import logging

from . import __version__, analytic
from .estimator import (
    CertificationVerdict,
    ChshResult,
    certify,
    estimate_chsh,
    hoeffding_radius,
    mutual_information,
    rate_curve,
)
from .models import (
    OutcomeSource,
    PlaybackSource,
    PlaybackTape,
    SingletSource,
    make_source,
    planar_direction,
    record_tape,
)
from .timeline import (
    DetectionConfig,
    TickStream,
    TrialRecords,
    apply_detection,
    emit_ticks,
    match_coincidences,
    records_to_frame,
    tick_counts,
)
from .utils import (
    SCHEMA_VERSION,
    STREAM_DETECTION,
    STREAM_FORGERY,
    STREAM_FRESH_SCHEDULE,
    STREAM_JITTER,
    STREAM_SETTINGS,
    STREAM_SOURCE,
    STREAM_TAPE,
    derive_seed,
    make_rng,
    save_results,
    write_json,
)

LOGGER = logging.getLogger('nipype.workflow')

# Trials per RNG chunk; results do not depend on how chunks are spread over workers
CHUNK_SIZE = 1 << 16
# Above this many trials the trial table goes to a CSV sidecar
SPILL_THRESHOLD = 100_000


@dataclass(frozen=True)
class SourceSpec:
    """Which outcome source to wire in, with its parameters."""

    kind: str = 'quantum'
    theta_star: float = analytic.excess_extrema()[1]
    tape_file: str | None = None
    tape_theta: float = analytic.excess_extrema()[1]

    @classmethod
    def from_dict(cls, data: dict) -> 'SourceSpec':
        defaults = cls()
        return cls(
            kind=data.get('kind', defaults.kind),
            theta_star=float(
                defaults.theta_star if data.get('theta_star') is None else data['theta_star']
            ),
            tape_file=data.get('tape_file'),
            tape_theta=float(
                defaults.tape_theta if data.get('tape_theta') is None else data['tape_theta']
            ),
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ExperimentConfig:
    source: SourceSpec
    quad: analytic.SettingQuad
    n_trials: int
    detection: DetectionConfig
    master_seed: int
    settings_seed: int
    confidence: float = 0.99
    n_workers: int = 1
    match_ticks: bool = True

    def __post_init__(self):
        if self.n_trials <= 0:
            raise ValueError(f'n_trials must be positive, got {self.n_trials}')
        if not 0.0 < self.confidence < 1.0:
            raise ValueError(f'confidence must lie in (0, 1), got {self.confidence}')
        if self.master_seed < 0 or self.settings_seed < 0:
            raise ValueError('Seeds must be non-negative')
        if self.n_workers < 1:
            raise ValueError(f'n_workers must be >= 1, got {self.n_workers}')
        if self.master_seed == self.settings_seed:
            warnings.warn(
                f'master_seed and settings_seed are both {self.master_seed}; the '
                'settings schedule should come from an independent private key',
                stacklevel=3,
            )

    @classmethod
    def from_dict(cls, config: dict) -> 'ExperimentConfig':
        return cls(
            source=SourceSpec.from_dict(config.get('source', {})),
            quad=analytic.SettingQuad.from_dict(config['quad']),
            n_trials=int(config['n_trials']),
            detection=DetectionConfig.from_dict(config['detection']),
            master_seed=int(config['master_seed']),
            settings_seed=int(config['settings_seed']),
            confidence=float(config.get('confidence', 0.99)),
            n_workers=int(config.get('n_workers', 1)),
            match_ticks=bool(config.get('match_ticks', True)),
        )

    def to_dict(self) -> dict:
        return {
            'schema_version': SCHEMA_VERSION,
            'source': self.source.to_dict(),
            'quad': self.quad.to_dict(),
            'n_trials': self.n_trials,
            'detection': self.detection.to_dict(),
            'master_seed': self.master_seed,
            'settings_seed': self.settings_seed,
            'confidence': self.confidence,
            'n_workers': self.n_workers,
            'match_ticks': self.match_ticks,
        }

    def replace(self, **changes) -> 'ExperimentConfig':
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SweepConfig:
    points: int = 64
    n_per_point: int = 100_000
    sources: tuple[str, ...] = ('quantum', 'bomb')
    theta_star: float = analytic.excess_extrema()[1]

    def __post_init__(self):
        if self.points < 2:
            raise ValueError(f'A sweep needs at least 2 points, got {self.points}')
        if self.n_per_point <= 0:
            raise ValueError(f'n_per_point must be positive, got {self.n_per_point}')
        unknown = set(self.sources) - set(SWEEP_COLUMN_TAGS)
        if unknown or not self.sources:
            raise ValueError(f'Sweep sources must be drawn from {tuple(SWEEP_COLUMN_TAGS)}')

    @classmethod
    def from_dict(cls, data: dict) -> 'SweepConfig':
        defaults = cls()
        return cls(
            points=int(data.get('points', defaults.points)),
            n_per_point=int(data.get('n_per_point', defaults.n_per_point)),
            sources=tuple(data.get('sources', defaults.sources)),
            theta_star=float(
                defaults.theta_star if data.get('theta_star') is None else data['theta_star']
            ),
        )

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, math.pi, self.points)


@dataclass
class SettingsSchedule:
    """Per-trial setting choices: 0 selects a (b), 1 selects a' (b')."""

    alice: np.ndarray
    bob: np.ndarray
    settings_seed: int | None = None

    def __len__(self) -> int:
        return len(self.alice)

    @property
    def context(self) -> np.ndarray:
        return 2 * self.alice.astype(np.int64) + self.bob

    def frequencies(self) -> dict[str, float]:
        counts = np.bincount(self.context, minlength=len(analytic.CONTEXT_NAMES))
        return dict(zip(analytic.CONTEXT_NAMES, (counts / len(self)).tolist(), strict=True))


def build_schedule(settings_seed: int, n_trials: int) -> SettingsSchedule:
    """I.i.d. uniform contexts, fully determined by the private settings seed."""
    if n_trials <= 0:
        raise ValueError(f'n_trials must be positive, got {n_trials}')
    context = make_rng(settings_seed, STREAM_SETTINGS).integers(0, 4, n_trials)
    return SettingsSchedule(
        alice=(context // 2).astype(np.int8),
        bob=(context % 2).astype(np.int8),
        settings_seed=settings_seed,
    )


def schedule_directions(
    schedule: SettingsSchedule, quad: analytic.SettingQuad, start: int = 0, stop: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Analyzer unit vectors for a range of scheduled trials."""
    alice_angles = np.asarray(quad.alice_angles())[schedule.alice[start:stop]]
    bob_angles = np.asarray(quad.bob_angles())[schedule.bob[start:stop]]
    return planar_direction(alice_angles), planar_direction(bob_angles)


def build_source(config: ExperimentConfig, tape: PlaybackTape | None = None) -> OutcomeSource:
    """Wire the configured source.

    A playback source without an explicit tape or tape file gets a
    schedule-blind tape, recorded from the singlet at ``tape_theta``.
    """
    spec = config.source
    if spec.kind != 'playback':
        return make_source(spec.kind, theta_star=spec.theta_star)
    if tape is None and spec.tape_file is not None:
        tape = PlaybackTape.from_csv(spec.tape_file)
    if tape is None:
        tape = record_tape(
            SingletSource(),
            planar_direction(0.0),
            planar_direction(spec.tape_theta),
            config.n_trials,
            make_rng(config.master_seed, STREAM_TAPE),
            label='schedule-blind',
        )
    return make_source('playback', tape=tape)


def simulate_trials(
    config: ExperimentConfig, schedule: SettingsSchedule, source: OutcomeSource
) -> TrialRecords:
    """Generate and detect every scheduled trial.

    Trials are split into fixed chunks with their own generator streams, so
    the output is identical for any ``n_workers``. Playback sources are
    stateful and always run in a single thread.
    """
    if len(schedule) != config.n_trials:
        raise ValueError(
            f'Schedule has {len(schedule)} trials but the config asks for {config.n_trials}'
        )
    bounds = [
        (k, start, min(start + CHUNK_SIZE, config.n_trials))
        for k, start in enumerate(range(0, config.n_trials, CHUNK_SIZE))
    ]

    def run_chunk(chunk):
        k, start, stop = chunk
        a, b = schedule_directions(schedule, config.quad, start, stop)
        alice, bob = source.sample_many(a, b, make_rng(config.master_seed, STREAM_SOURCE, k))
        alice, bob = apply_detection(
            alice, bob, config.detection, make_rng(config.master_seed, STREAM_DETECTION, k)
        )
        return TrialRecords(
            trial_index=np.arange(start, stop),
            alice_setting=schedule.alice[start:stop],
            bob_setting=schedule.bob[start:stop],
            alice_outcome=alice,
            bob_outcome=bob,
        )

    # Threads within the node; nipype plugins only parallelize whole experiments
    if config.n_workers == 1 or isinstance(source, PlaybackSource):
        batches = [run_chunk(chunk) for chunk in bounds]
    else:
        with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
            batches = list(pool.map(run_chunk, bounds))
    return TrialRecords.concatenate(batches)


def coincidence_summary(
    records: TrialRecords, streams: tuple[TickStream, TickStream], window: float
) -> dict:
    """Match the tick streams and report matched rates per context."""
    stream_a, stream_b = streams
    matched = match_coincidences(stream_a.sort_by_time(), stream_b.sort_by_time(), window)
    true_pairs = int(np.count_nonzero((records.alice_outcome == 1) & (records.bob_outcome == 1)))
    alice_trials = matched.stream_a.trial_index[matched.index_a]
    matched_context = records.context[np.searchsorted(records.trial_index, alice_trials)]
    trials_per_context = np.bincount(records.context, minlength=4)
    matched_per_context = np.bincount(matched_context, minlength=4)
    return {
        'n_emitted': len(records),
        'true_coincidences': true_pairs,
        'matched_coincidences': len(matched),
        'sync_rate': len(matched) / len(records),
        'sync_rate_per_context': {
            name: (float(m / t) if t else None)
            for name, m, t in zip(
                analytic.CONTEXT_NAMES,
                matched_per_context.tolist(),
                trials_per_context.tolist(),
                strict=True,
            )
        },
    }


@dataclass
class ExperimentRecord:
    config: ExperimentConfig
    source: dict
    schedule: SettingsSchedule
    records: TrialRecords
    chsh: ChshResult
    verdict: CertificationVerdict
    streams: tuple[TickStream, TickStream] | None = None
    coincidences: dict | None = None
    metadata: dict = field(default_factory=dict)

    def to_report(self) -> dict:
        """Deterministic report tree; wall-clock metadata is kept out of it."""
        return {
            'schema_version': SCHEMA_VERSION,
            'config': self.config.to_dict(),
            'source': self.source,
            'schedule': {'n_trials': len(self.schedule), 'frequencies': self.schedule.frequencies()},
            'tick_counts': tick_counts(self.records),
            'coincidences': self.coincidences,
            'chsh': self.chsh.to_dict(),
            'verdict': self.verdict.to_dict(),
        }

    def save(
        self, output_dir: str | Path, stem: str = 'experiment', spill_threshold: int = SPILL_THRESHOLD
    ) -> dict[str, Path]:
        """Write ``<stem>.json``, ``<stem>_runtime.json`` and maybe a trial CSV."""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        report = self.to_report()
        paths = {}
        trials = records_to_frame(self.records, self.streams)
        if len(self.records) > spill_threshold:
            paths['trials'] = save_results(trials, output_dir / f'{stem}_trials.csv', 'csv')
            report['trials'] = {'sidecar': paths['trials'].name}
        else:
            report['trials'] = {col: trials[col].tolist() for col in trials.columns}
            report['trials']['timestamp_ns'] = [
                None if math.isnan(stamp) else stamp for stamp in report['trials']['timestamp_ns']
            ]
        paths['report'] = write_json(report, output_dir / f'{stem}.json')
        paths['runtime'] = write_json(self.metadata, output_dir / f'{stem}_runtime.json')
        return paths


def run_experiment(
    config: ExperimentConfig,
    tape: PlaybackTape | None = None,
    schedule: SettingsSchedule | None = None,
    output_dir: str | Path | None = None,
    stem: str = 'experiment',
) -> ExperimentRecord:
    """Schedule, sample, detect, estimate CHSH and certify one experiment.

    Parameters
    ----------
    config : ExperimentConfig
        Complete experiment description.
    tape : PlaybackTape, optional
        Tape for a playback source; overrides ``config.source.tape_file``.
    schedule : SettingsSchedule, optional
        Pre-built schedule; by default derived from ``config.settings_seed``.
    output_dir : str or Path, optional
        If given, the record is saved there under ``stem``.

    Returns
    -------
    ExperimentRecord
    """
    started = datetime.now(timezone.utc)
    tick = time.perf_counter()

    if schedule is None:
        schedule = build_schedule(config.settings_seed, config.n_trials)
    source = build_source(config, tape)
    LOGGER.info(
        'Running %d trials from the %s source (master seed %d, settings seed %d)',
        config.n_trials,
        source.name,
        config.master_seed,
        config.settings_seed,
    )
    records = simulate_trials(config, schedule, source)
    chsh = estimate_chsh(records, config.quad, config.confidence)
    verdict = certify(chsh)
    streams = coincidences = None
    if config.match_ticks:
        streams = emit_ticks(records, config.detection, make_rng(config.master_seed, STREAM_JITTER))
        coincidences = coincidence_summary(records, streams, config.detection.coincidence_window)
    LOGGER.info(
        'S = %.4f, radius = %.4f, certified = %s', chsh.s_hat, chsh.confidence_radius, verdict.certified
    )

    record = ExperimentRecord(
        config=config,
        source=source.describe(),
        schedule=schedule,
        records=records,
        chsh=chsh,
        verdict=verdict,
        streams=streams,
        coincidences=coincidences,
        metadata={
            'started_at': started.isoformat(),
            'elapsed_s': time.perf_counter() - tick,
            'entangled_clock_version': __version__,
            'numpy_version': np.__version__,
        },
    )
    if output_dir is not None:
        record.save(output_dir, stem)
    return record


def forge_tapes(
    schedule: SettingsSchedule, quad: analytic.SettingQuad, rng: np.random.Generator
) -> PlaybackTape:
    """Forge a tape pair for an adversary who knows the settings schedule.

    Every trial is drawn from the singlet distribution at the relative angle
    the schedule will actually use, so replaying it against that schedule
    reproduces quantum statistics context by context.
    """
    a, b = schedule_directions(schedule, quad)
    alice, bob = SingletSource().sample_many(a, b, rng)
    return PlaybackTape(alice=alice, bob=bob, label='forged')


def fresh_settings_seed(settings_seed: int) -> int:
    return derive_seed(settings_seed, STREAM_FRESH_SCHEDULE)


def forge_demo(
    config: ExperimentConfig, output_dir: str | Path | None = None
) -> tuple[ExperimentRecord, ExperimentRecord]:
    """Replay forged tapes against the schedule they were forged for, then a fresh one."""
    schedule = build_schedule(config.settings_seed, config.n_trials)
    tape = forge_tapes(schedule, config.quad, make_rng(config.master_seed, STREAM_FORGERY))
    playback = config.replace(source=dataclasses.replace(config.source, kind='playback'))

    known = run_experiment(playback, tape=tape, schedule=schedule)
    tape.rewind()
    fresh = run_experiment(
        playback.replace(settings_seed=fresh_settings_seed(config.settings_seed)), tape=tape
    )
    if output_dir is not None:
        known.save(output_dir, 'forgery_known_schedule')
        fresh.save(output_dir, 'forgery_fresh_schedule')
    return known, fresh


def settings_independence(schedule: SettingsSchedule, tape: PlaybackTape) -> dict:
    """Mutual information between scheduled contexts and tape outcome pairs."""
    n = min(len(schedule), len(tape))
    outcome = 2 * (tape.alice[:n] == 1).astype(np.int64) + (tape.bob[:n] == 1)
    info, bias = mutual_information(schedule.context[:n], outcome)
    return {'n': n, 'mutual_information_bits': info, 'bias_bits': bias}


def warn_if_underpowered(n_trials: int, confidence: float, detection: DetectionConfig | None = None) -> float:
    """Warn when even a perfect singlet could not be certified at this size.

    Returns
    -------
    float
        The Hoeffding radius expected for ``n_trials`` split evenly over the
        four contexts.
    """
    detection = detection or DetectionConfig()
    per_context = max(1, int(n_trials * detection.eta_a * detection.eta_b / 4))
    radius = hoeffding_radius([per_context] * 4, confidence)
    if radius >= analytic.TSIRELSON_BOUND - analytic.CLASSICAL_BOUND:
        warnings.warn(
            f'With {n_trials} trials the confidence radius is about {radius:.3f}; '
            'no source can be certified at this sample size',
            stacklevel=2,
        )
    return radius


SWEEP_COLUMN_TAGS = {'quantum': 'qm', 'bomb': 'cl', 'mimic': 'mimic'}


def _exact_rate(kind: str, theta: float, sweep_cfg: SweepConfig, cfg: DetectionConfig) -> float:
    efficiency = cfg.eta_a * cfg.eta_b
    if kind == 'quantum':
        return analytic.expected_measured_rate(theta, cfg.eta_a, cfg.eta_b)
    if kind == 'bomb':
        return efficiency * analytic.cl_sync_rate(theta)
    return efficiency * analytic.qm_sync_rate(sweep_cfg.theta_star)


def sweep(
    sweep_cfg: SweepConfig, cfg: DetectionConfig | None = None, seed: int = 0
) -> pd.DataFrame:
    """Monte Carlo and exact sync-rate curves on an even grid over [0, pi].

    All sources share ``seed``, so the excess columns come from paired
    samples.
    """
    cfg = cfg or DetectionConfig()
    grid = sweep_cfg.grid()
    table = {'theta': grid}
    for kind in sweep_cfg.sources:
        tag = SWEEP_COLUMN_TAGS[kind]
        LOGGER.info('Sweeping %d angles for the %s source', len(grid), kind)
        source = make_source(kind, theta_star=sweep_cfg.theta_star)
        points = rate_curve(source, grid, sweep_cfg.n_per_point, cfg, seed)
        table[f'r_{tag}_mc'] = np.array([p.rate for p in points])
        table[f'r_{tag}_exact'] = np.array([_exact_rate(kind, t, sweep_cfg, cfg) for t in grid])
        table[f'stderr_{tag}'] = np.array([p.std_err for p in points])
    if {'quantum', 'bomb'} <= set(sweep_cfg.sources):
        table['delta_mc'] = table['r_qm_mc'] - table['r_cl_mc']
        table['delta_exact'] = table['r_qm_exact'] - table['r_cl_exact']
        table['stderr_delta'] = np.hypot(table['stderr_qm'], table['stderr_cl'])
    return pd.DataFrame(table)


def cardinal_check(n_per_point: int, seed: int = 0, cfg: DetectionConfig | None = None) -> pd.DataFrame:
    """Sync rates of both sources at theta = 0, pi/2, pi against the exact values."""
    cfg = cfg or DetectionConfig()
    thetas = [0.0, math.pi / 2, math.pi]
    rows = []
    for kind in ('quantum', 'bomb'):
        points = rate_curve(make_source(kind), thetas, n_per_point, cfg, seed)
        for point in points:
            exact = _exact_rate(kind, point.theta, SweepConfig(), cfg)
            std_err = math.sqrt(exact * (1.0 - exact) / n_per_point)
            deviation = abs(point.rate - exact)
            rows.append(
                {
                    'source': kind,
                    'theta': point.theta,
                    'rate_mc': point.rate,
                    'rate_exact': exact,
                    'stderr': std_err,
                    'within_4se': bool(deviation <= 4.0 * std_err),
                }
            )
    return pd.DataFrame(rows)


def excess_summary(n_per_point: int, seed: int = 0) -> dict:
    """Extremal angles of the synchronization excess, exact and simulated."""
    theta_1, theta_2 = analytic.excess_extrema()
    thetas = [theta_1, theta_2]
    quantum = rate_curve(make_source('quantum'), thetas, n_per_point, seed=seed)
    bomb = rate_curve(make_source('bomb'), thetas, n_per_point, seed=seed)
    summary = {}
    for name, theta, q, c in zip(('theta_1', 'theta_2'), thetas, quantum, bomb, strict=True):
        summary[name] = {
            'theta': theta,
            'theta_deg': math.degrees(theta),
            'r_qm_exact': analytic.qm_sync_rate(theta),
            'r_cl_exact': analytic.cl_sync_rate(theta),
            'delta_exact': analytic.sync_excess(theta),
            'relative_speedup_exact': analytic.relative_speedup(theta),
            'r_qm_mc': q.rate,
            'r_cl_mc': c.rate,
            'delta_mc': q.rate - c.rate,
            'stderr_delta': math.hypot(q.std_err, c.std_err),
            'relative_speedup_mc': (q.rate - c.rate) / c.rate,
        }
    summary['n_per_point'] = n_per_point
    summary['seed'] = seed
    return summary

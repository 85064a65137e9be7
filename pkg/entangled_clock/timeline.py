"""Tick streams, detector losses and coincidence matching.

A party's clock ticks on a +1 outcome. Outcomes pass through detector
efficiency thinning (either side may become a no-click), ticks get a
jittered timestamp on the pair-emission schedule, and the two streams are
matched within a coincidence window.
"""

import math
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
import pandas as pd

NO_CLICK = 0
PARTIES = ('A', 'B')


@dataclass(frozen=True)
class DetectionConfig:
    """Detector and timing parameters, times in nanoseconds."""

    eta_a: float = 1.0
    eta_b: float = 1.0
    jitter_sigma: float = 1.0
    pair_period: float = 100.0
    coincidence_window: float = 5.0

    def __post_init__(self):
        for name in ('eta_a', 'eta_b'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f'{name} must lie in [0, 1], got {value}')
        if not (math.isfinite(self.jitter_sigma) and self.jitter_sigma >= 0.0):
            raise ValueError(f'jitter_sigma must be >= 0, got {self.jitter_sigma}')
        if not (math.isfinite(self.pair_period) and self.pair_period > 0.0):
            raise ValueError(f'pair_period must be > 0, got {self.pair_period}')
        if not (math.isfinite(self.coincidence_window) and self.coincidence_window > 0.0):
            raise ValueError(
                f'coincidence_window must be > 0, got {self.coincidence_window}'
            )

    @classmethod
    def from_dict(cls, data: dict) -> 'DetectionConfig':
        return cls(**{key: float(value) for key, value in data.items()})

    def to_dict(self) -> dict:
        return {
            'eta_a': self.eta_a,
            'eta_b': self.eta_b,
            'jitter_sigma': self.jitter_sigma,
            'pair_period': self.pair_period,
            'coincidence_window': self.coincidence_window,
        }


@dataclass(frozen=True)
class TickEvent:
    trial_index: int
    timestamp: float
    party: str


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    alice_setting: int
    bob_setting: int
    alice_outcome: int
    bob_outcome: int


@dataclass
class TrialRecords:
    """Columnar batch of trials.

    Settings are indices into the party's two analyzer angles (0 for the
    unprimed, 1 for the primed setting); outcomes are +1, -1 or ``NO_CLICK``.
    """

    trial_index: np.ndarray
    alice_setting: np.ndarray
    bob_setting: np.ndarray
    alice_outcome: np.ndarray
    bob_outcome: np.ndarray

    def __post_init__(self):
        self.trial_index = np.asarray(self.trial_index, dtype=np.int64)
        self.alice_setting = np.asarray(self.alice_setting, dtype=np.int8)
        self.bob_setting = np.asarray(self.bob_setting, dtype=np.int8)
        self.alice_outcome = np.asarray(self.alice_outcome, dtype=np.int8)
        self.bob_outcome = np.asarray(self.bob_outcome, dtype=np.int8)
        n = len(self.trial_index)
        for name in ('alice_setting', 'bob_setting', 'alice_outcome', 'bob_outcome'):
            if len(getattr(self, name)) != n:
                raise ValueError(f'Column {name} does not have {n} entries')

    def __len__(self) -> int:
        return len(self.trial_index)

    def __iter__(self) -> Iterator[TrialRecord]:
        for row in zip(
            self.trial_index.tolist(),
            self.alice_setting.tolist(),
            self.bob_setting.tolist(),
            self.alice_outcome.tolist(),
            self.bob_outcome.tolist(),
            strict=True,
        ):
            yield TrialRecord(*row)

    @property
    def context(self) -> np.ndarray:
        """Context index 0..3 in CHSH order: (a,b), (a,b'), (a',b), (a',b')."""
        return 2 * self.alice_setting.astype(np.int64) + self.bob_setting

    def subset(self, mask: np.ndarray) -> 'TrialRecords':
        return TrialRecords(
            trial_index=self.trial_index[mask],
            alice_setting=self.alice_setting[mask],
            bob_setting=self.bob_setting[mask],
            alice_outcome=self.alice_outcome[mask],
            bob_outcome=self.bob_outcome[mask],
        )

    @classmethod
    def concatenate(cls, batches: list['TrialRecords']) -> 'TrialRecords':
        return cls(
            *(
                np.concatenate([getattr(batch, name) for batch in batches])
                for name in (
                    'trial_index',
                    'alice_setting',
                    'bob_setting',
                    'alice_outcome',
                    'bob_outcome',
                )
            )
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                'trial': self.trial_index,
                'alice_setting': self.alice_setting,
                'bob_setting': self.bob_setting,
                'alice_outcome': self.alice_outcome,
                'bob_outcome': self.bob_outcome,
            }
        )


@dataclass
class TickStream:
    """One party's ticks, columnar."""

    party: str
    trial_index: np.ndarray
    timestamp: np.ndarray

    def __len__(self) -> int:
        return len(self.trial_index)

    def events(self) -> Iterator[TickEvent]:
        for trial, stamp in zip(self.trial_index.tolist(), self.timestamp.tolist(), strict=True):
            yield TickEvent(trial_index=trial, timestamp=stamp, party=self.party)

    def is_time_sorted(self) -> bool:
        return bool(np.all(np.diff(self.timestamp) >= 0.0))

    def sort_by_time(self) -> 'TickStream':
        order = np.argsort(self.timestamp, kind='stable')
        return TickStream(self.party, self.trial_index[order], self.timestamp[order])


def apply_detection(
    alice, bob, cfg: DetectionConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Thin each side's outcomes to ``NO_CLICK`` with probability ``1 - eta``."""
    alice = np.atleast_1d(np.asarray(alice, dtype=np.int8))
    bob = np.atleast_1d(np.asarray(bob, dtype=np.int8))
    # both sides are drawn together so the stream layout does not depend on eta
    lost = rng.random((2, len(alice)))
    alice = np.where(lost[0] < cfg.eta_a, alice, NO_CLICK).astype(np.int8)
    bob = np.where(lost[1] < cfg.eta_b, bob, NO_CLICK).astype(np.int8)
    return alice, bob


def emit_ticks(
    records: TrialRecords, cfg: DetectionConfig, rng: np.random.Generator
) -> tuple[TickStream, TickStream]:
    """Timestamp every +1 outcome on the pair-emission schedule.

    A tick for trial ``i`` lands at ``i * pair_period`` plus Gaussian jitter,
    clamped at zero. Streams come back in trial order.
    """
    if np.any(np.diff(records.trial_index) <= 0):
        raise ValueError('Trial records must be ordered by strictly increasing trial_index')

    streams = []
    for party, outcome in zip(PARTIES, (records.alice_outcome, records.bob_outcome), strict=True):
        trials = records.trial_index[outcome == 1]
        stamps = trials * cfg.pair_period + rng.normal(0.0, cfg.jitter_sigma, len(trials))
        streams.append(TickStream(party, trials, np.maximum(stamps, 0.0)))
    return streams[0], streams[1]


@dataclass
class Coincidences:
    """Matched ticks as index pairs into the two streams."""

    stream_a: TickStream
    stream_b: TickStream
    index_a: np.ndarray
    index_b: np.ndarray

    def __len__(self) -> int:
        return len(self.index_a)

    def pairs(self) -> list[tuple[TickEvent, TickEvent]]:
        events_a = list(self.stream_a.events())
        events_b = list(self.stream_b.events())
        return [(events_a[i], events_b[j]) for i, j in zip(self.index_a, self.index_b, strict=True)]

    def trial_pairs(self) -> list[tuple[int, int]]:
        return list(
            zip(
                self.stream_a.trial_index[self.index_a].tolist(),
                self.stream_b.trial_index[self.index_b].tolist(),
                strict=True,
            )
        )


def match_coincidences(
    stream_a: TickStream, stream_b: TickStream, window: float
) -> Coincidences:
    """Greedy earliest-first pairing of ticks closer than ``window``.

    Each tick is used at most once; the result is ordered by Alice's
    timestamps.
    """
    if window < 0.0:
        raise ValueError(f'Coincidence window must be >= 0, got {window}')
    if not (stream_a.is_time_sorted() and stream_b.is_time_sorted()):
        raise ValueError('Tick streams must be sorted by timestamp')

    times_a = stream_a.timestamp.tolist()
    times_b = stream_b.timestamp.tolist()
    index_a, index_b = [], []
    i = j = 0
    while i < len(times_a) and j < len(times_b):
        dt = times_a[i] - times_b[j]
        if dt > window:
            j += 1
        elif -dt > window:
            i += 1
        else:
            index_a.append(i)
            index_b.append(j)
            i += 1
            j += 1
    return Coincidences(
        stream_a,
        stream_b,
        np.asarray(index_a, dtype=np.int64),
        np.asarray(index_b, dtype=np.int64),
    )


def sync_rate_estimate(observed: TrialRecords | Coincidences, n_emitted: int) -> float:
    """Coincident ticks per emitted pair.

    ``observed`` is either trial records (a coincidence is a +1/+1 trial) or
    the output of :func:`match_coincidences`.
    """
    if n_emitted <= 0:
        raise ValueError(f'n_emitted must be positive, got {n_emitted}')
    if isinstance(observed, TrialRecords):
        count = int(np.count_nonzero((observed.alice_outcome == 1) & (observed.bob_outcome == 1)))
    else:
        count = len(observed)
    return count / n_emitted


def tick_counts(records: TrialRecords) -> dict[str, dict[str, int]]:
    """Ticks, non-ticks and no-clicks per party."""
    counts = {}
    for party, outcome in zip(PARTIES, (records.alice_outcome, records.bob_outcome), strict=True):
        counts[party] = {
            'ticks': int(np.count_nonzero(outcome == 1)),
            'non_ticks': int(np.count_nonzero(outcome == -1)),
            'no_clicks': int(np.count_nonzero(outcome == NO_CLICK)),
        }
    return counts


def records_to_frame(
    records: TrialRecords, streams: tuple[TickStream, TickStream] | None = None
) -> pd.DataFrame:
    """Long-format table, one row per trial and party.

    Columns are ``trial, party, setting, outcome, timestamp_ns``; the
    timestamp is missing for non-ticks, no-clicks, or when no streams are
    given.
    """
    frames = []
    columns = (
        (records.alice_setting, records.alice_outcome),
        (records.bob_setting, records.bob_outcome),
    )
    for k, (party, (setting, outcome)) in enumerate(zip(PARTIES, columns, strict=True)):
        stamps = np.full(len(records), np.nan)
        if streams is not None:
            position = np.searchsorted(records.trial_index, streams[k].trial_index)
            stamps[position] = streams[k].timestamp
        frames.append(
            pd.DataFrame(
                {
                    'trial': records.trial_index,
                    'party': party,
                    'setting': setting,
                    'outcome': outcome,
                    'timestamp_ns': stamps,
                }
            )
        )
    return (
        pd.concat(frames, ignore_index=True)
        .sort_values(['trial', 'party'], kind='stable')
        .reset_index(drop=True)
    )

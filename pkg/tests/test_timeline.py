"""Tests for entangled_clock.timeline module."""

import math

import numpy as np
import pytest

from entangled_clock import analytic
from entangled_clock.models import SingletSource, planar_direction
from entangled_clock.timeline import (
    NO_CLICK,
    DetectionConfig,
    TickStream,
    TrialRecords,
    apply_detection,
    emit_ticks,
    match_coincidences,
    records_to_frame,
    sync_rate_estimate,
    tick_counts,
)
from entangled_clock.utils import make_rng


def _records(alice, bob, trial_index=None):
    n = len(alice)
    return TrialRecords(
        trial_index=np.arange(n) if trial_index is None else trial_index,
        alice_setting=np.zeros(n),
        bob_setting=np.zeros(n),
        alice_outcome=alice,
        bob_outcome=bob,
    )


def _singlet_records(theta, n, cfg, seed):
    a = np.repeat(planar_direction(0.0)[None, :], n, axis=0)
    b = np.repeat(planar_direction(theta)[None, :], n, axis=0)
    alice, bob = SingletSource().sample_many(a, b, make_rng(seed, 0))
    alice, bob = apply_detection(alice, bob, cfg, make_rng(seed, 1))
    return _records(alice, bob)


class TestDetectionConfig:
    """Detector and timing parameters."""

    def test_defaults(self):
        """Defaults describe ideal detectors with 1 ns jitter."""
        cfg = DetectionConfig()
        assert cfg.to_dict() == {
            'eta_a': 1.0,
            'eta_b': 1.0,
            'jitter_sigma': 1.0,
            'pair_period': 100.0,
            'coincidence_window': 5.0,
        }
        assert DetectionConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize(
        ('field', 'value'),
        [('eta_a', 1.2), ('eta_b', -0.1), ('jitter_sigma', -1.0), ('pair_period', 0.0)],
    )
    def test_rejects_invalid(self, field, value):
        """Out-of-range fields are named in the error."""
        with pytest.raises(ValueError, match=field):
            DetectionConfig(**{field: value})


class TestApplyDetection:
    """Efficiency losses."""

    def test_perfect_detectors_keep_everything(self):
        """With eta = 1 the outcomes pass through unchanged."""
        alice = np.array([1, -1, 1, -1])
        bob = np.array([-1, -1, 1, 1])
        out_a, out_b = apply_detection(alice, bob, DetectionConfig(), make_rng(0))
        np.testing.assert_array_equal(out_a, alice)
        np.testing.assert_array_equal(out_b, bob)

    def test_dead_detector_loses_everything(self):
        """With eta = 0 every trial is a no-click on that side only."""
        alice = np.ones(100)
        out_a, out_b = apply_detection(alice, alice, DetectionConfig(eta_a=0.0), make_rng(0))
        assert np.all(out_a == NO_CLICK)
        assert np.all(out_b == 1)

    def test_lossy_rate_at_pi(self):
        """eta_A = eta_B = 0.9 at theta = pi gives 0.9 * 0.9 / 2 per emitted pair."""
        cfg = DetectionConfig(eta_a=0.9, eta_b=0.9)
        records = _singlet_records(math.pi, 1_000_000, cfg, seed=1)
        assert sync_rate_estimate(records, len(records)) == pytest.approx(0.405, abs=0.003)

    @pytest.mark.parametrize('eta_b', [0.5, 0.8, 0.9])
    @pytest.mark.parametrize('eta_a', [0.5, 0.8, 0.9])
    def test_measured_rate_scaling(self, eta_a, eta_b):
        """The measured rate is eta_A * eta_B times the ideal quantum rate."""
        n = 400_000
        theta = 2.4515
        cfg = DetectionConfig(eta_a=eta_a, eta_b=eta_b)
        records = _singlet_records(theta, n, cfg, seed=int(100 * eta_a + 10 * eta_b))
        expected = eta_a * eta_b * analytic.qm_sync_rate(theta)
        std_err = math.sqrt(expected * (1.0 - expected) / n)
        assert abs(sync_rate_estimate(records, n) - expected) <= 4 * std_err

    def test_tick_conservation(self):
        """Ticks, non-ticks and no-clicks add up to the trial count."""
        cfg = DetectionConfig(eta_a=0.7, eta_b=0.8)
        records = _singlet_records(1.0, 10_000, cfg, seed=2)
        for counts in tick_counts(records).values():
            assert counts['ticks'] + counts['non_ticks'] + counts['no_clicks'] == 10_000
            assert counts['no_clicks'] > 0


class TestEmitTicks:
    """Tick streams from trial records."""

    def test_only_plus_one_ticks(self):
        """Only +1 outcomes produce ticks."""
        records = _records([1, -1, 1, NO_CLICK], [1, 1, -1, -1])
        stream_a, stream_b = emit_ticks(records, DetectionConfig(), make_rng(3))
        np.testing.assert_array_equal(stream_a.trial_index, [0, 2])
        np.testing.assert_array_equal(stream_b.trial_index, [0, 1])
        assert [event.party for event in stream_a.events()] == ['A', 'A']

    def test_timestamps_follow_schedule(self):
        """Without jitter ticks land on multiples of the pair period."""
        records = _records(np.ones(1000, dtype=int), np.ones(1000, dtype=int))
        cfg = DetectionConfig(jitter_sigma=0.0, pair_period=10.0)
        stream_a, _ = emit_ticks(records, cfg, make_rng(4))
        np.testing.assert_array_equal(stream_a.timestamp, np.arange(1000) * 10.0)

    def test_first_tick_clamped_at_zero(self):
        """Jitter never pushes a tick before time zero."""
        records = _records(np.ones(1, dtype=int), np.ones(1, dtype=int))
        stream_a, stream_b = emit_ticks(records, DetectionConfig(jitter_sigma=50.0), make_rng(5))
        assert stream_a.timestamp[0] >= 0.0
        assert stream_b.timestamp[0] >= 0.0

    def test_requires_increasing_trials(self):
        """Trial indices must be strictly increasing."""
        records = _records([1, 1], [1, 1], trial_index=[1, 0])
        with pytest.raises(ValueError, match='strictly increasing'):
            emit_ticks(records, DetectionConfig(), make_rng(6))


class TestMatchCoincidences:
    """Greedy window matching of the two tick streams."""

    def test_window_edges(self):
        """Ticks 4 ns and 5 ns apart match; 6 ns apart do not."""
        stream_a = TickStream('A', np.array([0, 1, 2]), np.array([0.0, 100.0, 200.0]))
        stream_b = TickStream('B', np.array([0, 1, 2]), np.array([4.0, 106.0, 195.0]))
        matched = match_coincidences(stream_a, stream_b, window=5.0)
        assert matched.trial_pairs() == [(0, 0), (2, 2)]
        assert len(matched.pairs()) == 2

    def test_each_tick_used_once(self):
        """One of Alice's ticks never pairs with two of Bob's."""
        stream_a = TickStream('A', np.array([0]), np.array([10.0]))
        stream_b = TickStream('B', np.array([0, 1]), np.array([9.0, 11.0]))
        matched = match_coincidences(stream_a, stream_b, window=5.0)
        assert len(matched) == 1

    def test_rejects_unsorted(self):
        """Streams must be time-sorted and the window non-negative."""
        stream_a = TickStream('A', np.array([0, 1]), np.array([5.0, 1.0]))
        stream_b = TickStream('B', np.array([0]), np.array([1.0]))
        with pytest.raises(ValueError, match='sorted'):
            match_coincidences(stream_a, stream_b, window=5.0)
        with pytest.raises(ValueError, match='window'):
            match_coincidences(stream_a.sort_by_time(), stream_b, window=-1.0)

    def test_exact_count_without_jitter(self):
        """Ideal detectors and no jitter match exactly the (+1, +1) trials."""
        cfg = DetectionConfig(jitter_sigma=0.0)
        records = _singlet_records(2.4515, 100_000, cfg, seed=9)
        stream_a, stream_b = emit_ticks(records, cfg, make_rng(9, 2))
        matched = match_coincidences(stream_a, stream_b, cfg.coincidence_window)
        both_plus = (records.alice_outcome == 1) & (records.bob_outcome == 1)
        assert len(matched) == int(np.count_nonzero(both_plus))
        assert all(a == b for a, b in matched.trial_pairs())

    def test_symmetric_under_party_swap(self):
        """Swapping the streams yields the same matched trial pairs."""
        cfg = DetectionConfig(jitter_sigma=3.0)
        records = _singlet_records(2.0, 50_000, cfg, seed=10)
        stream_a, stream_b = (s.sort_by_time() for s in emit_ticks(records, cfg, make_rng(10, 2)))
        forward = match_coincidences(stream_a, stream_b, cfg.coincidence_window)
        backward = match_coincidences(stream_b, stream_a, cfg.coincidence_window)
        assert sorted(forward.trial_pairs()) == sorted((a, b) for b, a in backward.trial_pairs())

    def test_zero_window(self):
        """With jitter and a zero window essentially nothing matches."""
        cfg = DetectionConfig()
        records = _singlet_records(2.4515, 100_000, cfg, seed=11)
        stream_a, stream_b = (s.sort_by_time() for s in emit_ticks(records, cfg, make_rng(11, 2)))
        # Only the first trial can tie, when both jittered times clamp to 0
        assert len(match_coincidences(stream_a, stream_b, window=0.0)) <= 1

    def test_recovers_true_coincidences(self):
        """Jitter 1 ns, window 5 ns, period 100 ns recovers > 99.9% of pairs."""
        cfg = DetectionConfig()
        records = _singlet_records(2.4515, 100_000, cfg, seed=7)
        streams = emit_ticks(records, cfg, make_rng(7, 2))
        matched = match_coincidences(
            streams[0].sort_by_time(), streams[1].sort_by_time(), cfg.coincidence_window
        )
        true_pairs = set(np.flatnonzero((records.alice_outcome == 1) & (records.bob_outcome == 1)))
        recovered = {a for a, b in matched.trial_pairs() if a == b and a in true_pairs}
        assert len(recovered) / len(true_pairs) > 0.999
        assert sync_rate_estimate(matched, len(records)) == pytest.approx(
            sync_rate_estimate(records, len(records)), rel=1e-3
        )

    def test_sync_rate_requires_emitted(self):
        """The rate needs a positive number of emitted pairs."""
        with pytest.raises(ValueError, match='n_emitted'):
            sync_rate_estimate(_records([1], [1]), 0)


class TestTrialRecords:
    """Columnar trial storage."""

    def test_context_order(self):
        """Context index is 2 * alice_setting + bob_setting."""
        records = TrialRecords(
            trial_index=[0, 1, 2, 3],
            alice_setting=[0, 0, 1, 1],
            bob_setting=[0, 1, 0, 1],
            alice_outcome=[1, 1, 1, 1],
            bob_outcome=[1, 1, 1, 1],
        )
        np.testing.assert_array_equal(records.context, [0, 1, 2, 3])
        assert len(records.subset(records.context > 1)) == 2
        assert [r.trial_index for r in records] == [0, 1, 2, 3]

    def test_concatenate(self):
        """Batches join in order."""
        first = _records([1], [-1])
        second = _records([-1], [1], trial_index=[1])
        merged = TrialRecords.concatenate([first, second])
        np.testing.assert_array_equal(merged.trial_index, [0, 1])
        np.testing.assert_array_equal(merged.alice_outcome, [1, -1])

    def test_column_lengths_checked(self):
        """All columns must have the same length."""
        with pytest.raises(ValueError, match='entries'):
            TrialRecords([0, 1], [0], [0, 0], [1, 1], [1, 1])

    def test_long_frame(self):
        """One row per party and trial, with timestamps only for ticks."""
        records = _records([1, -1, NO_CLICK], [1, 1, -1])
        cfg = DetectionConfig(jitter_sigma=0.0)
        streams = emit_ticks(records, cfg, make_rng(8))
        df = records_to_frame(records, streams)
        assert list(df.columns) == ['trial', 'party', 'setting', 'outcome', 'timestamp_ns']
        assert len(df) == 6
        assert df['party'].tolist() == ['A', 'B'] * 3
        ticks = df[df['outcome'] == 1]
        np.testing.assert_array_equal(ticks['timestamp_ns'], ticks['trial'] * 100.0)
        assert df[df['outcome'] != 1]['timestamp_ns'].isna().all()

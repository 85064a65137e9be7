"""Tests for entangled_clock.estimator module."""

import math

import numpy as np
import pytest

from entangled_clock import analytic
from entangled_clock.estimator import (
    STATISTICAL_TEST,
    ChshResult,
    CorrelationEstimate,
    CorrelationTally,
    InsufficientDataError,
    binomial_std_err,
    certify,
    chsh_from_tallies,
    chsh_report,
    estimate_chsh,
    estimate_correlation,
    hoeffding_radius,
    mutual_information,
    rate_curve,
)
from entangled_clock.models import PeresBombSource, SingletSource, planar_direction
from entangled_clock.timeline import DetectionConfig, TrialRecords
from entangled_clock.utils import make_rng


def _records(alice, bob, alice_setting=None, bob_setting=None):
    n = len(alice)
    return TrialRecords(
        trial_index=np.arange(n),
        alice_setting=np.zeros(n) if alice_setting is None else alice_setting,
        bob_setting=np.zeros(n) if bob_setting is None else bob_setting,
        alice_outcome=alice,
        bob_outcome=bob,
    )


def _fixed_context_records(source, theta, n, seed):
    a = np.repeat(planar_direction(0.0)[None, :], n, axis=0)
    b = np.repeat(planar_direction(theta)[None, :], n, axis=0)
    alice, bob = source.sample_many(a, b, make_rng(seed))
    return _records(alice, bob)


def _balanced_chsh_records(source, quad, n_per_context, seed):
    """n_per_context trials in each of the four contexts, drawn at the quad's angles."""
    alice_setting = np.repeat([0, 0, 1, 1], n_per_context)
    bob_setting = np.repeat([0, 1, 0, 1], n_per_context)
    a = planar_direction(np.asarray(quad.alice_angles())[alice_setting])
    b = planar_direction(np.asarray(quad.bob_angles())[bob_setting])
    rng = make_rng(*seed) if isinstance(seed, tuple) else make_rng(seed)
    alice, bob = source.sample_many(a, b, rng)
    return _records(alice, bob, alice_setting, bob_setting)


def _result(s_hat, radius):
    estimates = tuple(CorrelationEstimate(name, 1000, 0.0, 0.01) for name in analytic.CONTEXT_NAMES)
    return ChshResult(estimates, s_hat, radius, 0.99)


class TestEstimateCorrelation:
    """Per-context correlation estimates."""

    def test_perfect_anticorrelation(self):
        """Opposite outcomes give E = -1 with zero spread."""
        estimate = estimate_correlation(_records([1, -1, 1], [-1, 1, -1]))
        assert estimate.e_hat == -1.0
        assert estimate.std_err == 0.0
        assert estimate.n == 3

    def test_no_clicks_excluded(self):
        """Trials with a no-click on either side do not count."""
        estimate = estimate_correlation(_records([1, 0, 1, -1], [1, 1, 0, -1]))
        assert estimate.n == 2
        assert estimate.e_hat == 1.0

    def test_no_usable_trials(self):
        """No double-click trials leaves nothing to estimate."""
        with pytest.raises(InsufficientDataError):
            estimate_correlation(_records([0, 1], [1, 0]))

    @pytest.mark.parametrize(
        ('source', 'expected'), [(SingletSource(), -math.sqrt(2) / 2), (PeresBombSource(), -0.5)]
    )
    def test_sources_at_quarter_pi(self, source, expected):
        """Both sources hit their closed-form correlation at pi/4."""
        records = _fixed_context_records(source, math.pi / 4, 1_000_000, seed=1)
        assert estimate_correlation(records).e_hat == pytest.approx(expected, abs=0.003)

    def test_std_err_matches_sample_std(self):
        """The standard error is the sample standard deviation over sqrt(n)."""
        rng = make_rng(2)
        alice = rng.choice([-1, 1], 500)
        bob = rng.choice([-1, 1], 500)
        products = alice * bob
        estimate = estimate_correlation(_records(alice, bob))
        assert estimate.std_err == pytest.approx(products.std(ddof=1) / math.sqrt(500))

    def test_invariant_under_relabeling(self):
        """Flipping every outcome on both sides leaves the estimate unchanged."""
        rng = make_rng(12)
        alice = rng.choice([-1, 0, 1], 10_000)
        bob = rng.choice([-1, 0, 1], 10_000)
        original = estimate_correlation(_records(alice, bob))
        flipped = estimate_correlation(_records(-alice, -bob))
        assert flipped.n == original.n
        assert flipped.e_hat == original.e_hat
        assert flipped.std_err == original.std_err


class TestTallies:
    """Mergeable partial sums."""

    def test_merge_is_associative(self):
        """Merging in any grouping gives the same tally."""
        parts = [CorrelationTally(3, 1), CorrelationTally(5, -3), CorrelationTally(2, 2)]
        assert (parts[0] + parts[1]) + parts[2] == parts[0] + (parts[1] + parts[2])
        assert sum(parts, CorrelationTally()) == CorrelationTally(10, 0)

    def test_split_equals_whole(self):
        """Tallies of two halves merge into the tally of the whole."""
        rng = make_rng(3)
        alice = rng.choice([-1, 0, 1], 1000)
        bob = rng.choice([-1, 0, 1], 1000)
        whole = CorrelationTally.from_outcomes(alice, bob)
        split = CorrelationTally.from_outcomes(alice[:400], bob[:400]) + CorrelationTally.from_outcomes(
            alice[400:], bob[400:]
        )
        assert whole == split


class TestHoeffding:
    """Finite-sample confidence radius."""

    def test_formula(self):
        """Four terms at delta = 0.01 use ln(800)."""
        radius = hoeffding_radius([100, 100, 100, 100], 0.99)
        assert radius == pytest.approx(4 * math.sqrt(2 * math.log(800) / 100))

    def test_shrinks_with_n(self):
        """More trials give a tighter radius."""
        assert hoeffding_radius([100_000] * 4, 0.99) < hoeffding_radius([1000] * 4, 0.99)

    def test_size_at_1e5_per_context(self):
        """About 0.046 at 1e5 trials per context."""
        assert hoeffding_radius([100_000] * 4, 0.99) == pytest.approx(0.0463, abs=5e-4)

    def test_invalid(self):
        """Confidence must lie in (0, 1) and every term needs data."""
        with pytest.raises(ValueError, match='Confidence'):
            hoeffding_radius([100] * 4, 1.0)
        with pytest.raises(InsufficientDataError):
            hoeffding_radius([100, 0, 100, 100], 0.99)

    def test_coverage(self):
        """The true S lies within the radius in at least 99% of repetitions."""
        quad = analytic.SettingQuad.optimal()
        n_reps = 200
        misses = 0
        for rep in range(n_reps):
            records = _balanced_chsh_records(SingletSource(), quad, 10_000, seed=(13, rep))
            result = estimate_chsh(records, quad, confidence=0.99)
            if abs(result.s_hat - analytic.TSIRELSON_BOUND) > result.confidence_radius:
                misses += 1
        # 95th percentile of Binomial(200, 0.01) is 5
        assert misses <= 5


class TestEstimateChsh:
    """CHSH estimation from tagged trials."""

    def test_quantum_reaches_tsirelson(self):
        """The singlet at the optimal quad gives S near 2 sqrt(2)."""
        quad = analytic.SettingQuad.optimal()
        records = _balanced_chsh_records(SingletSource(), quad, 1_000_000, seed=4)
        result = estimate_chsh(records, quad)
        assert result.s_hat == pytest.approx(analytic.TSIRELSON_BOUND, abs=0.01)
        assert result.confidence_radius > 0
        assert [est.context for est in result.estimates] == list(analytic.CONTEXT_NAMES)

    def test_bomb_respects_classical_bound(self):
        """The bomb model stays at or below 2."""
        quad = analytic.SettingQuad.optimal()
        records = _balanced_chsh_records(PeresBombSource(), quad, 1_000_000, seed=5)
        assert estimate_chsh(records, quad).s_hat <= analytic.CLASSICAL_BOUND + 0.01

    def test_missing_context(self):
        """An empty context is named in the error."""
        records = _records(
            np.ones(400, dtype=int),
            np.ones(400, dtype=int),
            alice_setting=np.repeat([0, 0, 1, 1], 100),
            bob_setting=np.zeros(400),
        )
        with pytest.raises(InsufficientDataError, match='ab_prime'):
            estimate_chsh(records)

    def test_min_records(self):
        """Fewer than 100 usable trials in any context is an error."""
        tallies = [CorrelationTally(99, 0)] + [CorrelationTally(1000, 0)] * 3
        with pytest.raises(InsufficientDataError, match='at least 100'):
            chsh_from_tallies(tallies)

    def test_report(self):
        """The report carries the test name, context angles and an optional verdict."""
        quad = analytic.SettingQuad.optimal()
        records = _balanced_chsh_records(SingletSource(), quad, 1000, seed=6)
        result = estimate_chsh(records, quad)
        report = chsh_report(result, certify(result))
        assert report['chsh']['statistical_test'] == STATISTICAL_TEST
        assert report['chsh']['correlations'][1]['theta'] == pytest.approx(3 * math.pi / 4)
        assert set(report['verdict']) >= {'certified', 'margin', 'threshold', 'n_trials'}
        assert 'verdict' not in chsh_report(result)


class TestCertify:
    """Certification rule S - radius > 2."""

    def test_certified(self):
        """A clear violation certifies with the expected margin."""
        verdict = certify(_result(2.82, 0.05))
        assert verdict.certified
        assert verdict.margin == pytest.approx(0.77)
        assert verdict.threshold == 2.0

    def test_radius_swamps_violation(self):
        """A wide radius defeats a large estimate."""
        assert not certify(_result(2.82, 0.9)).certified

    def test_below_threshold(self):
        """An estimate below 2 never certifies."""
        assert not certify(_result(1.95, 0.0)).certified

    def test_equality_is_not_certified(self):
        """A lower bound of exactly 2 does not certify."""
        verdict = certify(_result(2.5, 0.5))
        assert not verdict.certified


class TestRateCurve:
    """Monte Carlo sync rates over a grid."""

    def test_binomial_std_err(self):
        """sqrt(p (1 - p) / n), and zero at p = 0."""
        assert binomial_std_err(0.25, 10_000) == pytest.approx(math.sqrt(0.25 * 0.75 / 10_000))
        assert binomial_std_err(0.0, 10) == 0.0

    def test_cardinal_points(self):
        """Rates at 0, pi/2 and pi fall within 4 standard errors."""
        points = rate_curve(SingletSource(), [0.0, math.pi / 2, math.pi], 100_000, seed=7)
        assert points[0].rate == 0.0
        for point, expected in zip(points, (0.0, 0.25, 0.5), strict=True):
            assert abs(point.rate - expected) <= 4 * binomial_std_err(expected, 100_000) + 1e-12

    def test_detection_losses(self):
        """Lossy detectors scale the rate at pi to 0.405."""
        cfg = DetectionConfig(eta_a=0.9, eta_b=0.9)
        (point,) = rate_curve(SingletSource(), [math.pi], 1_000_000, cfg, seed=8)
        assert point.rate == pytest.approx(0.405, abs=0.003)

    def test_common_random_numbers(self):
        """Each grid point reuses the same streams whatever the rest of the grid."""
        first = rate_curve(PeresBombSource(), [1.0, 2.0], 10_000, seed=9)
        second = rate_curve(PeresBombSource(), [2.0], 10_000, seed=9)
        assert first[1].rate == second[0].rate

    def test_grid_checked(self):
        """Grid angles must lie in [0, pi]."""
        with pytest.raises(ValueError, match=r'\[0, pi\]'):
            rate_curve(SingletSource(), [-0.1], 10)


class TestMutualInformation:
    """Plug-in mutual information with its first-order bias."""

    def test_independent_samples(self):
        """Independent variables show no more than bias-level information."""
        rng = make_rng(10)
        x = rng.integers(0, 4, 100_000)
        y = rng.integers(0, 4, 100_000)
        info, bias = mutual_information(x, y)
        assert bias == pytest.approx(9 / (2 * 100_000 * math.log(2)))
        assert info < 10 * bias

    def test_identical_samples(self):
        """A fair bit shares one bit with itself."""
        x = make_rng(11).integers(0, 2, 100_000)
        info, _ = mutual_information(x, x)
        assert info == pytest.approx(1.0, abs=1e-3)

    def test_invalid(self):
        """Samples must pair up."""
        with pytest.raises(ValueError, match='equally long'):
            mutual_information([1, 2], [1])

"""Finite-sample estimates: correlations, CHSH, certification and rate curves."""

import math
from dataclasses import dataclass

import numpy as np

from . import analytic
from .models import OutcomeSource, planar_direction
from .timeline import DetectionConfig, TrialRecords, apply_detection, sync_rate_estimate
from .utils import STREAM_DETECTION, STREAM_SWEEP, make_rng

MIN_RECORDS_PER_CONTEXT = 100
STATISTICAL_TEST = 'hoeffding-union-bound'


class InsufficientDataError(ValueError):
    """Too few usable (double-click) trials to form an estimate."""


@dataclass(frozen=True)
class CorrelationTally:
    """Partial sums of alice*bob over double-click trials; merge with ``+``."""

    n: int = 0
    total: int = 0

    def __add__(self, other: 'CorrelationTally') -> 'CorrelationTally':
        return CorrelationTally(self.n + other.n, self.total + other.total)

    @classmethod
    def from_outcomes(cls, alice, bob) -> 'CorrelationTally':
        alice = np.asarray(alice, dtype=np.int64)
        bob = np.asarray(bob, dtype=np.int64)
        usable = (alice != 0) & (bob != 0)
        return cls(int(usable.sum()), int((alice[usable] * bob[usable]).sum()))


@dataclass(frozen=True)
class CorrelationEstimate:
    context: str
    n: int
    e_hat: float
    std_err: float

    @classmethod
    def from_tally(cls, tally: CorrelationTally, context: str = '') -> 'CorrelationEstimate':
        if tally.n < 1:
            raise InsufficientDataError(f'No double-click trials for context {context!r}')
        e_hat = tally.total / tally.n
        # products are +-1, so the sample variance follows from the mean
        variance = (1.0 - e_hat * e_hat) * tally.n / (tally.n - 1) if tally.n > 1 else 0.0
        return cls(context, tally.n, e_hat, math.sqrt(max(variance, 0.0) / tally.n))

    def to_dict(self) -> dict:
        return {'context': self.context, 'n': self.n, 'e_hat': self.e_hat, 'std_err': self.std_err}


@dataclass(frozen=True)
class ChshResult:
    estimates: tuple[CorrelationEstimate, ...]
    s_hat: float
    confidence_radius: float
    confidence_level: float
    quad: analytic.SettingQuad | None = None

    @property
    def std_err(self) -> float:
        """Normal-approximation standard error of ``s_hat``."""
        return math.sqrt(sum(est.std_err**2 for est in self.estimates))

    def to_dict(self) -> dict:
        correlations = [est.to_dict() for est in self.estimates]
        if self.quad is not None:
            for entry, theta in zip(correlations, self.quad.relative_angles(), strict=True):
                entry['theta'] = theta
        return {
            'correlations': correlations,
            'quad': None if self.quad is None else self.quad.to_dict(),
            's_hat': self.s_hat,
            's_std_err': self.std_err,
            'confidence_radius': self.confidence_radius,
            'confidence_level': self.confidence_level,
            'statistical_test': STATISTICAL_TEST,
        }


@dataclass(frozen=True)
class CertificationVerdict:
    certified: bool
    s_hat: float
    confidence_radius: float
    margin: float
    n_trials: dict[str, int]
    threshold: float = analytic.CLASSICAL_BOUND

    def to_dict(self) -> dict:
        return {
            'certified': self.certified,
            's_hat': self.s_hat,
            'confidence_radius': self.confidence_radius,
            'threshold': self.threshold,
            'margin': self.margin,
            'n_trials': dict(self.n_trials),
        }


def estimate_correlation(records: TrialRecords, context: str = '') -> CorrelationEstimate:
    """Mean of alice*bob over the double-click trials in ``records``."""
    tally = CorrelationTally.from_outcomes(records.alice_outcome, records.bob_outcome)
    return CorrelationEstimate.from_tally(tally, context)


def hoeffding_radius(counts, confidence: float) -> float:
    """Two-sided Hoeffding radius for the CHSH sum, union bound over terms.

    Each term is a mean of +-1 products, so with ``k`` terms and failure
    probability ``delta = 1 - confidence`` the per-term radius is
    ``sqrt(2 ln(2k / delta) / n_i)``.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError(f'Confidence must lie in (0, 1), got {confidence}')
    counts = list(counts)
    if any(n < 1 for n in counts):
        raise InsufficientDataError('Hoeffding radius needs at least one trial per term')
    log_term = math.log(2 * len(counts) / (1.0 - confidence))
    return sum(math.sqrt(2.0 * log_term / n) for n in counts)


def context_tallies(records: TrialRecords) -> list[CorrelationTally]:
    """Per-context partial sums in CHSH order."""
    context = records.context
    return [
        CorrelationTally.from_outcomes(
            records.alice_outcome[context == k], records.bob_outcome[context == k]
        )
        for k in range(len(analytic.CONTEXT_NAMES))
    ]


def chsh_from_tallies(
    tallies: list[CorrelationTally],
    confidence: float = 0.99,
    min_records: int = MIN_RECORDS_PER_CONTEXT,
    quad: analytic.SettingQuad | None = None,
) -> ChshResult:
    for name, tally in zip(analytic.CONTEXT_NAMES, tallies, strict=True):
        if tally.n < min_records:
            raise InsufficientDataError(
                f'Context {name} has {tally.n} usable trials, need at least {min_records}'
            )
    estimates = tuple(
        CorrelationEstimate.from_tally(tally, name)
        for name, tally in zip(analytic.CONTEXT_NAMES, tallies, strict=True)
    )
    return ChshResult(
        estimates=estimates,
        s_hat=analytic.chsh_combination([est.e_hat for est in estimates]),
        confidence_radius=hoeffding_radius([est.n for est in estimates], confidence),
        confidence_level=confidence,
        quad=quad,
    )


def estimate_chsh(
    records: TrialRecords,
    quad: analytic.SettingQuad | None = None,
    confidence: float = 0.99,
    min_records: int = MIN_RECORDS_PER_CONTEXT,
) -> ChshResult:
    """Estimate the CHSH parameter from trials tagged with their contexts.

    Parameters
    ----------
    records : TrialRecords
        Trials whose settings index the quad's angles.
    quad : SettingQuad, optional
        Angles behind the context indices, echoed in the result.
    confidence : float
        Coverage of the Hoeffding radius.
    min_records : int
        Minimum double-click trials per context.
    """
    return chsh_from_tallies(context_tallies(records), confidence, min_records, quad)


def certify(result: ChshResult) -> CertificationVerdict:
    """Certified when the lower confidence bound on S exceeds 2."""
    margin = result.s_hat - result.confidence_radius - analytic.CLASSICAL_BOUND
    return CertificationVerdict(
        certified=margin > 0.0,
        s_hat=result.s_hat,
        confidence_radius=result.confidence_radius,
        margin=margin,
        n_trials={est.context: est.n for est in result.estimates},
    )


def binomial_std_err(rate: float, n: int) -> float:
    return math.sqrt(max(rate * (1.0 - rate), 0.0) / n)


@dataclass(frozen=True)
class RatePoint:
    theta: float
    rate: float
    std_err: float


def rate_curve(
    source: OutcomeSource,
    theta_grid,
    n_per_point: int,
    cfg: DetectionConfig | None = None,
    seed: int = 0,
) -> list[RatePoint]:
    """Empirical synchronized tick rate at each relative angle.

    Every grid point replays the same generator streams (common random
    numbers), so neighbouring points share most of their trials and a curve
    is smooth in theta. Two sources run with the same seed are paired the
    same way.
    """
    cfg = cfg or DetectionConfig()
    points = []
    for theta in theta_grid:
        theta = float(theta)
        if not 0.0 <= theta <= math.pi:
            raise ValueError(f'Grid angles must lie in [0, pi], got {theta}')
        a = np.repeat(planar_direction(0.0)[None, :], n_per_point, axis=0)
        b = np.repeat(planar_direction(theta)[None, :], n_per_point, axis=0)
        alice, bob = source.sample_many(a, b, make_rng(seed, STREAM_SWEEP))
        alice, bob = apply_detection(alice, bob, cfg, make_rng(seed, STREAM_SWEEP, STREAM_DETECTION))
        records = TrialRecords(
            trial_index=np.arange(n_per_point),
            alice_setting=np.zeros(n_per_point),
            bob_setting=np.zeros(n_per_point),
            alice_outcome=alice,
            bob_outcome=bob,
        )
        rate = sync_rate_estimate(records, n_per_point)
        points.append(RatePoint(theta, rate, binomial_std_err(rate, n_per_point)))
    return points


def mutual_information(x, y) -> tuple[float, float]:
    """Plug-in mutual information in bits and its first-order bias.

    Returns
    -------
    (float, float)
        The estimate and ``(|X| - 1)(|Y| - 1) / (2 n ln 2)``, the expected
        value of the estimate when ``x`` and ``y`` are independent.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) != len(y) or len(x) == 0:
        raise ValueError('Mutual information needs two equally long, non-empty samples')
    x_values, x_codes = np.unique(x, return_inverse=True)
    y_values, y_codes = np.unique(y, return_inverse=True)
    joint = np.zeros((len(x_values), len(y_values)))
    np.add.at(joint, (x_codes, y_codes), 1.0)
    joint /= len(x)
    outer = joint.sum(axis=1, keepdims=True) * joint.sum(axis=0, keepdims=True)
    nonzero = joint > 0
    info = float(np.sum(joint[nonzero] * np.log2(joint[nonzero] / outer[nonzero])))
    bias = (len(x_values) - 1) * (len(y_values) - 1) / (2.0 * len(x) * math.log(2.0))
    return info, bias


def chsh_report(result: ChshResult, verdict: CertificationVerdict | None = None) -> dict:
    """JSON-compatible summary of an estimate and, optionally, its verdict."""
    report = {'chsh': result.to_dict()}
    if verdict is not None:
        report['verdict'] = verdict.to_dict()
    return report

"""Per-trial outcome sources.

Each source turns a pair of analyzer directions into a pair of +1/-1
outcomes. ``sample_many`` is the vectorized workhorse used by the harness;
``sample`` draws a single trial through the same code path, so a source fed
identical generator state and inputs always returns identical outcomes.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .analytic import joint_distribution, qm_correlation

UNIT_ATOL = 1e-9

# Outcome-pair categories in the order of JointDistribution.as_array()
PAIR_ALICE = np.array([1, 1, -1, -1], dtype=np.int8)
PAIR_BOB = np.array([1, -1, 1, -1], dtype=np.int8)


class TapeExhaustedError(RuntimeError):
    """A playback tape was asked for more trials than it holds."""


@dataclass(frozen=True)
class OutcomePair:
    alice: int
    bob: int

    def __post_init__(self):
        if self.alice not in (1, -1) or self.bob not in (1, -1):
            raise ValueError(f'Outcomes must be +1 or -1, got ({self.alice}, {self.bob})')


def as_unit_vectors(vectors) -> np.ndarray:
    """Validate one vector or a stack of vectors as unit length, shape (n, 3)."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    if vectors.shape[-1] != 3:
        raise ValueError(f'Expected 3-vectors, got shape {vectors.shape}')
    norms = np.linalg.norm(vectors, axis=1)
    if not np.allclose(norms, 1.0, rtol=0.0, atol=UNIT_ATOL):
        raise ValueError('Analyzer directions must be unit vectors')
    return vectors


def planar_direction(angle) -> np.ndarray:
    """Unit vector(s) in the x-y plane at the given analyzer angle(s)."""
    angle = np.asarray(angle, dtype=float)
    return np.stack([np.cos(angle), np.sin(angle), np.zeros_like(angle)], axis=-1)


def sample_unit_sphere(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw directions uniformly on the unit sphere.

    Three independent standard normals are normalized; the (measure-zero)
    zero vector is redrawn.
    """
    n = 1 if size is None else int(size)
    points = rng.standard_normal((n, 3))
    norms = np.linalg.norm(points, axis=1)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        points[bad] = rng.standard_normal((int(bad.sum()), 3))
        norms = np.linalg.norm(points, axis=1)
    points /= norms[:, None]
    return points[0] if size is None else points


def _sign(values: np.ndarray) -> np.ndarray:
    # sign(0) is +1
    return np.where(values >= 0.0, 1, -1).astype(np.int8)


def _pairs_from_uniform(u: np.ndarray, p_pp, p_pm, p_mp) -> tuple[np.ndarray, np.ndarray]:
    """Map uniforms on [0, 1) to outcome pairs through cumulative thresholds."""
    category = (
        (u >= p_pp).astype(np.int8)
        + (u >= p_pp + p_pm).astype(np.int8)
        + (u >= p_pp + p_pm + p_mp).astype(np.int8)
    )
    return PAIR_ALICE[category], PAIR_BOB[category]


class OutcomeSource(ABC):
    """Interface shared by the quantum, classical and adversarial sources."""

    name = 'abstract'

    @abstractmethod
    def sample_many(
        self, a: np.ndarray, b: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """Outcomes for ``len(a)`` trials with per-trial directions ``a``, ``b``."""

    def sample(self, a, b, rng: np.random.Generator) -> OutcomePair:
        alice, bob = self.sample_many(as_unit_vectors(a), as_unit_vectors(b), rng)
        return OutcomePair(int(alice[0]), int(bob[0]))

    def describe(self) -> dict:
        return {'kind': self.name}


class SingletSource(OutcomeSource):
    """Draws directly from the singlet's four-outcome distribution at ``-a.b``."""

    name = 'quantum'

    def sample_many(self, a, b, rng):
        a = as_unit_vectors(a)
        b = as_unit_vectors(b)
        e = np.clip(-np.einsum('ij,ij->i', a, b), -1.0, 1.0)
        mixed = (1.0 - e) / 4.0
        return _pairs_from_uniform(rng.random(len(e)), (1.0 + e) / 4.0, mixed, mixed)


class PeresBombSource(OutcomeSource):
    """Fragments with opposite angular momenta uniform on the sphere."""

    name = 'bomb'

    def sample_many(self, a, b, rng):
        a = as_unit_vectors(a)
        b = as_unit_vectors(b)
        j_1 = sample_unit_sphere(rng, len(a))
        alice = _sign(np.einsum('ij,ij->i', a, j_1))
        bob = _sign(-np.einsum('ij,ij->i', b, j_1))
        return alice, bob


@dataclass(frozen=True)
class MimicTable:
    """Shared-randomness response table calibrated at one relative angle."""

    theta_star: float
    thresholds: tuple[float, float, float]

    @property
    def segment_lengths(self) -> tuple[float, float, float, float]:
        t_1, t_2, t_3 = self.thresholds
        return (t_1, t_2 - t_1, t_3 - t_2, 1.0 - t_3)

    def lookup(self, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t_1, t_2, t_3 = self.thresholds
        return _pairs_from_uniform(np.asarray(lam), t_1, t_2 - t_1, t_3 - t_2)


def build_mimic_table(theta_star: float) -> MimicTable:
    """Tabulate a local model that reproduces the singlet at ``theta_star`` only."""
    theta_star = float(theta_star)
    if not math.isfinite(theta_star) or not 0.0 <= theta_star <= math.pi:
        raise ValueError(f'theta_star must lie in [0, pi], got {theta_star}')
    dist = joint_distribution(qm_correlation(theta_star))
    cumulative = np.cumsum(dist.as_array())
    return MimicTable(
        theta_star=theta_star,
        thresholds=(float(cumulative[0]), float(cumulative[1]), float(cumulative[2])),
    )


class MimicSource(OutcomeSource):
    """Context-blind local model; requested directions are ignored."""

    name = 'mimic'

    def __init__(self, table: MimicTable):
        self.table = table

    def sample_many(self, a, b, rng):
        return self.table.lookup(rng.random(len(np.atleast_2d(a))))

    def describe(self):
        return {'kind': self.name, 'theta_star': self.table.theta_star}


@dataclass
class PlaybackTape:
    """Pre-recorded outcome pairs replayed in order, whatever the settings."""

    alice: np.ndarray
    bob: np.ndarray
    cursor: int = 0
    label: str = field(default='tape')

    def __post_init__(self):
        self.alice = np.asarray(self.alice, dtype=np.int8)
        self.bob = np.asarray(self.bob, dtype=np.int8)
        if self.alice.shape != self.bob.shape or self.alice.ndim != 1:
            raise ValueError('Tape columns must be 1-D arrays of equal length')
        if not (np.isin(self.alice, (1, -1)).all() and np.isin(self.bob, (1, -1)).all()):
            raise ValueError('Tape entries must be +1 or -1')
        if not 0 <= self.cursor <= len(self.alice):
            raise ValueError(f'Cursor {self.cursor} outside tape of length {len(self)}')

    def __len__(self) -> int:
        return len(self.alice)

    @property
    def remaining(self) -> int:
        return len(self) - self.cursor

    def rewind(self) -> None:
        self.cursor = 0

    def take(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Return the next ``n`` recorded pairs and advance the cursor."""
        if n > self.remaining:
            raise TapeExhaustedError(
                f'{self.label}: requested {n} trials but only {self.remaining} remain'
            )
        start, self.cursor = self.cursor, self.cursor + n
        return self.alice[start : self.cursor].copy(), self.bob[start : self.cursor].copy()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'alice': self.alice, 'bob': self.bob})

    def to_csv(self, out_file: str | Path) -> Path:
        out_file = Path(out_file)
        self.to_frame().to_csv(out_file, index=False, lineterminator='\n')
        return out_file

    @classmethod
    def from_csv(cls, tape_file: str | Path) -> 'PlaybackTape':
        tape_file = Path(tape_file)
        if not tape_file.exists():
            raise FileNotFoundError(f'Tape file {tape_file} does not exist')
        df = pd.read_csv(tape_file)
        return cls(alice=df['alice'].to_numpy(), bob=df['bob'].to_numpy(), label=tape_file.name)


def playback_sample(tape: PlaybackTape) -> OutcomePair:
    """Next recorded pair from the tape."""
    alice, bob = tape.take(1)
    return OutcomePair(int(alice[0]), int(bob[0]))


class PlaybackSource(OutcomeSource):
    """Memory-stick adversary; must be driven by a single consumer."""

    name = 'playback'

    def __init__(self, tape: PlaybackTape):
        self.tape = tape

    def sample_many(self, a, b, rng):
        return self.tape.take(len(np.atleast_2d(a)))

    def describe(self):
        return {'kind': self.name, 'tape': self.tape.label, 'length': len(self.tape)}


def record_tape(
    source: OutcomeSource, a, b, n: int, rng: np.random.Generator, label: str = 'tape'
) -> PlaybackTape:
    """Record ``n`` trials of ``source`` at one fixed setting pair."""
    a_rows = np.repeat(as_unit_vectors(a), n, axis=0)
    b_rows = np.repeat(as_unit_vectors(b), n, axis=0)
    alice, bob = source.sample_many(a_rows, b_rows, rng)
    return PlaybackTape(alice=alice, bob=bob, label=label)


def singlet_sample(a, b, rng: np.random.Generator) -> OutcomePair:
    return SingletSource().sample(a, b, rng)


def peres_bomb_sample(a, b, rng: np.random.Generator) -> OutcomePair:
    return PeresBombSource().sample(a, b, rng)


def mimic_sample(table: MimicTable, a, b, rng: np.random.Generator) -> OutcomePair:
    return MimicSource(table).sample(a, b, rng)


SOURCE_KINDS = ('quantum', 'bomb', 'mimic', 'playback')


def make_source(
    kind: str, theta_star: float | None = None, tape: PlaybackTape | None = None
) -> OutcomeSource:
    """Build an outcome source by name."""
    if kind == 'quantum':
        return SingletSource()
    if kind == 'bomb':
        return PeresBombSource()
    if kind == 'mimic':
        if theta_star is None:
            raise ValueError('The mimic source needs a calibration angle theta_star')
        return MimicSource(build_mimic_table(theta_star))
    if kind == 'playback':
        if tape is None:
            raise ValueError('The playback source needs a tape')
        return PlaybackSource(tape)
    raise ValueError(f'Unknown source kind: {kind} (expected one of {SOURCE_KINDS})')

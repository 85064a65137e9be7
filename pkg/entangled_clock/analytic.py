"""Closed-form reference values for the entangled clock.

Everything here is a pure function of its arguments and is used as the oracle
that the Monte Carlo estimates are checked against.
"""

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy import integrate

CLASSICAL_BOUND = 2.0
TSIRELSON_BOUND = 2.0 * math.sqrt(2.0)

# Tolerance for JointDistribution normalization checks
PROB_ATOL = 1e-12

# CHSH sign pattern for the contexts (a, b), (a, b'), (a', b), (a', b')
CHSH_SIGNS = (1, -1, 1, 1)
CONTEXT_NAMES = ('ab', 'ab_prime', 'a_prime_b', 'a_prime_b_prime')


def _check_finite(theta: float) -> float:
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f'Angle must be finite, got {theta}')
    return theta


def _check_relative(theta: float) -> float:
    theta = _check_finite(theta)
    if theta < 0.0 or theta > math.pi:
        raise ValueError(f'Relative angle must lie in [0, pi], got {theta}')
    return theta


def _check_efficiency(name: str, eta: float) -> float:
    eta = float(eta)
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f'{name} must lie in [0, 1], got {eta}')
    return eta


def relative_angle(alpha: float, beta: float) -> float:
    """Planar angle between two analyzer directions, folded into [0, pi]."""
    delta = abs(_check_finite(alpha) - _check_finite(beta)) % (2.0 * math.pi)
    if delta > math.pi:
        delta = 2.0 * math.pi - delta
    return delta


def qm_correlation(theta: float) -> float:
    """Singlet joint expectation value, ``-cos(theta)``."""
    return -math.cos(_check_finite(theta))


def cl_correlation(theta: float) -> float:
    """Linear correlation of the bomb-fragment model, ``-1 + 2 theta / pi``."""
    return -1.0 + 2.0 * _check_relative(theta) / math.pi


def qm_sync_rate(theta: float) -> float:
    """Probability per emitted pair that both quantum clocks tick."""
    return 0.5 * math.sin(_check_finite(theta) / 2.0) ** 2


def cl_sync_rate(theta: float) -> float:
    """Probability per emitted pair that both classical clocks tick."""
    return _check_relative(theta) / (2.0 * math.pi)


@dataclass(frozen=True)
class JointDistribution:
    """Probabilities of the four outcome pairs (alice, bob)."""

    p_pp: float
    p_pm: float
    p_mp: float
    p_mm: float

    def __post_init__(self):
        probs = self.as_array()
        if np.any(probs < -PROB_ATOL) or np.any(probs > 1.0 + PROB_ATOL):
            raise ValueError(f'Probabilities must lie in [0, 1], got {probs}')
        if abs(probs.sum() - 1.0) > PROB_ATOL:
            raise ValueError(f'Probabilities must sum to 1, got {probs.sum()}')

    def as_array(self) -> np.ndarray:
        """Probabilities in the order ++, +-, -+, --."""
        return np.array([self.p_pp, self.p_pm, self.p_mp, self.p_mm])

    @property
    def correlation(self) -> float:
        return self.p_pp + self.p_mm - self.p_pm - self.p_mp

    @property
    def sync_rate(self) -> float:
        return self.p_pp

    @property
    def alice_marginal(self) -> float:
        return self.p_pp + self.p_pm

    @property
    def bob_marginal(self) -> float:
        return self.p_pp + self.p_mp


def joint_distribution(e: float, marginal_bias: float = 0.0) -> JointDistribution:
    """Build the outcome distribution with correlation ``e``.

    Parameters
    ----------
    e : float
        Joint expectation value <sigma_A sigma_B>, in [-1, 1].
    marginal_bias : float
        Common single-side expectation <sigma_A> = <sigma_B>. Zero for the
        singlet and every model shipped here.

    Returns
    -------
    JointDistribution
    """
    e = float(e)
    if not math.isfinite(e) or abs(e) > 1.0:
        raise ValueError(f'Correlation must lie in [-1, 1], got {e}')
    mixed = (1.0 - e) / 4.0
    return JointDistribution(
        p_pp=(1.0 + 2.0 * marginal_bias + e) / 4.0,
        p_pm=mixed,
        p_mp=mixed,
        p_mm=(1.0 - 2.0 * marginal_bias + e) / 4.0,
    )


def sync_excess(theta: float) -> float:
    """Quantum minus classical synchronized tick rate."""
    theta = _check_relative(theta)
    return qm_sync_rate(theta) - cl_sync_rate(theta)


def relative_speedup(theta: float) -> float:
    """Fractional excess of the quantum rate over the classical rate."""
    classical = cl_sync_rate(theta)
    if classical == 0.0:
        raise ValueError('Relative speedup is undefined at theta = 0')
    return (qm_sync_rate(theta) - classical) / classical


def excess_extrema() -> tuple[float, float]:
    """Angles where the synchronization excess is extremal.

    Both solve ``sin(theta) = 2 / pi``; the first is the minimum (quantum
    clocks lag), the second the maximum (quantum clocks lead).
    """
    theta_1 = math.asin(2.0 / math.pi)
    return theta_1, math.pi - theta_1


@dataclass(frozen=True)
class SettingQuad:
    """Planar analyzer angles for Alice (a, a') and Bob (b, b')."""

    a: float
    a_prime: float
    b: float
    b_prime: float

    def __post_init__(self):
        for name in ('a', 'a_prime', 'b', 'b_prime'):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f'Setting {name} must be finite')

    @classmethod
    def optimal(cls) -> 'SettingQuad':
        """Angles that maximize the singlet CHSH value."""
        return cls(a=0.0, a_prime=math.pi / 2, b=math.pi / 4, b_prime=3 * math.pi / 4)

    @classmethod
    def from_dict(cls, data: dict) -> 'SettingQuad':
        return cls(**{key: float(data[key]) for key in ('a', 'a_prime', 'b', 'b_prime')})

    def to_dict(self) -> dict:
        return {'a': self.a, 'a_prime': self.a_prime, 'b': self.b, 'b_prime': self.b_prime}

    def alice_angles(self) -> tuple[float, float]:
        return self.a, self.a_prime

    def bob_angles(self) -> tuple[float, float]:
        return self.b, self.b_prime

    def contexts(self) -> list[tuple[float, float]]:
        """(alice angle, bob angle) per context, in CHSH order."""
        return [
            (self.a, self.b),
            (self.a, self.b_prime),
            (self.a_prime, self.b),
            (self.a_prime, self.b_prime),
        ]

    def relative_angles(self) -> list[float]:
        return [relative_angle(alpha, beta) for alpha, beta in self.contexts()]


def chsh_combination(correlations) -> float:
    """``|E(a,b) - E(a,b') + E(a',b) + E(a',b')|`` from four correlations."""
    if len(correlations) != len(CHSH_SIGNS):
        raise ValueError(f'Expected 4 correlations, got {len(correlations)}')
    return abs(sum(sign * e for sign, e in zip(CHSH_SIGNS, correlations, strict=True)))


def chsh_value(correlation_fn: Callable[[float], float], quad: SettingQuad) -> float:
    """CHSH parameter of a correlation function over a setting quad."""
    return chsh_combination([correlation_fn(theta) for theta in quad.relative_angles()])


def expected_measured_rate(theta: float, eta_a: float, eta_b: float) -> float:
    """Quantum sync rate per emitted pair after detector losses."""
    eta_a = _check_efficiency('eta_a', eta_a)
    eta_b = _check_efficiency('eta_b', eta_b)
    return eta_a * eta_b * qm_sync_rate(theta)


def hemisphere_overlap_correlation(theta: float) -> float:
    """Bomb-model correlation by integrating over fragment directions.

    With ``a`` on the z axis and ``b`` tilted by ``theta``, the fraction of
    azimuths with ``b . J > 0`` is known in closed form for each polar
    height ``u``; the remaining integral over ``u`` is done numerically.
    """
    theta = _check_relative(theta)
    sin_t, cos_t = math.sin(theta), math.cos(theta)

    def bob_mean(u: float) -> float:
        # E[sign(b . J) | J_z = u]
        radial = sin_t * math.sqrt(max(0.0, 1.0 - u * u))
        offset = cos_t * u
        if radial == 0.0:
            return 1.0 if offset >= 0.0 else -1.0
        fraction = math.acos(min(1.0, max(-1.0, -offset / radial))) / math.pi
        return 2.0 * fraction - 1.0

    # J_z is uniform on [-1, 1]; alice = sign(u), bob = -sign(b . J)
    upper, _ = integrate.quad(bob_mean, 0.0, 1.0, epsabs=1e-12, limit=200)
    lower, _ = integrate.quad(bob_mean, -1.0, 0.0, epsabs=1e-12, limit=200)
    return -(upper - lower) / 2.0

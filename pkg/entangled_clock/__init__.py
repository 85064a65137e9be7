"""Entangled clock testbed.

Monte Carlo simulation of two parties whose clocks tick on +1 outcomes from
quantum or classical sources, with CHSH-based certification of private time
and adversarial playback scenarios.
"""

__version__ = '0.1.0'

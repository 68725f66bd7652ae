"""Purity algebra: how uncorrelated noise degrades g2 and heralded g2."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class PurityParams:
    """Fraction of genuine pair counts in the trigger and partner channels."""

    p_trigger: float = 1.0
    p_partner: float = 1.0

    def __post_init__(self):
        for name in ("p_trigger", "p_partner"):
            v = getattr(self, name)
            if not (0 < v <= 1):
                raise DomainError(f"{name} must lie in (0, 1], got {v}")

    @property
    def product(self):
        return self.p_trigger * self.p_partner


def _as_g(g, name="g"):
    g = np.asarray(g, dtype=float)
    if np.any(~(g >= 1)):
        raise DomainError(f"{name} must be >= 1")
    return g


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def apply_purity_cross(g_ideal, params):
    """Measured cross-correlation: P_t P_p (g - 1) + 1."""
    g = _as_g(g_ideal, "g_ideal")
    return _out(params.p_trigger * params.p_partner * (g - 1) + 1)


def invert_purity_cross(g_measured, params):
    """Ideal cross-correlation recovered from a measured one."""
    g = _as_g(g_measured, "g_measured")
    return _out(1 + (g - 1) / (params.p_trigger * params.p_partner))


def apply_purity_conditional(g_ideal_cross, params):
    """Measured heralded autocorrelation for an ideal cross-correlation g.

    Reduces to (4g - 2)/g**2 at unit purity.
    """
    g = _as_g(g_ideal_cross, "g_ideal_cross")
    pt, pp = params.p_trigger, params.p_partner
    x = pt * pp * (g - 1)
    return _out((1 + pp**2 + 2 * x * (1 + pp)) / (x + 1) ** 2)


def estimate_purity(total_counts, background_counts):
    """(total - background) / total."""
    if total_counts <= 0:
        raise DomainError("total_counts must be positive")
    if background_counts < 0 or background_counts > total_counts:
        raise DomainError("background_counts must lie in [0, total_counts]")
    return (total_counts - background_counts) / total_counts


def purity_from_rates(signal_rate, noise_rate):
    """Expected purity for a channel with the given signal and noise rates."""
    if signal_rate < 0 or noise_rate < 0 or signal_rate + noise_rate <= 0:
        raise DomainError("rates must be non-negative with a positive sum")
    return signal_rate / (signal_rate + noise_rate)


def noise_rate_for_purity(signal_rate, purity):
    """Noise rate that dilutes `signal_rate` to the target purity."""
    if not (0 < purity <= 1):
        raise DomainError("purity must lie in (0, 1]")
    return signal_rate * (1 - purity) / purity

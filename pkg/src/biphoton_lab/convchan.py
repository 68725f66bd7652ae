"""Frequency-conversion channel: spectral acceptance, overlap efficiency,
group delay and added noise."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _rng
from .errors import CalibrationError, DomainError, InvalidModelError
from .model import amplitude_spectrum
from .tags import check_sorted, delay_stream, merge_streams, poisson_ticks, thin, TagStream

LN2 = math.log(2)
ORDER_BOUNDS = (1.0, 8.0)


@dataclass(frozen=True)
class ConverterSettings:
    """Converter drive parameters (units of Gamma). Metadata only."""

    optical_depth: float = 0.0
    omega_c: float = 0.0
    omega_d: float = 0.0
    delta_p: float = 0.0
    delta_c: float = 0.0
    delta_d: float = 0.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise InvalidModelError(f"ConverterSettings.{f.name} must be finite")


@dataclass(frozen=True)
class ConversionChannelSpec:
    """Super-Gaussian acceptance window T(d) = eta * exp(-ln2 |2d/W|^(2n)).

    window_fwhm is the FWHM of the efficiency curve.
    """

    window_fwhm: float = 40e6
    window_order: float = 2.0
    window_center_offset: float = 0.0
    peak_efficiency: float = 0.794
    group_delay: float = 55e-9
    added_noise_rate: float = 0.0
    settings: ConverterSettings = field(default_factory=ConverterSettings, compare=False)

    def __post_init__(self):
        if not self.window_fwhm > 0:
            raise InvalidModelError("window_fwhm must be positive")
        if not (0 < self.peak_efficiency <= 1):
            raise InvalidModelError("peak_efficiency must lie in (0, 1]")
        if not self.window_order > 0:
            raise InvalidModelError("window_order must be positive")
        if not self.added_noise_rate >= 0:
            raise InvalidModelError("added_noise_rate must be >= 0")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Discrete spectral distribution: detunings (Hz) and probability weights."""

    freq: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.freq, float)
        w = np.asarray(self.weight, float)
        if f.shape != w.shape or f.ndim != 1:
            raise DomainError("freq and weight must be equal-length 1-d arrays")
        if np.any(w < 0):
            raise DomainError("spectral weights must be non-negative")
        object.__setattr__(self, "freq", f)
        object.__setattr__(self, "weight", w)

    @classmethod
    def from_density(cls, freq, density):
        """Trapezoid weights of a sampled density S(nu) on a uniform grid."""
        freq = np.asarray(freq, float)
        density = np.asarray(density, float)
        dnu = np.gradient(freq)
        w = density * dnu
        w[0] /= 2
        w[-1] /= 2
        return cls(freq, w)

    @classmethod
    def from_model(cls, model, **kw):
        f, p = amplitude_spectrum(model, **kw)
        return cls(f, p)

    @classmethod
    def delta(cls, center=0.0):
        return cls(np.array([center]), np.array([1.0]))

    @classmethod
    def lorentzian(cls, fwhm, n=2**16, span=4000):
        """Lorentzian spectrum truncated to +-span/2 FWHM and renormalized."""
        f = np.linspace(-span / 2 * fwhm, span / 2 * fwhm, n)
        d = 1 / (1 + (2 * f / fwhm) ** 2)
        s = cls.from_density(f, d)
        return cls(s.freq, s.weight / s.weight.sum())

    @classmethod
    def gaussian(cls, fwhm, n=4097):
        sig = fwhm / (2 * math.sqrt(2 * LN2))
        f = np.linspace(-10 * sig, 10 * sig, n)
        s = cls.from_density(f, np.exp(-f**2 / (2 * sig**2)))
        return cls(s.freq, s.weight / s.weight.sum())

    @property
    def total(self):
        return float(self.weight.sum())


def acceptance_transmission(spec, detuning):
    """Conversion efficiency at a detuning (Hz) from the carrier."""
    d = np.asarray(detuning, float) - spec.window_center_offset
    x = np.abs(2 * d / spec.window_fwhm) ** (2 * spec.window_order)
    out = spec.peak_efficiency * np.exp(-LN2 * x)
    return float(out) if out.ndim == 0 else out


def conversion_efficiency(spec, photon_spectrum):
    """Overlap of the photon spectrum with the acceptance window."""
    s = photon_spectrum
    if abs(s.total - 1) > 1e-4:
        raise DomainError(f"spectrum is not normalized (sum of weights {s.total:.6g})")
    return float(np.dot(s.weight, acceptance_transmission(spec, s.freq)))


def calibrate_window_shape(narrowband_target, broadband_target, broadband_spectrum,
                           base=None, order_bounds=ORDER_BOUNDS, tol=1e-6):
    """Fit window_order so the broadband overlap hits `broadband_target`.

    peak_efficiency is set to `narrowband_target`; other fields come from
    `base`. Bisection over `order_bounds`.
    """
    if not (0 < broadband_target <= narrowband_target <= 1):
        raise DomainError("need 0 < broadband_target <= narrowband_target <= 1")
    base = (base or ConversionChannelSpec()).replace(peak_efficiency=narrowband_target)
    lo, hi = order_bounds

    def resid(n):
        return conversion_efficiency(base.replace(window_order=n), broadband_spectrum) - broadband_target

    r_lo, r_hi = resid(lo), resid(hi)
    if abs(r_lo) <= 1e-3 * 0.1:
        return base.replace(window_order=lo)
    if abs(r_hi) <= 1e-3 * 0.1:
        return base.replace(window_order=hi)
    if r_lo * r_hi > 0:
        raise CalibrationError(
            f"broadband target {broadband_target} unreachable for order in [{lo}, {hi}]: "
            f"efficiency spans [{r_lo + broadband_target:.4f}, {r_hi + broadband_target:.4f}]",
            bracket=(r_lo + broadband_target, r_hi + broadband_target),
        )
    n = optimize.bisect(resid, lo, hi, xtol=tol)
    return base.replace(window_order=n)


def transform_stream(spec, probe_tags, efficiency, duration, seed, noise_span=None):
    """Convert a probe stream: thin by `efficiency`, delay by the group delay,
    and merge Poisson noise at `added_noise_rate`.

    Noise covers [0, duration] unless `noise_span` = (start, stop) ticks
    restricts it (used for chunked generation).
    """
    if not (0 <= efficiency <= 1):
        raise DomainError("efficiency must lie in [0, 1]")
    check_sorted(probe_tags, "probe stream")
    rng = _rng.stage_rng(seed, "conversion")
    kept = thin(rng, probe_tags.ticks, efficiency)
    s = TagStream(kept, duration, probe_tags.channel, probe_tags.resolution, validate=False)
    s = delay_stream(s, spec.group_delay)
    start, stop = noise_span if noise_span is not None else (0, s.max_tick + 1)
    noise = poisson_ticks(rng, spec.added_noise_rate, start, stop, s.resolution)
    if noise.size == 0:
        return s
    return merge_streams([s, s.with_ticks(noise)])


class ConversionChannel(TransformerMixin, BaseEstimator):
    """Estimator wrapper: `fit` computes the overlap efficiency from a
    Spectrum (unless `efficiency` is given), `transform` converts a stream."""

    def __init__(self, window_fwhm=40e6, window_order=2.0, window_center_offset=0.0,
                 peak_efficiency=0.794, group_delay=55e-9, added_noise_rate=0.0,
                 efficiency=None, seed=0):
        self.window_fwhm = window_fwhm
        self.window_order = window_order
        self.window_center_offset = window_center_offset
        self.peak_efficiency = peak_efficiency
        self.group_delay = group_delay
        self.added_noise_rate = added_noise_rate
        self.efficiency = efficiency
        self.seed = seed

    def _spec(self):
        return ConversionChannelSpec(self.window_fwhm, self.window_order, self.window_center_offset,
                                     self.peak_efficiency, self.group_delay, self.added_noise_rate)

    def fit(self, X=None, y=None):
        self.spec_ = self._spec()
        if self.efficiency is not None:
            self.efficiency_ = float(self.efficiency)
        elif X is None:
            self.efficiency_ = self.peak_efficiency
        else:
            self.efficiency_ = conversion_efficiency(self.spec_, X)
        return self

    def transform(self, X):
        check_is_fitted(self, "efficiency_")
        return transform_stream(self.spec_, X, self.efficiency_, X.duration, self.seed)

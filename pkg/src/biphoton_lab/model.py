"""Analytic biphoton model: temporal wavepacket, rates, ideal correlations.

Delay convention: tau >= 0 is the emission delay of the trigger photon
after its probe partner. The density p(tau) is zero for tau < 0.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import optimize

from .errors import DomainError, InvalidModelError, ResolutionError, SpectralResolutionWarning

WAVEFORM_KINDS = ("exponential-decay", "damped-oscillation", "tabulated")

SPECTRUM_POINTS = 2**16
SPECTRUM_SPAN = 64  # grid spans [0, SPECTRUM_SPAN * tau_decay]
TAIL = 28.0  # e^-28 ~ 7e-13 of the mass lies beyond tau_rise + TAIL * tau_decay


@dataclass(frozen=True)
class SourceSettings:
    """Experimental knobs of the SFWM source. Metadata only."""

    optical_depth: float = 0.0
    omega_1: float = 0.0  # units of Gamma
    omega_2: float = 0.0
    delta_1: float = 0.0
    gamma_21: float = 0.0
    Gamma: float = 2 * math.pi * 6e6  # rad/s

    def __post_init__(self):
        # detunings are signed; only magnitudes are constrained
        for f in dataclasses.fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise InvalidModelError(f"SourceSettings.{f.name} must be finite")


@dataclass(frozen=True)
class BiphotonModel:
    """Wavepacket shape plus generation rates (events/s).

    `samples` holds (tau_s, density) tuples for the tabulated kind; the
    density is renormalized internally. `peak_g2` is derived.
    """

    waveform_kind: str = "exponential-decay"
    tau_decay: float = 20e-9 / math.log(2)
    tau_rise: float = 0.0
    oscillation_freq: float = 0.0
    pair_rate: float = 0.0
    trigger_rate: float = 1.0
    probe_rate: float = 1.0
    samples: tuple | None = None
    settings: SourceSettings = field(default_factory=SourceSettings, compare=False)

    def __post_init__(self):
        if self.waveform_kind not in WAVEFORM_KINDS:
            raise InvalidModelError(f"unknown waveform_kind {self.waveform_kind!r}")
        if not (self.tau_decay > 0 and math.isfinite(self.tau_decay)):
            raise InvalidModelError("tau_decay must be positive")
        if not self.tau_rise >= 0:
            raise InvalidModelError("tau_rise must be >= 0")
        if not self.oscillation_freq >= 0:
            raise InvalidModelError("oscillation_freq must be >= 0")
        if self.waveform_kind == "damped-oscillation" and self.oscillation_freq <= 0:
            raise InvalidModelError("damped-oscillation needs oscillation_freq > 0")
        for name in ("pair_rate", "trigger_rate", "probe_rate"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise InvalidModelError(f"{name} must be finite and >= 0")
        if self.pair_rate > min(self.trigger_rate, self.probe_rate) * (1 + 1e-12):
            raise InvalidModelError("pair_rate exceeds min(trigger_rate, probe_rate)")
        if self.waveform_kind == "tabulated":
            if self.samples is None:
                raise InvalidModelError("tabulated waveform needs samples")
            tau, dens = (np.asarray(x, float) for x in self.samples)
            if tau.ndim != 1 or tau.shape != dens.shape or tau.size < 2:
                raise InvalidModelError("samples must be two equal-length 1-d sequences")
            if tau[0] < 0 or np.any(np.diff(tau) <= 0):
                raise InvalidModelError("sample delays must be >= 0 and increasing")
            if np.any(dens < 0) or not np.all(np.isfinite(dens)):
                raise InvalidModelError("sample densities must be finite and >= 0")
            if np.trapezoid(dens, tau) <= 0:
                raise InvalidModelError("sample densities integrate to zero")
            object.__setattr__(self, "samples", (tuple(tau.tolist()), tuple(dens.tolist())))

    @cached_property
    def _area(self):
        """Integral of the unnormalized intensity."""
        if self.waveform_kind == "exponential-decay":
            return self.tau_rise / 2 + self.tau_decay
        if self.waveform_kind == "damped-oscillation":
            x = (2 * math.pi * self.oscillation_freq * self.tau_decay) ** 2
            return self.tau_decay / 2 * x / (1 + x)
        tau, dens = self.samples
        return float(np.trapezoid(dens, tau))

    @cached_property
    def _peak(self):
        return _find_peak(self)

    @property
    def peak_tau(self):
        """Delay at which the waveform density is largest."""
        return self._peak[0]

    @property
    def peak_density(self):
        return self._peak[1]

    @property
    def peak_g2(self):
        if self.pair_rate == 0:
            return 1.0
        return 1.0 + self.pair_rate * self.peak_density / (self.trigger_rate * self.probe_rate)

    @property
    def support(self):
        """Delay beyond which the remaining probability mass is negligible (< 1e-12)."""
        if self.waveform_kind == "tabulated":
            return self.samples[0][-1]
        return self.tau_rise + TAIL * self.tau_decay

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _intensity(model, tau):
    """Unnormalized intensity on tau >= 0 (caller masks tau < 0)."""
    kind = model.waveform_kind
    if kind == "exponential-decay":
        tr, td = model.tau_rise, model.tau_decay
        out = np.exp(-(tau - tr) / td)
        if tr > 0:
            out = np.where(tau < tr, tau / tr, out)
        return out
    if kind == "damped-oscillation":
        return np.exp(-tau / model.tau_decay) * np.sin(math.pi * model.oscillation_freq * tau) ** 2
    t, d = model.samples
    return np.interp(tau, t, d, left=0.0, right=0.0)


def waveform_pdf(model, tau):
    """Normalized density p(tau) of the trigger-after-probe emission delay."""
    tau = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(tau)):
        raise DomainError("tau must be finite")
    pos = tau >= 0
    out = np.where(pos, _intensity(model, np.where(pos, tau, 0.0)), 0.0) / model._area
    return float(out) if out.ndim == 0 else out


def waveform_amplitude(model, tau):
    """Real amplitude psi(tau) with psi**2 = p(tau).

    The damped oscillation keeps the sign of its sine factor; the other
    kinds use the non-negative root.
    """
    tau = np.asarray(tau, dtype=float)
    if model.waveform_kind == "damped-oscillation":
        t = np.maximum(tau, 0.0)
        a = np.exp(-t / (2 * model.tau_decay)) * np.sin(math.pi * model.oscillation_freq * t)
        out = np.where(tau >= 0, a, 0.0) / math.sqrt(model._area)
    else:
        out = np.sqrt(waveform_pdf(model, tau))
    return float(out) if np.ndim(out) == 0 else out


def _find_peak(model):
    if model.waveform_kind == "exponential-decay":
        return model.tau_rise, 1.0 / model._area
    if model.waveform_kind == "tabulated":
        t, d = (np.asarray(x) for x in model.samples)
        i = int(np.argmax(d))  # piecewise linear: max sits on a sample
        return float(t[i]), float(d[i] / model._area)
    grid = np.linspace(0.0, model.support, 2**16)
    p = waveform_pdf(model, grid)
    i = int(np.argmax(p))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    r = optimize.minimize_scalar(lambda x: -waveform_pdf(model, x), bounds=(lo, hi),
                                 method="bounded", options={"xatol": 1e-16})
    if -r.fun >= p[i]:
        return float(r.x), float(-r.fun)
    return float(grid[i]), float(p[i])


def waveform_fwhm(model):
    """Intensity FWHM of the lobe containing the peak (seconds)."""
    t0, pk = model.peak_tau, model.peak_density
    half = pk / 2
    f = lambda x: waveform_pdf(model, x) - half
    step = model.tau_decay / 64
    # walk outward to bracket each crossing, then refine
    if model.waveform_kind == "exponential-decay" and model.tau_rise == 0:
        left = 0.0
    else:
        x = t0
        while x > 0 and f(x) > 0:
            x -= step
        left = optimize.brentq(f, max(x, 0.0), t0, xtol=1e-18) if f(max(x, 0.0)) < 0 else 0.0
    x = t0 + step
    while f(x) > 0:
        x += step
    right = optimize.brentq(f, x - step, x, xtol=1e-18)
    return right - left


def eval_cross_correlation(model, tau):
    """g2(tau) = 1 + R_pair p(tau) / (R_t R_p)."""
    k = model.pair_rate / (model.trigger_rate * model.probe_rate)
    return 1.0 + k * waveform_pdf(model, tau)


def eval_conditional_autocorr(g2_cross):
    """Heralded autocorrelation (4g - 2)/g**2 of an ideal thermal pair source."""
    g = np.asarray(g2_cross, dtype=float)
    if np.any(~(g >= 1)):
        raise DomainError("g2_cross must be >= 1")
    out = (4 * g - 2) / g**2
    return float(out) if out.ndim == 0 else out


def pairing_ratios(model):
    """(R_pair/R_p, R_pair/R_t)."""
    if model.trigger_rate <= 0 or model.probe_rate <= 0:
        raise DomainError("trigger and probe rates must be positive")
    return model.pair_rate / model.probe_rate, model.pair_rate / model.trigger_rate


def with_peak_g2(model, g_peak):
    """Copy of `model` whose pair rate gives the requested peak g2 at fixed singles rates."""
    if g_peak < 1:
        raise DomainError("g_peak must be >= 1")
    pair = (g_peak - 1) * model.trigger_rate * model.probe_rate / model.peak_density
    return model.replace(pair_rate=pair)


# --- spectrum ----------------------------------------------------------------

def amplitude_spectrum(model, n=SPECTRUM_POINTS, span=SPECTRUM_SPAN):
    """(freq_hz, power) of |FFT psi|^2 on an n-point grid over [0, span*tau_decay].

    Frequencies are fftshifted and centred on the carrier; power is
    normalized to unit sum.
    """
    if model.waveform_kind == "tabulated" and len(model.samples[0]) < 16:
        raise ResolutionError("tabulated waveform needs at least 16 samples for a spectrum")
    dt = span * model.tau_decay / n
    t = np.arange(n) * dt
    a = waveform_amplitude(model, t)
    if not np.any(a):
        raise ResolutionError("waveform vanishes on every grid sample; grid too coarse")
    spec = np.abs(np.fft.fftshift(np.fft.fft(a))) ** 2
    freq = np.fft.fftshift(np.fft.fftfreq(n, dt))
    return freq, spec / spec.sum()


def _outer_fwhm(x, y):
    """Width between the outermost half-maximum crossings, linearly interpolated."""
    half = y.max() / 2
    above = np.flatnonzero(y >= half)
    i, j = above[0], above[-1]
    if i == 0 or j == y.size - 1:
        return None
    left = x[i - 1] + (half - y[i - 1]) / (y[i] - y[i - 1]) * (x[i] - x[i - 1])
    right = x[j] + (half - y[j]) / (y[j + 1] - y[j]) * (x[j + 1] - x[j])
    return right - left


def waveform_spectrum_fwhm(model, n=SPECTRUM_POINTS, span=SPECTRUM_SPAN):
    """FWHM (Hz) of the power spectrum of the amplitude waveform.

    For multi-peaked spectra the outermost half-maximum crossings are used.
    Widths within two frequency bins of the grid resolution (or running
    into the Nyquist edge) raise SpectralResolutionWarning and are floored
    at the resolution.
    """
    freq, p = amplitude_spectrum(model, n, span)
    df = freq[1] - freq[0]
    w = _outer_fwhm(freq, p)
    if w is None:
        warnings.warn("spectrum not resolved: half maximum reaches the Nyquist edge",
                      SpectralResolutionWarning, stacklevel=2)
        return float(freq[-1] - freq[0])
    if w < 2 * df:
        warnings.warn(f"spectral FWHM {w:.3g} Hz is within 2 bins of the grid resolution {df:.3g} Hz",
                      SpectralResolutionWarning, stacklevel=2)
        w = max(w, df)
    return float(w)


def fit_damped_oscillation(fwhm, peak_density, guess=(25e6, 45e-9)):
    """Solve (oscillation_freq, tau_decay) so the main lobe has the given
    intensity FWHM and normalized peak density."""

    def resid(x):
        f, td = x
        if f <= 0 or td <= 0:
            return [1e3, 1e3]
        m = BiphotonModel("damped-oscillation", tau_decay=td, oscillation_freq=f)
        return [waveform_fwhm(m) / fwhm - 1, m.peak_density / peak_density - 1]

    sol = optimize.least_squares(resid, guess, x_scale=guess, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if np.max(np.abs(sol.fun)) > 1e-9:
        raise InvalidModelError("no damped oscillation matches the requested width and peak")
    return float(sol.x[0]), float(sol.x[1])

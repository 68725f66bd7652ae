"""Coincidence analysis: cross-correlograms, heralded autocorrelation,
peak statistics. Also re-exports the stream merge and TTAG I/O."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError, DomainError
from .tags import TagStream, check_sorted, merge_streams, read_ttag, write_ttag

MAX_BINS = 10**7
_BLOCK = 1 << 16  # trigger tags per work unit
_PAIR_LIMIT = 1 << 22  # differences materialized at once


def max_workers(n_jobs=None):
    """Worker count: explicit n_jobs, else BIPHOTON_LAB_THREADS, else CPU count."""
    if n_jobs is None:
        env = os.environ.get("BIPHOTON_LAB_THREADS")
        n_jobs = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(n_jobs))


@dataclass(frozen=True)
class BinningSpec:
    bin_width: float
    tau_min: float
    tau_max: float

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ConfigError("bin_width must be positive")
        if not self.tau_min < self.tau_max:
            raise ConfigError("tau_min must be below tau_max")
        n = (self.tau_max - self.tau_min) / self.bin_width
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ConfigError("(tau_max - tau_min) / bin_width must be an integer")
        if round(n) > MAX_BINS:
            raise ConfigError(f"more than {MAX_BINS} bins")

    @property
    def n_bins(self):
        return int(round((self.tau_max - self.tau_min) / self.bin_width))

    def edges(self):
        return self.tau_min + self.bin_width * np.arange(self.n_bins + 1)

    def centers(self):
        return self.tau_min + self.bin_width * (np.arange(self.n_bins) + 0.5)

    def in_ticks(self, resolution):
        """(tau_min, bin_width) in integer ticks; the width must be a whole number of ticks."""
        bw = self.bin_width / resolution
        if abs(bw - round(bw)) > 1e-6 or round(bw) < 1:
            raise ConfigError("bin_width must be a positive multiple of the tick resolution")
        return int(round(self.tau_min / resolution)), int(round(bw))


@dataclass(frozen=True, eq=False)
class CorrelogramResult:
    """Binned coincidences of b relative to a (tau = t_b - t_a).

    g2 = counts * T / (N_a N_b dtau). Empty bins get g2_err equal to the
    one-count normalization so they still carry a finite error bar.
    """

    binning: BinningSpec
    counts: np.ndarray
    singles_a: int
    singles_b: int
    duration: float
    g2: np.ndarray
    g2_err: np.ndarray

    @property
    def tau(self):
        return self.binning.centers()

    @property
    def norm(self):
        """g2 per coincidence count."""
        den = self.singles_a * self.singles_b * self.binning.bin_width
        return self.duration / den if den > 0 else math.nan

    @property
    def accidentals_per_bin(self):
        return self.singles_a * self.singles_b * self.binning.bin_width / self.duration if self.duration > 0 else 0.0

    @classmethod
    def from_counts(cls, binning, counts, singles_a, singles_b, duration):
        counts = np.asarray(counts, dtype=np.int64)
        den = singles_a * singles_b * binning.bin_width
        norm = duration / den if den > 0 else math.nan
        g2 = counts * norm
        err = np.where(counts > 0, g2 / np.sqrt(np.maximum(counts, 1)), norm)
        return cls(binning, counts, int(singles_a), int(singles_b), float(duration), g2, err)


def _block_hist(a, b, lo_off, nb, bw):
    """Histogram of b - a over [lo_off, lo_off + nb*bw) ticks for one block of a."""
    hist = np.zeros(nb, dtype=np.int64)
    hi_off = lo_off + nb * bw
    lo = np.searchsorted(b, a + lo_off, side="left")
    hi = np.searchsorted(b, a + hi_off, side="left")
    n = hi - lo
    start = 0
    while start < a.size:
        # cut so at most _PAIR_LIMIT differences are expanded at once
        c = np.cumsum(n[start:])
        stop = start + max(1, int(np.searchsorted(c, _PAIR_LIMIT, side="right")))
        k = n[start:stop]
        tot = int(k.sum())
        if tot:
            first = np.repeat(lo[start:stop] - np.concatenate(([0], np.cumsum(k)[:-1])), k)
            idx = first + np.arange(tot)
            d = b[idx] - np.repeat(a[start:stop], k)
            hist += np.bincount((d - lo_off) // bw, minlength=nb)
        start = stop
    return hist


def cross_correlogram(a, b, binning, n_jobs=None):
    """Coincidence histogram of (t_b - t_a) over the binning range.

    Sorted-stream window search; blocks of `a` run in a thread pool and
    partial histograms are added in block order.
    """
    if a.resolution != b.resolution:
        raise ConfigError("streams have different resolutions")
    check_sorted(a, "stream a")
    check_sorted(b, "stream b")
    lo_off, bw = binning.in_ticks(a.resolution)
    nb = binning.n_bins
    ta, tb = a.ticks, b.ticks
    blocks = [ta[i:i + _BLOCK] for i in range(0, ta.size, _BLOCK)]
    counts = np.zeros(nb, dtype=np.int64)
    workers = min(max_workers(n_jobs), max(1, len(blocks)))
    if workers == 1:
        for blk in blocks:
            counts += _block_hist(blk, tb, lo_off, nb, bw)
    else:
        with ThreadPoolExecutor(workers) as ex:
            for h in ex.map(lambda blk: _block_hist(blk, tb, lo_off, nb, bw), blocks):
                counts += h
    duration = max(a.duration, b.duration)
    return CorrelogramResult.from_counts(binning, counts, len(a), len(b), duration)


@dataclass(frozen=True)
class HeraldedResult:
    window: float
    tau: float
    n_trigger: int
    n_tp1: int
    n_tp2: int
    n_triple: int
    g_conditional: float
    g_err: float

    @property
    def defined(self):
        return self.n_tp1 > 0 and self.n_tp2 > 0

    def as_dict(self):
        return {
            "window_s": self.window, "tau_s": self.tau, "n_trigger": self.n_trigger,
            "n_tp1": self.n_tp1, "n_tp2": self.n_tp2, "n_triple": self.n_triple,
            "g_conditional": None if not self.defined else self.g_conditional,
            "g_err": None if not self.defined else self.g_err, "defined": self.defined,
        }


def _window_hits(t, p, lo_off, hi_off):
    return np.searchsorted(p, t + lo_off, side="left") < np.searchsorted(p, t + hi_off, side="right")


def heralded_autocorr(trigger, p1, p2, tau, window):
    """Three-fold heralded autocorrelation with at-least-one-hit windows.

    A herald at t counts a hit on channel k when p_k has a tag in
    [t + tau - window/2, t + tau + window/2] (ticks rounded).
    """
    if not window > 0:
        raise DomainError("window must be positive")
    res = trigger.resolution
    if p1.resolution != res or p2.resolution != res:
        raise ConfigError("streams have different resolutions")
    for s, name in ((trigger, "trigger"), (p1, "p1"), (p2, "p2")):
        check_sorted(s, name)
    lo_off = int(round((tau - window / 2) / res))
    hi_off = int(round((tau + window / 2) / res))
    t = trigger.ticks
    h1 = _window_hits(t, p1.ticks, lo_off, hi_off)
    h2 = _window_hits(t, p2.ticks, lo_off, hi_off)
    nt, n1, n2 = t.size, int(h1.sum()), int(h2.sum())
    n3 = int(np.count_nonzero(h1 & h2))
    g, err = heralded_value(nt, n1, n2, n3)
    return HeraldedResult(window, tau, nt, n1, n2, n3, g, err)


def heralded_value(n_trigger, n_tp1, n_tp2, n_triple):
    """Estimate and delta-method error, treating the three hit categories
    (both, only 1, only 2) as independent Poisson counts."""
    if n_tp1 <= 0 or n_tp2 <= 0:
        return math.nan, math.nan
    g = n_triple * n_trigger / (n_tp1 * n_tp2)
    x3 = max(n_triple, 1)
    x1, x2 = n_tp1 - n_triple, n_tp2 - n_triple
    d3 = 1 / x3 - 1 / n_tp1 - 1 / n_tp2
    var = x3 * d3**2 + x1 / n_tp1**2 + x2 / n_tp2**2
    scale = g if n_triple > 0 else n_trigger / (n_tp1 * n_tp2)
    return g, scale * math.sqrt(var)


def peak_stats(result):
    """(peak_g2, peak_tau, fwhm) of the highest bin.

    A peak must clear 1 + 5 sigma of the accidental baseline, where
    sigma = 1/sqrt(expected accidentals per bin). FWHM interpolates
    linearly between bin centres at 1 + (peak - 1)/2; a crossing beyond
    the histogram falls back to the histogram edge.
    """
    counts, g = result.counts, result.g2
    if counts.size == 0 or not np.any(counts > 0):
        raise DomainError("no coincidences")
    i = int(np.argmax(g))
    pk = float(g[i])
    mu = result.accidentals_per_bin
    if mu <= 0 or pk < 1 + 5 / math.sqrt(mu):
        raise DomainError("no peak above the accidental baseline (1 + 5 sigma)")
    c = result.tau
    bw = result.binning.bin_width
    half = 1 + (pk - 1) / 2
    j = i
    while j > 0 and g[j - 1] > half:
        j -= 1
    if j == 0:
        left = result.binning.tau_min
    else:
        left = c[j - 1] + (half - g[j - 1]) / (g[j] - g[j - 1]) * bw
    k = i
    while k < g.size - 1 and g[k + 1] > half:
        k += 1
    if k == g.size - 1:
        right = result.binning.tau_max
    else:
        right = c[k] + (g[k] - half) / (g[k] - g[k + 1]) * bw
    return pk, float(c[i]), float(right - left)


class CrossCorrelator(BaseEstimator):
    """Estimator wrapper: fit(a, b) computes the correlogram."""

    def __init__(self, bin_width=1e-9, tau_min=-100e-9, tau_max=100e-9, n_jobs=None):
        self.bin_width = bin_width
        self.tau_min = tau_min
        self.tau_max = tau_max
        self.n_jobs = n_jobs

    def fit(self, a, b):
        binning = BinningSpec(self.bin_width, self.tau_min, self.tau_max)
        self.result_ = cross_correlogram(a, b, binning, self.n_jobs)
        self.tau_ = self.result_.tau
        self.g2_ = self.result_.g2
        return self

    def peak(self):
        check_is_fitted(self, "result_")
        return peak_stats(self.result_)


class HeraldedAutocorrelator(BaseEstimator):
    """Estimator wrapper: fit(trigger, p1, p2) computes the heralded g2."""

    def __init__(self, tau=0.0, window=2e-9):
        self.tau = tau
        self.window = window

    def fit(self, trigger, p1, p2):
        self.result_ = heralded_autocorr(trigger, p1, p2, self.tau, self.window)
        self.g_conditional_ = self.result_.g_conditional
        return self


__all__ = ["BinningSpec", "CorrelogramResult", "HeraldedResult", "cross_correlogram", "heralded_autocorr",
           "heralded_value", "peak_stats", "merge_streams", "read_ttag", "write_ttag", "TagStream",
           "CrossCorrelator", "HeraldedAutocorrelator", "max_workers"]

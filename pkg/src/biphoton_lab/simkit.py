"""Monte Carlo time-tag generation: source, detectors, delays, HBT split.

Thermal source model
--------------------
The heralded autocorrelation formulas assume the fourth-order moments of
a Gaussian (thermal) pair state; a Poisson cloud of independent pairs does
not reproduce them. The default `statistics="thermal"` realizes those
moments with a cluster process built in a lossless frame of rate
N = R_t R_p / R_pair, followed by independent losses eta_t = R_pair/R_p and
eta_p = R_pair/R_t:

* clusters at rate Q = N^2 * int K / 2, each holding two probes at s and
  s + d (d ~ K, a Gaussian coherence kernel of rms `coherence_time`) and
  two triggers drawn iid from the harmonic mean H(w(b - s), w(b - s - d))
  of the two waveform densities, normalized per cluster;
* true pairs with delay density P(tau) = N w(tau) - c(tau), where c is the
  cross-density the clusters already contribute;
* Poisson singles making up the remaining rate on each side.

The result has exactly the configured rates and g2(tau), bunched probes
(g2_pp(0) = 2) and the thermal three-fold moment at equal probe times.
Probe photons are emitted first; the trigger follows after tau ~ w.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import _rng
from .errors import DomainError, InvalidModelError
from .model import waveform_pdf
from .tags import (DEFAULT_RESOLUTION, TagStream, check_sorted, delay_stream, duration_ticks,
                   merge_streams, poisson_ticks, thin)

TRIGGER, PROBE, P1, P2 = 0, 1, 2, 3
CHUNK_S = 0.05  # fixed anchor-chunk length; part of the RNG stream layout
STATISTICS = ("thermal", "poisson")
DEFAULT_COHERENCE = 10e-9
_FINE_CELLS = 2**16
_COARSE_CELLS = 4096


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 1.0
    dark_rate: float = 0.0
    label: str = ""

    def __post_init__(self):
        if not (0 <= self.efficiency <= 1):
            raise InvalidModelError("detector efficiency must lie in [0, 1]")
        if not self.dark_rate >= 0:
            raise InvalidModelError("dark_rate must be >= 0")


class _Table:
    """Piecewise-constant density on uniform cells, sampled by inverse CDF."""

    def __init__(self, x0, h, mass):
        self.x0, self.h = x0, h
        self.cum = np.cumsum(mass)
        self.total = float(self.cum[-1])

    def sample(self, rng, n):
        u = rng.random(n) * self.total
        j = np.searchsorted(self.cum, u, side="right")
        j = np.minimum(j, self.cum.size - 1)
        prev = np.where(j > 0, self.cum[j - 1], 0.0)
        frac = (u - prev) / (self.cum[j] - prev)
        return self.x0 + (j + frac) * self.h


class SourcePlan:
    """Precomputed rates and samplers for one (model, statistics) choice."""

    def __init__(self, model, statistics="thermal", coherence_time=None, _probe=False):
        """`coherence_time=None` picks the largest kernel width up to
        DEFAULT_COHERENCE that keeps the cluster share of the cross-density
        at or below one half."""
        if coherence_time is None:
            coherence_time = DEFAULT_COHERENCE
            if statistics == "thermal" and model.pair_rate > 0:
                for _ in range(20):
                    frac = SourcePlan(model, statistics, coherence_time, _probe=True)._fraction
                    if frac <= 0.5 * (1 + 1e-9):
                        break
                    coherence_time *= 0.5 / frac
        if statistics not in STATISTICS:
            raise InvalidModelError(f"statistics must be one of {STATISTICS}")
        if model.pair_rate > min(model.trigger_rate, model.probe_rate) * (1 + 1e-12):
            raise InvalidModelError("pair_rate exceeds min(trigger_rate, probe_rate)")
        self.model = model
        self.statistics = statistics
        self.coherence_time = coherence_time
        L = model.support
        self.support = L
        h = L / _FINE_CELLS
        mid = (np.arange(_FINE_CELLS) + 0.5) * h
        w = waveform_pdf(model, mid)
        self.w_table = _Table(0.0, h, w * h)
        Rt, Rp, Rpair = model.trigger_rate, model.probe_rate, model.pair_rate
        self.thermal = statistics == "thermal" and Rpair > 0

        if not self.thermal:
            self.pad = L
            self.pair_rate = Rpair
            self.pair_table = self.w_table
            self.cluster_rate = 0.0
            self.single_rates = (Rt - Rpair, Rp - Rpair)
            self.losses = (1.0, 1.0)
            return

        if not coherence_time > 0:
            raise InvalidModelError("coherence_time must be positive")
        N = Rt * Rp / Rpair
        sig = coherence_time
        self.pad = L + 8 * sig
        self.losses = (Rpair / Rp, Rpair / Rt)
        self.cluster_rate = 0.5 * N**2 * sig * math.sqrt(2 * math.pi)

        # cross-density already supplied by clusters, as ratio r = c / w
        hc = min(L / _COARSE_CELLS, sig / 8)
        m = int(math.ceil(L / hc))
        xc = (np.arange(m) + 0.5) * hc
        wc = waveform_pdf(model, xc)
        kmax = int(math.ceil(6 * sig / hc))
        acc = np.zeros(m)
        for k in range(-kmax, kmax + 1):
            shifted = np.zeros(m)
            if k >= 0:
                shifted[: m - k] = wc[k:]
            else:
                shifted[-k:] = wc[: m + k]
            s = wc + shifted
            H = np.divide(2 * wc * shifted, s, out=np.zeros(m), where=s > 0)
            mh = H.sum() * hc
            if mh <= 0:
                continue
            kern = math.exp(-0.5 * (k * hc / sig) ** 2)
            acc += kern * H / mh
        c = 2 * N**2 * acc * hc
        r = np.divide(c, wc, out=np.zeros(m), where=wc > 0)
        r_fine = np.interp(mid, xc, r)
        worst = float(np.max(np.where(w > 0, r_fine, 0.0)) / N)
        self._fraction = worst
        if worst >= 1 and not _probe:
            raise InvalidModelError(
                f"thermal statistics not representable (cluster cross-density reaches {worst:.2f} "
                f"of the total); reduce coherence_time or use statistics='poisson'"
            )
        self.max_cluster_fraction = worst
        if _probe:
            return
        pair = w * (N - r_fine)
        self.pair_table = _Table(0.0, h, pair * h)
        self.pair_rate = self.pair_table.total
        single = N - self.pair_rate - 2 * self.cluster_rate
        if single < -1e-6 * N:
            raise InvalidModelError("negative singles rate in thermal construction")
        self.single_rates = (max(single, 0.0), max(single, 0.0))
        self.lossless_rate = N

    def _cluster_triggers(self, rng, a1, a2):
        """Two iid triggers per cluster from the harmonic-mean density."""
        model = self.model
        out = np.empty((2, a1.size))
        for j in range(2):
            todo = np.arange(a1.size)
            for _ in range(10_000):
                if todo.size == 0:
                    break
                k = rng.random(todo.size) < 0.5
                tau = self.w_table.sample(rng, todo.size)
                b = np.where(k, a1[todo], a2[todo]) + tau
                w1 = waveform_pdf(model, b - a1[todo])
                w2 = waveform_pdf(model, b - a2[todo])
                s = w1 + w2
                p = np.divide(4 * w1 * w2, s * s, out=np.zeros_like(s), where=s > 0)
                ok = rng.random(todo.size) < p
                out[j, todo[ok]] = b[ok]
                todo = todo[~ok]
            else:
                raise RuntimeError("cluster trigger rejection sampling did not converge")
        return out.ravel()

    def chunk(self, rng, start, stop):
        """Lossless-frame event times (s) for anchors in [start, stop)."""
        span = stop - start
        n = rng.poisson(self.pair_rate * span)
        p_pair = start + rng.random(n) * span
        t_pair = p_pair + self.pair_table.sample(rng, n)
        trig = [t_pair]
        probe = [p_pair]
        if self.cluster_rate > 0:
            n = rng.poisson(self.cluster_rate * span)
            a1 = start + rng.random(n) * span
            a2 = a1 + rng.normal(0.0, self.coherence_time, n)
            probe += [a1, a2]
            trig.append(self._cluster_triggers(rng, a1, a2))
        for side, dest in enumerate((trig, probe)):
            rate = self.single_rates[side]
            dest.append(start + rng.random(rng.poisson(rate * span)) * span)
        return np.concatenate(trig), np.concatenate(probe)


def _to_ticks(t, resolution, max_tick):
    k = np.rint(t / resolution).astype(np.int64)
    k = k[(k >= 0) & (k <= max_tick)]
    k.sort()
    return k


def iter_source_chunks(model, duration, seed, statistics="thermal", coherence_time=None,
                       resolution=DEFAULT_RESOLUTION, plan=None):
    """Yield (index, start_s, stop_s, trigger_ticks, probe_ticks) per anchor chunk.

    Each chunk is sorted on its own; chunks overlap in time by up to the
    waveform support. The chunk layout is fixed, so output depends only on
    (model, duration, seed).
    """
    if not duration > 0:
        raise DomainError("duration must be positive")
    plan = plan or SourcePlan(model, statistics, coherence_time)
    max_tick = duration_ticks(duration, resolution)
    lo, hi = -plan.pad, duration + plan.pad
    edges = np.arange(lo, hi, CHUNK_S)
    edges = np.append(edges, hi)
    eta_t, eta_p = plan.losses
    for i in range(edges.size - 1):
        rng = _rng.stage_rng(seed, "source", i)
        trig, probe = plan.chunk(rng, edges[i], edges[i + 1])
        trig = thin(rng, trig, eta_t)
        probe = thin(rng, probe, eta_p)
        yield (i, edges[i], edges[i + 1],
               _to_ticks(trig, resolution, max_tick), _to_ticks(probe, resolution, max_tick))


def simulate_source(model, duration, seed, statistics="thermal", coherence_time=None,
                    resolution=DEFAULT_RESOLUTION):
    """Trigger and probe streams of the bare source (lossless detection)."""
    trig, probe = [], []
    for _, _, _, t, p in iter_source_chunks(model, duration, seed, statistics, coherence_time, resolution):
        trig.append(t)
        probe.append(p)
    t = np.sort(np.concatenate(trig), kind="stable")
    p = np.sort(np.concatenate(probe), kind="stable")
    return (TagStream(t, duration, TRIGGER, resolution, validate=False),
            TagStream(p, duration, PROBE, resolution, validate=False))


def apply_detector(stream, det, duration, seed, noise_span=None):
    """Thin by the detector efficiency and merge Poisson dark counts."""
    check_sorted(stream)
    rng = _rng.stage_rng(seed, "detector-trigger")
    kept = thin(rng, stream.ticks, det.efficiency)
    out = TagStream(kept, duration, stream.channel, stream.resolution, validate=False)
    start, stop = noise_span if noise_span is not None else (0, out.max_tick + 1)
    dark = poisson_ticks(rng, det.dark_rate, start, stop, stream.resolution)
    if dark.size == 0:
        return out
    return merge_streams([out, out.with_ticks(dark)])


def hbt_split(stream, seed, channels=(P1, P2)):
    """Route each tag to one of two outputs with probability 1/2."""
    check_sorted(stream)
    rng = _rng.stage_rng(seed, "hbt")
    first = rng.random(len(stream)) < 0.5
    t = stream.ticks
    return (TagStream(t[first], stream.duration, channels[0], stream.resolution, validate=False),
            TagStream(t[~first], stream.duration, channels[1], stream.resolution, validate=False))


class Detector(TransformerMixin, BaseEstimator):
    """Estimator wrapper around apply_detector."""

    def __init__(self, efficiency=1.0, dark_rate=0.0, seed=0):
        self.efficiency = efficiency
        self.dark_rate = dark_rate
        self.seed = seed

    def fit(self, X=None, y=None):
        self.spec_ = DetectorSpec(self.efficiency, self.dark_rate)
        return self

    def transform(self, X):
        spec = getattr(self, "spec_", None) or DetectorSpec(self.efficiency, self.dark_rate)
        return apply_detector(X, spec, X.duration, self.seed)


__all__ = ["DetectorSpec", "SourcePlan", "simulate_source", "iter_source_chunks", "apply_detector",
           "hbt_split", "delay_stream", "Detector", "TRIGGER", "PROBE", "P1", "P2"]

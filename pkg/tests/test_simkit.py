import math

import numpy as np
import pytest

from biphoton_lab.correlator import BinningSpec, cross_correlogram, heralded_autocorr
from biphoton_lab.errors import DomainError, InvalidModelError, OrderingError
from biphoton_lab.model import BiphotonModel, eval_cross_correlation, with_peak_g2
from biphoton_lab.simkit import (P1, P2, Detector, DetectorSpec, SourcePlan, apply_detector, hbt_split,
                                 simulate_source)
from biphoton_lab.tags import TagStream, merge_streams
from oracles import brute_heralded

EXP = with_peak_g2(BiphotonModel("exponential-decay", tau_decay=20e-9 / math.log(2),
                                 trigger_rate=3e5, probe_rate=2e5, pair_rate=1.0), 5.0)


def test_source_validation():
    with pytest.raises(InvalidModelError):
        simulate_source(EXP.replace(pair_rate=2.5e5), 0.01, seed=1)
    with pytest.raises(DomainError):
        simulate_source(EXP, 0.0, seed=1)
    with pytest.raises(InvalidModelError):
        SourcePlan(EXP, statistics="laser")


def test_poisson_count_oracle(fig2_model):
    D = 1.0
    t, p = simulate_source(fig2_model, D, seed=5, statistics="poisson")
    for s, rate in ((t, 1.4e6), (p, 8.9e5)):
        n = rate * D
        assert abs(len(s) - n) < 4 * math.sqrt(n)
        assert np.all(np.diff(s.ticks) >= 0)
        assert s.ticks[-1] <= s.max_tick


def test_thermal_count_oracle(fig2_model):
    # clusters emit two photons of a side, each kept with eta: the count
    # variance exceeds the mean by Q * 2 eta^2 per unit time
    D = 1.0
    plan = SourcePlan(fig2_model)
    t, p = simulate_source(fig2_model, D, seed=5)
    for s, rate, eta in ((t, 1.4e6, plan.losses[0]), (p, 8.9e5, plan.losses[1])):
        var = rate * D + plan.cluster_rate * 2 * eta**2 * D
        assert abs(len(s) - rate * D) < 4 * math.sqrt(var)


def test_source_determinism():
    a = simulate_source(EXP, 0.02, seed=9)
    b = simulate_source(EXP, 0.02, seed=9)
    c = simulate_source(EXP, 0.02, seed=10)
    for x, y in zip(a, b):
        assert np.array_equal(x.ticks, y.ticks)
    assert not np.array_equal(a[0].ticks, c[0].ticks)


def test_uncorrelated_source_flat():
    m = EXP.replace(pair_rate=0.0)
    t, p = simulate_source(m, 0.5, seed=2)
    r = cross_correlogram(t, p, BinningSpec(5e-9, -200e-9, 200e-9))
    assert np.all(np.abs(r.g2 - 1) < 4 * r.g2_err)


def _fidelity(duration, seed):
    t, p = simulate_source(EXP, duration, seed=seed)
    b = BinningSpec(2e-9, -100e-9, 300e-9)
    return cross_correlogram(p, t, b)


def test_end_to_end_fidelity():
    # t_trigger - t_probe = tau, so the correlogram of (probe, trigger) is the waveform
    r = _fidelity(1.0, 4)
    b = r.binning
    k = EXP.pair_rate / (EXP.trigger_rate * EXP.probe_rate)
    edges = b.edges()
    # bin-averaged ideal via the closed-form exponential CDF
    cdf = lambda x: np.where(x > 0, 1 - np.exp(-np.maximum(x, 0) / EXP.tau_decay), 0.0)  # noqa: E731
    ideal = 1 + k * (cdf(edges[1:]) - cdf(edges[:-1])) / b.bin_width
    expected = ideal * r.accidentals_per_bin
    sel = expected >= 100
    z = (r.g2 - ideal) / r.g2_err
    assert sel.sum() > 150
    assert np.all(np.abs(z[sel]) < 3), np.abs(z[sel]).max()
    base = np.abs(b.centers()) > 10 * EXP.tau_decay
    mean = r.g2[base].mean()
    sig = math.sqrt(np.sum(r.g2_err[base] ** 2)) / base.sum()
    assert abs(mean - 1) < 4 * sig
    assert eval_cross_correlation(EXP, EXP.peak_tau) == pytest.approx(5.0)


def test_error_bars_scale():
    short, long_ = _fidelity(0.25, 6), _fidelity(1.0, 7)
    i = np.argmax(long_.g2)
    ratio = short.g2_err[i - 2:i + 3].mean() / long_.g2_err[i - 2:i + 3].mean()
    assert ratio == pytest.approx(2.0, rel=0.2)


def test_thinning_invariance():
    t, p = simulate_source(EXP, 1.0, seed=8)
    b = BinningSpec(4e-9, 0.0, 8e-9)
    full = cross_correlogram(p, t, b)
    det = DetectorSpec(0.5)
    tt = apply_detector(t, det, t.duration, seed=1)
    pp = apply_detector(p, det, p.duration, seed=2)
    thin = cross_correlogram(pp, tt, b)
    diff = thin.g2 - full.g2
    assert np.all(np.abs(diff) < 3 * np.hypot(thin.g2_err, full.g2_err))


def test_thermal_vs_poisson_probe_bunching():
    m = EXP
    plan = SourcePlan(m)
    assert plan.coherence_time > 2e-9
    out = {}
    for stats in ("thermal", "poisson"):
        _, p = simulate_source(m, 1.0, seed=3, statistics=stats)
        a, b = hbt_split(p, seed=4)
        r = cross_correlogram(a, b, BinningSpec(2e-9, -1e-9, 1e-9))
        out[stats] = (r.g2[0], r.g2_err[0])
    g, e = out["thermal"]
    # 1 + exp(-d^2 / 2 s^2) averaged over |d| < 1 ns
    s = plan.coherence_time
    d = np.linspace(-1e-9, 1e-9, 2001)
    ideal = 1 + np.exp(-d**2 / (2 * s**2)).mean()
    assert abs(g - ideal) < 3 * e
    g, e = out["poisson"]
    assert abs(g - 1) < 3 * e


def test_detector_examples():
    s = TagStream(np.arange(10**6) * 10, 1e-5)
    same = apply_detector(s, DetectorSpec(), s.duration, seed=1)
    assert np.array_equal(same.ticks, s.ticks)
    out = apply_detector(s, DetectorSpec(0.24), s.duration, seed=1)
    n, p = 10**6, 0.24
    assert abs(len(out) - n * p) < 4 * math.sqrt(n * p * (1 - p))
    empty = TagStream(np.empty(0, np.int64), 10.0)
    dark = apply_detector(empty, DetectorSpec(dark_rate=100.0), 10.0, seed=2)
    assert abs(len(dark) - 1000) < 4 * math.sqrt(1000)
    assert np.all(np.diff(dark.ticks) >= 0)
    with pytest.raises(OrderingError):
        apply_detector(TagStream(np.array([5, 1]), 1e-9, validate=False), DetectorSpec(), 1e-9, seed=0)
    for kw in ({"efficiency": 1.1}, {"dark_rate": -1.0}):
        with pytest.raises(InvalidModelError):
            DetectorSpec(**kw)


def test_detector_estimator():
    s = TagStream(np.arange(1000), 1e-9)
    out = Detector(efficiency=0.5, seed=3).fit().transform(s)
    again = apply_detector(s, DetectorSpec(0.5), s.duration, seed=3)
    assert np.array_equal(out.ticks, again.ticks)


def test_hbt_partition_and_balance():
    rng = np.random.default_rng(0)
    s = TagStream(np.sort(rng.integers(0, 10**9, 200_000)), 1e-3)
    a, b = hbt_split(s, seed=5)
    assert (a.channel, b.channel) == (P1, P2)
    assert abs(len(a) - len(b)) < 4 * math.sqrt(len(s))
    assert np.array_equal(merge_streams([a, b]).ticks, s.ticks)
    for x in (a, b):
        assert np.all(np.diff(x.ticks) >= 0)


def test_single_photon_never_splits():
    # isolated single pairs: each herald window holds at most one probe photon
    m = EXP.replace(trigger_rate=1e3, probe_rate=1e3, pair_rate=1e3)
    t, p = simulate_source(m, 0.1, seed=12, statistics="poisson")
    a, b = hbt_split(p, seed=13)
    lo, hi = -200_000, 0
    n, n1, n2, n3 = brute_heralded(t.ticks, a.ticks, b.ticks, lo, hi)
    assert n > 50
    assert n3 == 0
    assert n1 + n2 == n
    r = heralded_autocorr(t, a, b, -100e-9, 200e-9)
    assert (r.n_tp1, r.n_tp2, r.n_triple) == (n1, n2, n3)

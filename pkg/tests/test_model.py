import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from biphoton_lab.errors import DomainError, InvalidModelError, ResolutionError, SpectralResolutionWarning
from biphoton_lab.model import (BiphotonModel, SourceSettings, eval_conditional_autocorr,
                                eval_cross_correlation, fit_damped_oscillation, pairing_ratios,
                                waveform_fwhm, waveform_pdf, waveform_spectrum_fwhm, with_peak_g2)
from oracles import (EXP20_SPECTRAL_FWHM_HZ, FIG2_ANALYTIC_SPECTRAL_FWHM_HZ, FIG2_PEAK_DENSITY,
                     FIG2_PEAK_TAU_S)

EXP20 = BiphotonModel("exponential-decay", tau_decay=20e-9 / math.log(2), pair_rate=1e5,
                      trigger_rate=1e6, probe_rate=1e6)


def _norm(model):
    m = model
    pts = [m.tau_rise] if m.tau_rise else None
    return integrate.quad(lambda x: waveform_pdf(m, x), 0, m.support, points=pts, limit=4000,
                          epsabs=1e-13)[0]


def test_exponential_causal_and_fwhm():
    assert waveform_pdf(EXP20, -1e-9) == 0.0
    assert waveform_pdf(EXP20, np.array([-5e-9, -1e-12])).tolist() == [0.0, 0.0]
    assert waveform_fwhm(EXP20) == pytest.approx(20e-9, rel=1e-9)


def test_invalid_tau_decay():
    for td in (0.0, -1e-9):
        with pytest.raises(InvalidModelError):
            BiphotonModel("exponential-decay", tau_decay=td)


def test_invalid_rates_and_kind():
    with pytest.raises(InvalidModelError):
        BiphotonModel(pair_rate=2.0, trigger_rate=1.0, probe_rate=5.0)
    with pytest.raises(InvalidModelError):
        BiphotonModel("gaussian")
    with pytest.raises(InvalidModelError):
        BiphotonModel("damped-oscillation", oscillation_freq=0.0)
    with pytest.raises(InvalidModelError):
        BiphotonModel("tabulated")


def test_settings_allow_signed_detuning():
    s = SourceSettings(optical_depth=8, omega_1=0.9, omega_2=4, delta_1=-4, gamma_21=0.001)
    assert s.delta_1 == -4
    with pytest.raises(InvalidModelError):
        SourceSettings(optical_depth=float("nan"))


def test_pdf_rejects_nonfinite_tau():
    with pytest.raises(DomainError):
        waveform_pdf(EXP20, float("inf"))


@pytest.mark.parametrize("model", [
    EXP20,
    BiphotonModel("exponential-decay", tau_decay=10e-9, tau_rise=5e-9),
    BiphotonModel("damped-oscillation", tau_decay=46e-9, oscillation_freq=25e6),
    BiphotonModel("damped-oscillation", tau_decay=5e-9, oscillation_freq=300e6),
    BiphotonModel("tabulated", tau_decay=10e-9,
                  samples=(np.linspace(0, 50e-9, 40).tolist(),
                           (np.linspace(0, 50e-9, 40) * np.exp(-np.linspace(0, 5, 40))).tolist())),
])
def test_normalization(model):
    assert _norm(model) == pytest.approx(1.0, abs=1e-6)


def test_fig2_peak_matches_dense_grid_oracle(fig2_model):
    assert fig2_model.peak_tau == pytest.approx(FIG2_PEAK_TAU_S, abs=2e-14)
    assert fig2_model.peak_density == pytest.approx(FIG2_PEAK_DENSITY, rel=1e-9)
    assert fig2_model.peak_g2 == pytest.approx(18.0, abs=1e-6)
    assert eval_cross_correlation(fig2_model, fig2_model.peak_tau) == pytest.approx(18.0, abs=1e-6)
    assert waveform_fwhm(fig2_model) == pytest.approx(20e-9, rel=1e-6)


def test_peak_cache_matches_dense_grid(fig2_model):
    grid = np.linspace(0, 200e-9, 2_000_001)
    assert np.max(eval_cross_correlation(fig2_model, grid)) == pytest.approx(fig2_model.peak_g2, abs=1e-6)


def test_fit_damped_oscillation_recovers_fig2(fig2_model):
    f, td = fit_damped_oscillation(20e-9, fig2_model.peak_density)
    assert f == pytest.approx(fig2_model.oscillation_freq, rel=1e-6)
    assert td == pytest.approx(fig2_model.tau_decay, rel=1e-6)


def test_cross_correlation_baseline_and_uncorrelated(fig2_model):
    # exponential family: (g - 1) e^-10 < 1e-3 for peaks up to ~23
    m = with_peak_g2(EXP20, 18.0)
    tau = np.linspace(10 * m.tau_decay, 40 * m.tau_decay, 1000)
    assert np.all(np.abs(eval_cross_correlation(m, tau) - 1) < 1e-3)
    # the damped oscillation halves the normalization area, so its envelope
    # at 10 tau_decay is 1.17e-3 above baseline; it drops below 1e-3 by 10.2
    envelope = 17 * math.exp(-10) / (fig2_model.peak_density * fig2_model._area)
    assert envelope == pytest.approx(1.17e-3, abs=1e-5)
    tau = np.linspace(10.2 * fig2_model.tau_decay, 40 * fig2_model.tau_decay, 5000)
    assert np.all(np.abs(eval_cross_correlation(fig2_model, tau) - 1) < 1e-3)
    assert np.all(np.abs(eval_cross_correlation(fig2_model, tau / 10.2 * 10) - 1) < 1.2e-3)
    assert eval_cross_correlation(fig2_model, -50e-9) == 1.0
    flat = EXP20.replace(pair_rate=0.0)
    assert np.all(eval_cross_correlation(flat, np.linspace(-1e-7, 1e-6, 101)) == 1.0)


def test_cross_correlation_proportional_to_pdf(fig2_model):
    tau = np.linspace(-10e-9, 300e-9, 5001)
    k = fig2_model.pair_rate / (fig2_model.trigger_rate * fig2_model.probe_rate)
    diff = eval_cross_correlation(fig2_model, tau) - 1 - k * waveform_pdf(fig2_model, tau)
    assert np.max(np.abs(diff)) < 1e-12


def test_conditional_autocorr_values():
    assert eval_conditional_autocorr(18) == pytest.approx(70 / 324, abs=1e-15)
    assert round(eval_conditional_autocorr(18), 2) == 0.22
    assert eval_conditional_autocorr(1) == 2.0
    assert eval_conditional_autocorr(1e6) == pytest.approx(4e-6, rel=1e-5)
    with pytest.raises(DomainError):
        eval_conditional_autocorr(0.99)


@given(st.floats(2, 100), st.floats(1e-6, 1))
def test_conditional_autocorr_decreasing(g, dg):
    assert eval_conditional_autocorr(g + dg) < eval_conditional_autocorr(g)


@given(st.floats(1, 1e6))
def test_conditional_autocorr_range(g):
    v = eval_conditional_autocorr(g)
    assert 0 < v <= 2


def test_pairing_ratios(fig2_model):
    rp, rt = pairing_ratios(fig2_model)
    assert rp == pytest.approx(0.820, abs=5e-4)
    assert rt == pytest.approx(0.521, abs=5e-4)
    assert pairing_ratios(BiphotonModel(pair_rate=3, trigger_rate=3, probe_rate=3)) == (1.0, 1.0)
    assert pairing_ratios(BiphotonModel(pair_rate=0, trigger_rate=3, probe_rate=3)) == (0.0, 0.0)
    with pytest.raises(DomainError):
        pairing_ratios(BiphotonModel(pair_rate=0, trigger_rate=0, probe_rate=3))


def test_spectrum_fwhm_exponential_matches_lorentzian():
    assert waveform_spectrum_fwhm(EXP20) == pytest.approx(EXP20_SPECTRAL_FWHM_HZ, rel=1e-2)


def test_spectrum_fwhm_fig2_matches_closed_form(fig2_model):
    w = waveform_spectrum_fwhm(fig2_model)
    df = 1 / (64 * fig2_model.tau_decay)
    assert abs(w - FIG2_ANALYTIC_SPECTRAL_FWHM_HZ) < df


def test_spectrum_deterministic(fig2_model):
    assert waveform_spectrum_fwhm(fig2_model) == waveform_spectrum_fwhm(fig2_model)


@pytest.mark.parametrize("kind", ["exponential-decay", "damped-oscillation"])
def test_spectrum_scaling(kind):
    m = BiphotonModel(kind, tau_decay=30e-9, oscillation_freq=20e6)
    m2 = m.replace(tau_decay=60e-9, oscillation_freq=10e6)
    assert waveform_spectrum_fwhm(m2) == pytest.approx(waveform_spectrum_fwhm(m) / 2, rel=1e-9)


def test_spectrum_resolution_guard():
    tau = np.linspace(0, 10e-9, 10)
    m = BiphotonModel("tabulated", tau_decay=5e-9, samples=(tau, np.ones(10)))
    with pytest.raises(ResolutionError):
        waveform_spectrum_fwhm(m)
    # delta-like pulse on a fixed grid: a spike narrower than the grid step
    tau = np.linspace(0, 1e-6, 64)
    dens = np.zeros(64)
    dens[1] = 1.0
    dt = tau[1]
    spike = BiphotonModel("tabulated", tau_decay=dt * 2**10 / 64, samples=(tau, dens))
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        w = waveform_spectrum_fwhm(spike, n=2**10)
    assert any(issubclass(r.category, SpectralResolutionWarning) for r in rec)
    assert w >= 1 / (64 * spike.tau_decay)
    # a spike that falls between samples is not representable at all
    missed = BiphotonModel("tabulated", tau_decay=1e-6, samples=(tau, dens))
    with pytest.raises(ResolutionError):
        waveform_spectrum_fwhm(missed, n=2**10)


def test_with_peak_g2(fig2_model):
    m = with_peak_g2(fig2_model.replace(trigger_rate=2e6, probe_rate=2e6), 5.0)
    assert m.peak_g2 == pytest.approx(5.0, rel=1e-12)

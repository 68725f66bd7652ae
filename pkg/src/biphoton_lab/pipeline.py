"""Pipeline configuration (JSON, schema-validated), presets, and the
chunked source -> fiber -> converter -> HBT -> detector chain."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np
from scipy.integrate import quad

from . import _rng
from .convchan import (ConversionChannelSpec, ConverterSettings, Spectrum, calibrate_window_shape,
                       conversion_efficiency, transform_stream)
from .correlator import BinningSpec, max_workers
from .errors import ConfigError
from .model import BiphotonModel, SourceSettings, waveform_pdf, waveform_spectrum_fwhm
from .purity import PurityParams, noise_rate_for_purity
from .simkit import (P1, P2, PROBE, TRIGGER, DetectorSpec, SourcePlan, apply_detector, hbt_split,
                     iter_source_chunks)
from .tags import DEFAULT_RESOLUTION, TagStream, delay_stream, duration_ticks

CHANNELS = {"trigger": TRIGGER, "p1": P1, "p2": P2}

# fig. 2 wavepacket: damped oscillation solved for a 20 ns main-lobe FWHM
# and peak g2 = 18 at the quoted rates
FIG2_OSC_FREQ_HZ = 24800073.45946276
FIG2_TAU_DECAY_S = 4.634562723791514e-08


@dataclass(frozen=True)
class ConversionConfig:
    spec: ConversionChannelSpec = field(default_factory=ConversionChannelSpec)
    efficiency: float | None = None  # None: overlap with the source spectrum


@dataclass(frozen=True)
class PipelineConfig:
    source: BiphotonModel
    duration: float
    source_settings: SourceSettings = field(default_factory=SourceSettings)
    statistics: str = "thermal"
    coherence_time: float | None = None
    detectors: dict = field(default_factory=lambda: {k: DetectorSpec() for k in CHANNELS})
    fiber_delay: float = 100e-9
    conversion: ConversionConfig | None = None
    duty_cycle: float = 1.0
    seed: int = 0
    binning: BinningSpec = BinningSpec(1e-9, -1000e-9, 500e-9)
    herald_window: float = 2e-9
    herald_tau: float | None = None
    output_dir: str = "out"
    metadata: dict = field(default_factory=dict)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # --- derived quantities --------------------------------------------
    @property
    def total_delay(self):
        """Delay added to the partner channel relative to the trigger."""
        return self.fiber_delay + (self.conversion.spec.group_delay if self.conversion else 0.0)

    @property
    def conversion_efficiency(self):
        if self.conversion is None:
            return 1.0
        if self.conversion.efficiency is not None:
            return self.conversion.efficiency
        return conversion_efficiency(self.conversion.spec, Spectrum.from_model(self.source))

    @property
    def peak_delay(self):
        """Correlator delay (partner minus trigger) of the model peak."""
        return self.total_delay - self.source.peak_tau

    @property
    def resolved_herald_tau(self):
        return self.peak_delay if self.herald_tau is None else self.herald_tau

    def expected_rates(self):
        """Per-channel (signal, noise) detection rates in events/s."""
        m, d = self.source, self.detectors
        sig_t = m.trigger_rate * d["trigger"].efficiency
        sig_p = m.probe_rate * self.conversion_efficiency
        noise_p = self.conversion.spec.added_noise_rate if self.conversion else 0.0
        out = {"trigger": (sig_t, d["trigger"].dark_rate)}
        for k in ("p1", "p2"):
            eff = d[k].efficiency
            out[k] = (sig_p / 2 * eff, noise_p / 2 * eff + d[k].dark_rate)
        return out

    def expected_purities(self):
        r = self.expected_rates()
        st, nt = r["trigger"]
        sp = r["p1"][0] + r["p2"][0]
        npn = r["p1"][1] + r["p2"][1]
        pt = st / (st + nt) if st + nt > 0 else 1.0
        pp = sp / (sp + npn) if sp + npn > 0 else 1.0
        return PurityParams(pt, pp)

    def ideal_g2(self, delay):
        """Ideal cross-correlation at correlator delay(s)."""
        m = self.source
        k = m.pair_rate / (m.trigger_rate * m.probe_rate)
        return 1 + k * waveform_pdf(m, self.total_delay - np.asarray(delay, float))

    def ideal_window_g2(self, center, width):
        """Ideal cross-correlation averaged over [center - width/2, center + width/2]."""
        m = self.source
        k = m.pair_rate / (m.trigger_rate * m.probe_rate)
        lo = self.total_delay - center - width / 2
        hi = lo + width
        pts = [x for x in (0.0, m.peak_tau) if lo < x < hi]
        mass = quad(lambda x: waveform_pdf(m, x), lo, hi, points=pts or None, limit=200,
                    epsabs=1e-14, epsrel=1e-12)[0]
        return 1 + k * mass / width


# --- JSON (de)serialization ---------------------------------------------------

def _schema():
    text = resources.files("biphoton_lab").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


SCHEMA = _schema()


def validate_dict(d):
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(d), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(e.message, path)


def config_from_dict(d):
    """Validate and build a PipelineConfig; errors carry the JSON path."""
    validate_dict(d)
    d = copy.deepcopy(d)
    s = d["source"]
    st = s.get("settings", {})
    settings = SourceSettings(
        optical_depth=st.get("optical_depth", 0.0), omega_1=st.get("omega_1_gamma", 0.0),
        omega_2=st.get("omega_2_gamma", 0.0), delta_1=st.get("delta_1_gamma", 0.0),
        gamma_21=st.get("gamma_21_gamma", 0.0), Gamma=st.get("Gamma_rad_per_s", 2 * math.pi * 6e6))
    samples = s.get("samples")
    try:
        model = BiphotonModel(
            waveform_kind=s["waveform_kind"], tau_decay=s["tau_decay_s"], tau_rise=s.get("tau_rise_s", 0.0),
            oscillation_freq=s.get("oscillation_freq_hz", 0.0), pair_rate=s["pair_rate_hz"],
            trigger_rate=s["trigger_rate_hz"], probe_rate=s["probe_rate_hz"],
            samples=(samples["tau_s"], samples["density_per_s"]) if samples else None, settings=settings)
    except ValueError as e:
        raise ConfigError(str(e), "source") from e
    dets = {}
    for k in CHANNELS:
        dd = d.get("detectors", {}).get(k, {})
        dets[k] = DetectorSpec(dd.get("efficiency", 1.0), dd.get("dark_rate_hz", 0.0), dd.get("label", ""))
    conv = None
    c = d.get("conversion")
    if c is not None:
        cs = c.get("settings", {})
        csettings = ConverterSettings(
            optical_depth=cs.get("optical_depth", 0.0), omega_c=cs.get("omega_c_gamma", 0.0),
            omega_d=cs.get("omega_d_gamma", 0.0), delta_p=cs.get("delta_p_gamma", 0.0),
            delta_c=cs.get("delta_c_gamma", 0.0), delta_d=cs.get("delta_d_gamma", 0.0))
        try:
            spec = ConversionChannelSpec(
                window_fwhm=c.get("window_fwhm_hz", 40e6), window_order=c.get("window_order", 2.0),
                window_center_offset=c.get("window_center_offset_hz", 0.0),
                peak_efficiency=c.get("peak_efficiency", 0.794), group_delay=c.get("group_delay_s", 55e-9),
                added_noise_rate=c.get("added_noise_rate_hz", 0.0), settings=csettings)
        except ValueError as e:
            raise ConfigError(str(e), "conversion") from e
        conv = ConversionConfig(spec, c.get("efficiency"))
    b = d.get("binning")
    try:
        binning = BinningSpec(b["bin_width_s"], b["tau_min_s"], b["tau_max_s"]) if b else PipelineConfig.binning
    except ConfigError as e:
        raise ConfigError(str(e), "binning") from e
    if binning.bin_width < DEFAULT_RESOLUTION:
        raise ConfigError("bin width below the tick resolution", "binning/bin_width_s")
    cfg = PipelineConfig(
        source=model, duration=d["duration_s"], source_settings=settings,
        statistics=s.get("statistics", "thermal"), coherence_time=s.get("coherence_time_s"),
        detectors=dets, fiber_delay=d.get("fiber_delay_s", 100e-9), conversion=conv,
        duty_cycle=d.get("duty_cycle", 1.0), seed=d.get("seed", 0), binning=binning,
        herald_window=d.get("herald_window_s", 2e-9), herald_tau=d.get("herald_tau_s"),
        output_dir=d.get("output_dir", "out"), metadata=d.get("metadata", {}))
    return cfg


def config_to_dict(cfg):
    """Canonical JSON-ready dict; config_from_dict(config_to_dict(c)) == c."""
    m, st = cfg.source, cfg.source_settings
    src = {
        "waveform_kind": m.waveform_kind, "tau_rise_s": m.tau_rise, "tau_decay_s": m.tau_decay,
        "oscillation_freq_hz": m.oscillation_freq, "pair_rate_hz": m.pair_rate,
        "trigger_rate_hz": m.trigger_rate, "probe_rate_hz": m.probe_rate,
        "statistics": cfg.statistics, "coherence_time_s": cfg.coherence_time,
        "settings": {"optical_depth": st.optical_depth, "omega_1_gamma": st.omega_1,
                     "omega_2_gamma": st.omega_2, "delta_1_gamma": st.delta_1,
                     "gamma_21_gamma": st.gamma_21, "Gamma_rad_per_s": st.Gamma},
    }
    if m.samples is not None:
        src["samples"] = {"tau_s": list(m.samples[0]), "density_per_s": list(m.samples[1])}
    out = {
        "source": src,
        "detectors": {k: {"efficiency": v.efficiency, "dark_rate_hz": v.dark_rate, "label": v.label}
                      for k, v in cfg.detectors.items()},
        "fiber_delay_s": cfg.fiber_delay,
        "conversion": None,
        "duration_s": cfg.duration, "duty_cycle": cfg.duty_cycle, "seed": cfg.seed,
        "binning": {"bin_width_s": cfg.binning.bin_width, "tau_min_s": cfg.binning.tau_min,
                    "tau_max_s": cfg.binning.tau_max},
        "herald_window_s": cfg.herald_window, "herald_tau_s": cfg.herald_tau,
        "output_dir": cfg.output_dir, "metadata": copy.deepcopy(cfg.metadata),
    }
    if cfg.conversion is not None:
        sp, cs = cfg.conversion.spec, cfg.conversion.spec.settings
        out["conversion"] = {
            "window_fwhm_hz": sp.window_fwhm, "window_order": sp.window_order,
            "window_center_offset_hz": sp.window_center_offset, "peak_efficiency": sp.peak_efficiency,
            "group_delay_s": sp.group_delay, "added_noise_rate_hz": sp.added_noise_rate,
            "efficiency": cfg.conversion.efficiency,
            "settings": {"optical_depth": cs.optical_depth, "omega_c_gamma": cs.omega_c,
                         "omega_d_gamma": cs.omega_d, "delta_p_gamma": cs.delta_p,
                         "delta_c_gamma": cs.delta_c, "delta_d_gamma": cs.delta_d},
        }
    return out


def canonical_json(d):
    return json.dumps(d, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg):
    return hashlib.sha256(canonical_json(config_to_dict(cfg)).encode()).hexdigest()


# --- presets ------------------------------------------------------------------

def fig2_model():
    return BiphotonModel("damped-oscillation", tau_decay=FIG2_TAU_DECAY_S,
                         oscillation_freq=FIG2_OSC_FREQ_HZ, pair_rate=7.3e5,
                         trigger_rate=1.4e6, probe_rate=8.9e5)


FIG2_SETTINGS = {"optical_depth": 8, "omega_1_gamma": 0.9, "omega_2_gamma": 4.0, "delta_1_gamma": -4.0,
                 "gamma_21_gamma": 0.001, "Gamma_rad_per_s": 2 * math.pi * 6e6}


def _fig2_dict():
    m = fig2_model()
    return {
        "source": {
            "waveform_kind": m.waveform_kind, "tau_rise_s": 0.0, "tau_decay_s": m.tau_decay,
            "oscillation_freq_hz": m.oscillation_freq, "pair_rate_hz": m.pair_rate,
            "trigger_rate_hz": m.trigger_rate, "probe_rate_hz": m.probe_rate,
            "statistics": "thermal", "coherence_time_s": None, "settings": dict(FIG2_SETTINGS),
        },
        # visible-path collection efficiency; the quoted peak of 18 is after
        # leakage and dark-count correction, so no dark counts here
        "detectors": {k: {"efficiency": 0.24, "dark_rate_hz": 0.0, "label": "Si SPCM"} for k in CHANNELS},
        "fiber_delay_s": 100e-9,
        "conversion": None,
        "duration_s": 30.0, "duty_cycle": 1.0, "seed": 20240818,
        "binning": {"bin_width_s": 1e-9, "tau_min_s": -1000e-9, "tau_max_s": 500e-9},
        "herald_window_s": 2e-9, "herald_tau_s": None, "output_dir": "fig2-out",
        "metadata": {"preset": "fig2-source", "peak_g2_target": 18, "intensity_fwhm_s": 20e-9},
    }


def _fig3_dict(p_trigger=0.89, p_signal=0.54, broadband_target=0.55, narrowband_target=0.794):
    d = _fig2_dict()
    m = fig2_model()
    spec = calibrate_window_shape(narrowband_target, broadband_target, Spectrum.from_model(m),
                                  base=ConversionChannelSpec(group_delay=55e-9), order_bounds=(0.5, 8.0))
    eff = conversion_efficiency(spec, Spectrum.from_model(m))
    t_eff, s_eff = 0.24, 0.57
    trig_dark = noise_rate_for_purity(m.trigger_rate * t_eff, p_trigger)
    # noise enters before the telecom detectors, which thin it like the signal
    added = noise_rate_for_purity(m.probe_rate * eff, p_signal)
    d["detectors"] = {
        "trigger": {"efficiency": t_eff, "dark_rate_hz": trig_dark, "label": "Si SPCM"},
        "p1": {"efficiency": s_eff, "dark_rate_hz": 0.0, "label": "InGaAs SPD"},
        "p2": {"efficiency": s_eff, "dark_rate_hz": 0.0, "label": "InGaAs SPD"},
    }
    d["conversion"] = {
        "window_fwhm_hz": spec.window_fwhm, "window_order": spec.window_order,
        "window_center_offset_hz": 0.0, "peak_efficiency": spec.peak_efficiency,
        "group_delay_s": spec.group_delay, "added_noise_rate_hz": added, "efficiency": None,
        "settings": {"optical_depth": 110, "omega_c_gamma": 20.0, "omega_d_gamma": 12.0,
                     "delta_p_gamma": -4.0, "delta_c_gamma": 8.0, "delta_d_gamma": -5.0},
    }
    d["binning"] = {"bin_width_s": 1e-9, "tau_min_s": -1000e-9, "tau_max_s": 600e-9}
    d["output_dir"] = "fig3-out"
    d["metadata"] = {"preset": "fig3-conversion", "purity_targets": [p_trigger, p_signal],
                     "broadband_efficiency_target": broadband_target,
                     "fitted_window_order": spec.window_order, "filter_isolation_db": [136, 135],
                     "telecom_wavelength_nm": 1367}
    return d


PRESETS = {"fig2-source": _fig2_dict, "fig3-conversion": _fig3_dict}


def preset_dict(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


def preset(name):
    return config_from_dict(preset_dict(name))


def with_detection_efficiency(cfg, efficiency):
    """Set every detector to `efficiency`, rescaling dark rates so channel
    purities are unchanged. Efficiencies cancel in g2, so this only trades
    run time for statistics."""
    dets = {}
    for k, d in cfg.detectors.items():
        dark = d.dark_rate * efficiency / d.efficiency if d.efficiency > 0 else d.dark_rate
        dets[k] = DetectorSpec(efficiency, dark, d.label)
    return cfg.replace(detectors=dets)


# --- running ------------------------------------------------------------------

@dataclass
class PipelineRun:
    streams: dict
    dropped: int = 0

    def counts(self):
        return {k: len(v) for k, v in self.streams.items()}


def _process_chunk(cfg, item, eff, max_tick):
    i, start, stop, trig, probe = item
    D, res, seed = cfg.duration, DEFAULT_RESOLUTION, cfg.seed
    span = (min(max(int(math.ceil(start / res)), 0), max_tick + 1),
            min(max(int(math.ceil(stop / res)), 0), max_tick + 1))
    dropped = 0
    p = TagStream(probe, D, PROBE, res, validate=False)
    p, n = delay_stream(p, cfg.fiber_delay, return_dropped=True)
    dropped += n
    if cfg.conversion is not None:
        p = transform_stream(cfg.conversion.spec, p, eff, D, _rng.sub_seed(seed, "conversion", i), span)
    p1, p2 = hbt_split(p, _rng.sub_seed(seed, "hbt", i))
    t = TagStream(trig, D, TRIGGER, res, validate=False)
    out = {
        "trigger": apply_detector(t, cfg.detectors["trigger"], D, _rng.sub_seed(seed, "detector-trigger", i), span),
        "p1": apply_detector(p1, cfg.detectors["p1"], D, _rng.sub_seed(seed, "detector-p1", i), span),
        "p2": apply_detector(p2, cfg.detectors["p2"], D, _rng.sub_seed(seed, "detector-p2", i), span),
    }
    return {k: v.ticks for k, v in out.items()}, dropped


def run_pipeline(cfg, n_jobs=None):
    """Simulate the full detection chain; returns per-channel TagStreams.

    Anchor chunks are processed independently (optionally in threads) and
    concatenated in chunk order before a final stable sort, so the output
    does not depend on the worker count.
    """
    plan = SourcePlan(cfg.source, cfg.statistics, cfg.coherence_time)
    eff = cfg.conversion_efficiency
    max_tick = duration_ticks(cfg.duration)
    chunks = iter_source_chunks(cfg.source, cfg.duration, cfg.seed, plan=plan)
    parts = {k: [] for k in CHANNELS}
    dropped = 0
    workers = max_workers(n_jobs)

    def collect(res):
        nonlocal dropped
        ticks, n = res
        for k in CHANNELS:
            parts[k].append(ticks[k])
        dropped += n

    if workers == 1:
        for item in chunks:
            collect(_process_chunk(cfg, item, eff, max_tick))
    else:
        with ThreadPoolExecutor(workers) as ex:
            pending = []
            for item in chunks:
                pending.append(ex.submit(_process_chunk, cfg, item, eff, max_tick))
                if len(pending) >= 2 * workers:
                    collect(pending.pop(0).result())
            for f in pending:
                collect(f.result())
    streams = {}
    for k, ch in CHANNELS.items():
        t = np.sort(np.concatenate(parts[k]), kind="stable") if parts[k] else np.empty(0, np.int64)
        streams[k] = TagStream(t, cfg.duration, ch, DEFAULT_RESOLUTION, validate=False)
    return PipelineRun(streams, dropped)


def scaled_bandwidth_model(model, fwhm_hz):
    """Time-rescale the waveform so its spectral FWHM equals `fwhm_hz`."""
    k = waveform_spectrum_fwhm(model) / fwhm_hz
    return model.replace(tau_decay=model.tau_decay * k, tau_rise=model.tau_rise * k,
                         oscillation_freq=model.oscillation_freq / k)

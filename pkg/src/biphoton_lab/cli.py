"""Command-line front end.

Exit codes: 0 success, 1 usage/schema, 2 data format, 3 runtime.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import _rng
from . import __version__
from .convchan import Spectrum, calibrate_window_shape
from .correlator import BinningSpec, cross_correlogram, heralded_autocorr, max_workers, peak_stats
from .errors import BiphotonLabError, ConfigError, DomainError, FormatError
from .model import eval_conditional_autocorr
from .pipeline import (CHANNELS, ConversionConfig, PRESETS, config_from_dict,
                       config_hash, config_to_dict, preset_dict, run_pipeline, scaled_bandwidth_model)
from .purity import (PurityParams, apply_purity_conditional, apply_purity_cross, estimate_purity,
                     invert_purity_cross, noise_rate_for_purity)
from .simkit import DetectorSpec
from .tags import TagStream, merge_streams, read_ttag, write_ttag

log = logging.getLogger("biphoton_lab")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_RUNTIME = 0, 1, 2, 3
CORRELOGRAM_COLUMNS = ["tau_s", "counts", "g2", "g2_err"]
SWEEP_COLUMNS = ["axis", "value", "seed", "p_trigger", "p_partner", "predicted_efficiency",
                 "predicted_peak_g2", "predicted_heralded", "measured_peak_g2", "measured_peak_g2_err",
                 "measured_heralded", "measured_heralded_err"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(x):
    """JSON-safe copy: NaN/inf become null."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# --- config handling ------------------------------------------------------------

def load_config(args):
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise UsageError("--config and --preset are mutually exclusive")
    if getattr(args, "config", None):
        try:
            d = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}") from e
    elif getattr(args, "preset", None):
        d = preset_dict(args.preset)
    else:
        raise UsageError("need --config or --preset")
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "duration_s", None) is not None:
        d["duration_s"] = args.duration_s
    if getattr(args, "out", None):
        d["output_dir"] = str(args.out)
    return config_from_dict(d)


def _expected(cfg):
    P = cfg.expected_purities()
    conv = cfg.conversion
    g_peak = cfg.source.peak_g2
    return {
        "purities": [P.p_trigger, P.p_partner],
        "peak_g2_ideal": g_peak,
        "peak_g2_measured": apply_purity_cross(g_peak, P),
        "heralded_at_peak": apply_purity_conditional(g_peak, P),
        "peak_delay_s": cfg.peak_delay,
        "herald_tau_s": cfg.resolved_herald_tau,
        "conversion_efficiency": cfg.conversion_efficiency if conv else None,
        "window_order": conv.spec.window_order if conv else None,
    }


def simulate(cfg, out_dir, n_jobs=None):
    run = run_pipeline(cfg, n_jobs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in CHANNELS:
        p = out / f"{name}.ttag"
        write_ttag(p, run.streams[name])
        files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    cfg_dict = config_to_dict(cfg)
    manifest = {
        "version": __version__,
        "config": cfg_dict,
        "config_sha256": config_hash(cfg),
        "seed": cfg.seed,
        "duration_s": cfg.duration,
        "wall_clock_s": cfg.duration / cfg.duty_cycle,
        "resolution_s": 1e-12,
        "counts": run.counts(),
        "dropped_tags": run.dropped,
        "files": files,
        "expected": _expected(cfg),
    }
    _write(out / "manifest.json", _dump_json(_clean(manifest)))
    return run, manifest


def _read_manifest(directory):
    p = Path(directory) / "manifest.json"
    if p.exists():
        return json.loads(p.read_text())
    return None


def _load_channels(args, names):
    """Streams for the named channels from --input DIR or positional files."""
    manifest = None
    if args.input:
        manifest = _read_manifest(args.input)
        paths = [Path(args.input) / f"{n}.ttag" for n in names]
    else:
        if not args.files:
            raise UsageError("give tag files or --input DIR")
        paths = [Path(f) for f in args.files]
        manifest = _read_manifest(paths[0].parent)
    duration = args.duration_s if args.duration_s is not None else (manifest or {}).get("duration_s")
    for p in paths:
        if not p.exists():
            raise ConfigError(f"missing channel file {p}")
    if duration is None:
        ends = [max((s.ticks[-1] * s.resolution for s in read_ttag(p).values() if len(s)), default=0.0)
                for p in paths]
        duration = max(ends)
    streams = []
    for p in paths:
        chans = read_ttag(p, duration)
        if len(chans) > 1:
            streams.append(merge_streams(list(chans.values())))
        elif chans:
            streams.append(next(iter(chans.values())))
        else:
            streams.append(TagStream(np.empty(0, np.int64), duration, 0))
    return streams, manifest, duration


def _binning(args, manifest):
    b = ((manifest or {}).get("config") or {}).get("binning") or {}
    bw = args.bin_width_s if args.bin_width_s is not None else b.get("bin_width_s", 1e-9)
    lo = args.tau_min_s if args.tau_min_s is not None else b.get("tau_min_s", -1000e-9)
    hi = args.tau_max_s if args.tau_max_s is not None else b.get("tau_max_s", 500e-9)
    return BinningSpec(bw, lo, hi)


def correlogram_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CORRELOGRAM_COLUMNS)
    for row in zip(result.tau, result.counts, result.g2, result.g2_err):
        w.writerow([_fmt(float(row[0])), int(row[1]), _fmt(float(row[2])), _fmt(float(row[3]))])
    return buf.getvalue()


def correlate_summary(result):
    pk, ptau, fw = peak_stats(result)
    return {"peak_g2": pk, "peak_tau_s": ptau, "fwhm_s": fw,
            "peak_g2_err": float(result.g2_err[int(np.argmax(result.g2))]),
            "totals": {"singles_a": result.singles_a, "singles_b": result.singles_b,
                       "coincidences": int(result.counts.sum()), "duration_s": result.duration,
                       "bins": result.binning.n_bins}}


def analyze_correlate(streams, binning, n_jobs=None):
    a = streams[0]
    b = streams[1] if len(streams) == 2 else merge_streams(streams[1:])
    res = cross_correlogram(a, b, binning, n_jobs)
    if res.counts.sum() == 0:
        raise DomainError("no coincidences")
    return res, correlate_summary(res)


def analyze_herald(streams, tau, window, purities, model_peak=None):
    if not window > 0:
        raise ConfigError("window must be positive", "herald_window_s")
    t, p1, p2 = streams
    h = heralded_autocorr(t, p1, p2, tau, window)
    out = {"result": h.as_dict()}
    T = t.duration
    # window-averaged cross-correlation from the two-fold counts, inverting
    # the at-least-one-hit probability 1 - exp(-g mu)
    gs = []
    for n_tp, s in ((h.n_tp1, p1), (h.n_tp2, p2)):
        mu = len(s) * window / T
        if h.n_trigger and mu > 0:
            p_hit = n_tp / h.n_trigger
            gs.append(-math.log(1 - p_hit) / mu if p_hit < 1 else math.inf)
    g_meas = float(np.mean(gs)) if gs else math.nan
    P = purities
    theory = {"purities": [P.p_trigger, P.p_partner], "g_window_measured": g_meas}
    if math.isfinite(g_meas) and g_meas >= 1:
        theory["heralded_unit_purity"] = eval_conditional_autocorr(g_meas)
        g_ideal = invert_purity_cross(g_meas, P)
        theory["g_window_ideal"] = g_ideal
        theory["heralded_with_purity"] = apply_purity_conditional(g_ideal, P)
    if model_peak is not None:
        theory["model_peak_g2"] = model_peak
        theory["heralded_unit_purity_model_peak"] = eval_conditional_autocorr(model_peak)
        theory["heralded_with_purity_model_peak"] = apply_purity_conditional(model_peak, P)
    out["theory"] = theory
    return h, _clean(out)


def _purities_from(args, manifest):
    exp = ((manifest or {}).get("expected") or {}).get("purities")
    pt = args.p_trigger if args.p_trigger is not None else (exp[0] if exp else 1.0)
    pp = args.p_partner if args.p_partner is not None else (exp[1] if exp else 1.0)
    return PurityParams(pt, pp)


# --- subcommands ------------------------------------------------------------------

def cmd_simulate(args):
    cfg = load_config(args)
    out = args.out or cfg.output_dir
    _, manifest = simulate(cfg, out, args.threads)
    print(_dump_json({"output_dir": str(out), "counts": manifest["counts"],
                      "config_sha256": manifest["config_sha256"]}), end="")


def cmd_correlate(args):
    streams, manifest, _ = _load_channels(args, ["trigger", "p1", "p2"])
    if len(streams) < 2:
        raise UsageError("correlate needs at least two channels")
    res, summary = analyze_correlate(streams, _binning(args, manifest), args.threads)
    csv_text, js = correlogram_csv(res), _dump_json(_clean(summary))
    if args.out:
        _write(Path(args.out) / "correlogram.csv", csv_text)
        _write(Path(args.out) / "summary.json", js)
    sys.stdout.write(csv_text if args.format == "csv" else js)


def cmd_herald(args):
    streams, manifest, _ = _load_channels(args, ["trigger", "p1", "p2"])
    if len(streams) != 3:
        raise ConfigError("herald needs exactly three channels (trigger, p1, p2)")
    cfg = config_from_dict(manifest["config"]) if manifest else None
    tau = args.tau_s if args.tau_s is not None else (cfg.resolved_herald_tau if cfg else None)
    if tau is None:
        raise ConfigError("no herald delay: pass --tau-s or provide a manifest", "herald_tau_s")
    window = args.window_s if args.window_s is not None else (cfg.herald_window if cfg else None)
    if window is None:
        raise ConfigError("no herald window: pass --window-s", "herald_window_s")
    _, out = analyze_herald(streams, tau, window, _purities_from(args, manifest),
                            cfg.source.peak_g2 if cfg else None)
    js = _dump_json(out)
    if args.out:
        _write(Path(args.out) / "herald.json", js)
    sys.stdout.write(js)


def cmd_purity(args):
    if args.total is not None:
        bg = args.background if args.background is not None else 0
        out = {"total_counts": args.total, "background_counts": bg,
               "purity": estimate_purity(args.total, bg)}
    else:
        if args.g is None:
            raise UsageError("purity needs --g or --total")
        P = PurityParams(args.p_trigger if args.p_trigger is not None else 1.0,
                         args.p_partner if args.p_partner is not None else 1.0)
        out = {"p_trigger": P.p_trigger, "p_partner": P.p_partner}
        if args.invert:
            gi = invert_purity_cross(args.g, P)
            out.update(g_measured=args.g, g_ideal=gi, conditional=apply_purity_conditional(gi, P))
        else:
            out.update(g_ideal=args.g, g_measured=apply_purity_cross(args.g, P),
                       conditional=apply_purity_conditional(args.g, P),
                       conditional_unit_purity=eval_conditional_autocorr(args.g))
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(out))
        w.writerow([_fmt(v) for v in out.values()])
        text = buf.getvalue()
    else:
        text = _dump_json(out)
    if args.out:
        _write(Path(args.out) / f"purity.{args.format}", text)
    sys.stdout.write(text)


def _parse_grid(text, axis):
    if text is None or text.strip() == "":
        return []
    items = []
    for tok in text.split(","):
        tok = tok.strip()
        if axis == "purity" and ":" in tok:
            a, b = tok.split(":")
            items.append((float(a), float(b)))
        else:
            items.append(float(tok))
    return items


def _sweep_point(cfg, axis, value, seed, simulate_points, base_spec):
    row = {"axis": axis, "seed": seed}
    if axis == "bandwidth":
        row["value"] = value
        model = scaled_bandwidth_model(cfg.source, value)
        spec = cfg.conversion.spec if cfg.conversion else base_spec
        cfg = cfg.replace(source=model, conversion=ConversionConfig(spec, None))
    elif axis == "purity":
        pt, pp = value if isinstance(value, tuple) else (math.sqrt(value), math.sqrt(value))
        row["value"] = value[0] * value[1] if isinstance(value, tuple) else value
        quiet = {k: DetectorSpec(d.efficiency, 0.0, d.label) for k, d in cfg.detectors.items()}
        conv = cfg.conversion
        if conv is not None:
            conv = ConversionConfig(conv.spec.replace(added_noise_rate=0.0), conv.efficiency)
        rates = cfg.replace(detectors=quiet, conversion=conv)
        r = rates.expected_rates()
        dets = dict(quiet)
        dets["trigger"] = DetectorSpec(quiet["trigger"].efficiency,
                                       noise_rate_for_purity(r["trigger"][0], pt), quiet["trigger"].label)
        for k in ("p1", "p2"):
            dets[k] = DetectorSpec(quiet[k].efficiency, noise_rate_for_purity(r[k][0], pp), quiet[k].label)
        cfg = rates.replace(detectors=dets)
    elif axis == "efficiency":
        row["value"] = value
        if cfg.conversion is not None:
            cfg = cfg.replace(conversion=ConversionConfig(cfg.conversion.spec, value))
        else:
            dets = dict(cfg.detectors)
            for k in ("p1", "p2"):
                dets[k] = DetectorSpec(value, dets[k].dark_rate, dets[k].label)
            cfg = cfg.replace(detectors=dets)
    P = cfg.expected_purities()
    row["p_trigger"], row["p_partner"] = P.p_trigger, P.p_partner
    row["predicted_efficiency"] = cfg.conversion_efficiency if cfg.conversion else None
    row["predicted_peak_g2"] = apply_purity_cross(cfg.source.peak_g2, P)
    row["predicted_heralded"] = apply_purity_conditional(
        cfg.ideal_window_g2(cfg.resolved_herald_tau, cfg.herald_window), P)
    if simulate_points:
        cfg = cfg.replace(seed=seed)
        run = run_pipeline(cfg, 1)
        s = run.streams
        res = cross_correlogram(s["trigger"], merge_streams([s["p1"], s["p2"]]), cfg.binning, 1)
        i = int(np.argmax(res.g2))
        row["measured_peak_g2"], row["measured_peak_g2_err"] = float(res.g2[i]), float(res.g2_err[i])
        h = heralded_autocorr(s["trigger"], s["p1"], s["p2"], cfg.resolved_herald_tau, cfg.herald_window)
        row["measured_heralded"], row["measured_heralded_err"] = h.g_conditional, h.g_err
    return row


def sweep(cfg, axis, grid, simulate_points=False, n_jobs=None):
    if axis not in ("bandwidth", "purity", "efficiency"):
        raise UsageError(f"unknown sweep axis {axis!r}")
    base_spec = None
    if axis == "bandwidth" and cfg.conversion is None:
        base_spec = calibrate_window_shape(0.794, 0.55, Spectrum.from_model(cfg.source),
                                           order_bounds=(0.5, 8.0))
    seeds = [_rng.derive_seed(cfg.seed, i) for i in range(len(grid))]
    args = [(cfg, axis, v, s, simulate_points, base_spec) for v, s in zip(grid, seeds)]
    workers = min(max_workers(n_jobs), max(1, len(grid)))
    if workers == 1:
        rows = [_sweep_point(*a) for a in args]
    else:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(lambda a: _sweep_point(*a), args))
    return rows


def sweep_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(_clean(r.get(c))) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def cmd_sweep(args):
    cfg = load_config(args)
    rows = sweep(cfg, args.axis, _parse_grid(args.grid, args.axis), args.simulate, args.threads)
    text = sweep_csv(rows) if args.format == "csv" else _dump_json(_clean(rows))
    if args.out:
        _write(Path(args.out) / f"sweep.{args.format}", text)
    sys.stdout.write(text)


def cmd_report(args):
    if args.input:
        manifest = _read_manifest(args.input)
        if manifest is None:
            raise ConfigError(f"no manifest.json in {args.input}")
        cfg = config_from_dict(manifest["config"])
        src = Path(args.input)
    else:
        cfg = load_config(args)
        src = Path(args.out or cfg.output_dir)
        _, manifest = simulate(cfg, src, args.threads)
    out = Path(args.out or src)
    ns = argparse.Namespace(input=str(src), files=None, duration_s=None)
    streams, manifest, _ = _load_channels(ns, ["trigger", "p1", "p2"])
    res, summary = analyze_correlate(streams, cfg.binning, args.threads)
    P = PurityParams(*manifest["expected"]["purities"])
    _, herald = analyze_herald(streams, cfg.resolved_herald_tau, cfg.herald_window, P, cfg.source.peak_g2)
    i = int(np.argmax(res.g2))
    expected_bin = apply_purity_cross(cfg.ideal_window_g2(float(res.tau[i]), cfg.binning.bin_width), P)
    expected_h = apply_purity_conditional(cfg.ideal_window_g2(cfg.resolved_herald_tau, cfg.herald_window), P)
    h = herald["result"]
    report = {
        "config_sha256": manifest["config_sha256"],
        "correlogram": summary,
        "herald": herald,
        "comparison": {
            "peak_g2_expected_bin": expected_bin,
            "peak_g2_z": (summary["peak_g2"] - expected_bin) / summary["peak_g2_err"],
            "peak_tau_expected_s": cfg.peak_delay,
            "heralded_expected_window": expected_h,
            "heralded_z": ((h["g_conditional"] - expected_h) / h["g_err"]
                           if h["defined"] and h["g_err"] else None),
        },
    }
    _write(out / "correlogram.csv", correlogram_csv(res))
    _write(out / "summary.json", _dump_json(_clean(summary)))
    _write(out / "herald.json", _dump_json(herald))
    js = _dump_json(_clean(report))
    _write(out / "report.json", js)
    sys.stdout.write(js)


# --- argument parsing --------------------------------------------------------------

def build_parser():
    p = _Parser(prog="biphoton-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config=True, files=False, fmt="json"):
        if config:
            sp.add_argument("--config", type=str, help="pipeline config JSON")
            sp.add_argument("--preset", choices=sorted(PRESETS))
            sp.add_argument("--seed", type=int)
        if files:
            sp.add_argument("files", nargs="*", help="TTAG files (trigger first)")
            sp.add_argument("--input", type=str, help="directory with trigger/p1/p2.ttag and manifest.json")
        sp.add_argument("--duration-s", type=float)
        sp.add_argument("--out", type=str)
        sp.add_argument("--format", choices=["csv", "json"], default=fmt)
        sp.add_argument("--threads", type=int, help="worker cap (default BIPHOTON_LAB_THREADS or CPU count)")

    s = sub.add_parser("simulate", help="run the detection chain and write TTAG files + manifest")
    common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("correlate", help="cross-correlogram of trigger vs partner channels")
    common(s, config=False, files=True, fmt="json")
    for k in ("bin_width_s", "tau_min_s", "tau_max_s"):
        s.add_argument("--" + k.replace("_", "-"), type=float)
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("herald", help="heralded autocorrelation from trigger, p1, p2")
    common(s, config=False, files=True)
    s.add_argument("--tau-s", type=float)
    s.add_argument("--window-s", type=float)
    s.add_argument("--p-trigger", type=float)
    s.add_argument("--p-partner", type=float)
    s.set_defaults(func=cmd_herald)

    s = sub.add_parser("purity", help="purity algebra")
    common(s, config=False)
    s.add_argument("--g", type=float, help="cross-correlation (ideal, or measured with --invert)")
    s.add_argument("--invert", action="store_true")
    s.add_argument("--p-trigger", type=float)
    s.add_argument("--p-partner", type=float)
    s.add_argument("--total", type=float)
    s.add_argument("--background", type=float)
    s.set_defaults(func=cmd_purity)

    s = sub.add_parser("sweep", help="sweep bandwidth, purity or efficiency")
    common(s, fmt="csv")
    s.add_argument("--axis", required=True)
    s.add_argument("--grid", default="", help="comma-separated values (purity: x or pt:pp)")
    s.add_argument("--simulate", action="store_true", help="also simulate each point")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="simulate (or read --input) and write correlogram, herald and report")
    common(s)
    s.add_argument("--input", type=str)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if not getattr(args, "command", None):
            raise UsageError("missing subcommand")
        args.func(args)
        return EXIT_OK
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (BiphotonLabError, ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

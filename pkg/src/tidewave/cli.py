"""Command-line pipeline front end.

Subcommands mirror the processing stages: simulate, preprocess, analyze,
detect, fuse, features, train, predict, evaluate, plot. Configuration is a
nested JSON file; command-line flags override file values, which override
built-in defaults. Unknown config keys are rejected rather than ignored.

Every command writes a ``<command>_manifest.json`` beside its outputs,
recording the package version, the seed, the resolved config, and a sha256
per input file. Passing a manifest to ``--config`` reruns the stage with the
stored config, and stored input paths fill in omitted positional arguments,
reproducing the outputs byte for byte.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .cwt import (TideBandFeature, WaveletSpec, build_scales, cwt,
                  load_scalogram, summed_coefficient)
from .detector import DetectorConfig, TurnDetector, detect_offline, read_events, write_events
from .features import (FeatureMatrix, adaptation_rows, build_features,
                       chrono_split, fit_standardize, phase_origin)
from .fusion import FusedFeature, fuse_cells
from .ingest import IngestConfig, clean_log, parse_records
from .regressor import (FineTuneConfig, TrainConfig, evaluate, fine_tune,
                        forward, init_model, load_model, read_predictions,
                        save_model, train, write_predictions)
from .series import METRICS, MetricSeries, TideSeries
from .sim import (DEFAULT_FLOOR_DBM, LinkGeometry, ReflectionModel,
                  simulate_metric_series, synth_tide, uniform_grid,
                  write_raw_log)
from .util import NumericalError, ValidationError, require, sha256_file
from . import cwt as _cwt
from . import plots

DEFAULT_SEED = 42

DEFAULTS = {
    "seed": DEFAULT_SEED,
    "simulate": {
        "duration_s": 25200.0,
        "dt_s": 6.0,
        "cell_id": "cellA",
        "tide": {"period_s": 45360.0, "amplitude_m": 0.5, "mean_m": 0.0,
                 "phase_rad": 0.0},
        "noise_std_db": 1.0,
        "base_power_dbm": -95.0,
        "floor_dbm": DEFAULT_FLOOR_DBM,
        "phase_model": "exact",
        "geometry": {"tx_height_m": 45.0,
                     "rx_heights_m": [1.95, 1.80, 1.65, 1.50],
                     "range_m": 420.0,
                     "carrier_freq_hz": 2659.8e6},
        "reflection": {"magnitude": 1.0, "phase_rad": math.pi},
    },
    "preprocess": {
        "dt_s": 60.0,
        "max_gap_s": None,
        "iqr_k": 1.0,
        "hampel_half": 5,
        "hampel_nmad": 3.0,
        "lowpass_period_s": None,
        "antennas": None,
    },
    "analyze": {
        "metric": "rsrp",
        "antenna": "mean",
        "band": {"min_period_s": 600.0, "max_period_s": 7200.0,
                 "voices_per_octave": 8},
        "method": "fft",
        "export_scalogram": True,
        "make_plots": True,
        "detector": {"look_back_s": 2700.0, "look_ahead_s": 300.0,
                     "refractory_s": 300.0},
    },
    "detect": {
        "look_back_s": 2700.0,
        "look_ahead_s": 300.0,
        "refractory_s": 300.0,
    },
    "fuse": {
        "window_s": 9 * 3600.0,
        "min_count": 5,
        "mode": "centered",
        "dt_out_s": 60.0,
        "max_lag_s": 0.0,
        "detector": {"look_back_s": 2700.0, "look_ahead_s": 300.0,
                     "refractory_s": 300.0},
    },
    "features": {
        "tide_period_s": 45360.0,
        "include_fused": False,
    },
    "train": {
        "hidden": 40,
        "fractions": [0.60, 0.05, 0.35],
        "learn_rate": 0.05,
        "max_epochs": 5000,
        "patience": 50,
        "grow": 1.05,
        "shrink": 0.5,
        "momentum": 0.0,
        "fine_tune": {"epochs": 200, "rate_scale": 0.1, "adapt_frac": 0.10},
    },
    "predict": {},
    "evaluate": {},
    "plot": {"kind": "tide"},
}


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors map to exit code 1."""

    def error(self, message):
        raise ValidationError(message)


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ValidationError(f"unknown config key {here!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, here)
        else:
            out[key] = val
    return out


def _load_config_file(path):
    """Returns (config dict, manifest dict or None)."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    require(isinstance(doc, dict), f"{path}: config must be a JSON object")
    if "command" in doc and "config" in doc:
        return {doc["command"]: doc["config"]}, doc
    return doc, None


def _resolve(args, command):
    """Defaults <- config file <- CLI flags; returns (section, seed, manifest)."""
    cfg = copy.deepcopy(DEFAULTS)
    manifest = None
    if args.config:
        file_cfg, manifest = _load_config_file(args.config)
        if manifest is not None and manifest.get("command") != command:
            raise ValidationError(
                f"manifest is for {manifest.get('command')!r}, not {command!r}")
        if manifest is not None and "seed" in manifest:
            cfg["seed"] = manifest["seed"]
        cfg = _merge(cfg, file_cfg)
    seed = args.seed if args.seed is not None else int(cfg["seed"])
    return cfg[command], seed, manifest


def _manifest_input(manifest, role):
    if manifest is None:
        return None
    entry = (manifest.get("inputs") or {}).get(role)
    return entry.get("path") if entry else None


def _need(value, manifest, role, what):
    value = value if value is not None else _manifest_input(manifest, role)
    if value is None:
        raise ValidationError(f"missing {what} (pass it or rerun from a manifest)")
    return value


def _write_manifest(out_dir, command, seed, section, inputs, outputs):
    doc = {
        "command": command,
        "package_version": __version__,
        "seed": seed,
        "config": section,
        "inputs": {role: {"path": p, "sha256": sha256_file(p)}
                   for role, p in inputs.items()},
        "outputs": sorted(outputs),
    }
    path = os.path.join(out_dir, f"{command}_manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _out(out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def _detector_config(section) -> DetectorConfig:
    return DetectorConfig(float(section["look_back_s"]),
                          float(section["look_ahead_s"]),
                          float(section["refractory_s"]))


def _band_from(section):
    band_cfg = section["band"]
    min_p = float(band_cfg["min_period_s"])
    max_p = float(band_cfg["max_period_s"])
    require(0 < min_p <= max_p, "band periods must satisfy 0 < min <= max")
    return build_scales(WaveletSpec(), 1.0 / max_p, 1.0 / min_p,
                        int(band_cfg["voices_per_octave"]))


def _hash_provenance(paths):
    return {os.path.basename(p): sha256_file(p) for p in paths}


# ---------------------------------------------------------------- commands


def cmd_simulate(args):
    section, seed, _ = _resolve(args, "simulate")
    g = section["geometry"]
    geom = LinkGeometry(float(g["tx_height_m"]),
                        tuple(float(h) for h in g["rx_heights_m"]),
                        float(g["range_m"]), float(g["carrier_freq_hz"]))
    refl = ReflectionModel(float(section["reflection"]["magnitude"]),
                           float(section["reflection"]["phase_rad"]))
    tide_cfg = section["tide"]
    grid = uniform_grid(float(section["duration_s"]), float(section["dt_s"]))
    tide = synth_tide(float(tide_cfg["period_s"]), float(tide_cfg["amplitude_m"]),
                      float(tide_cfg["mean_m"]), float(tide_cfg["phase_rad"]), grid)
    base = 10.0 ** (float(section["base_power_dbm"]) / 10.0)
    series = simulate_metric_series(
        geom, tide, refl, base_powers=[base] * len(geom.rx_heights),
        noise_std=float(section["noise_std_db"]), seed=seed,
        cell_id=str(section["cell_id"]), phase_model=str(section["phase_model"]),
        floor_dbm=float(section["floor_dbm"]))

    tide_path = _out(args.out_dir, "tide.csv")
    metrics_path = _out(args.out_dir, "metrics.csv")
    log_path = _out(args.out_dir, "raw_log.csv")
    tide.to_csv(tide_path)
    series.to_csv(metrics_path)
    write_raw_log(series, log_path)
    _write_manifest(args.out_dir, "simulate", seed, section, {},
                    ["tide.csv", "metrics.csv", "raw_log.csv"])
    print(f"simulate: {len(grid)} samples, {len(geom.rx_heights)} antennas "
          f"-> {args.out_dir}")
    return 0


def cmd_preprocess(args):
    section, seed, manifest = _resolve(args, "preprocess")
    raw_path = _need(args.raw_log, manifest, "raw_log", "raw log CSV")
    with open(raw_path, "r", encoding="utf-8") as f:
        parsed = parse_records(f)
    for lineno, msg in parsed.errors:
        print(f"preprocess: {raw_path}:{lineno}: skipped ({msg})", file=sys.stderr)
    cfg = IngestConfig(
        dt=float(section["dt_s"]),
        max_gap=(None if section["max_gap_s"] is None
                 else float(section["max_gap_s"])),
        iqr_k=float(section["iqr_k"]),
        hampel_half=int(section["hampel_half"]),
        hampel_nmad=float(section["hampel_nmad"]),
        lowpass_period=(None if section["lowpass_period_s"] is None
                        else float(section["lowpass_period_s"])),
        antennas=(None if section["antennas"] is None
                  else int(section["antennas"])))
    results = clean_log(parsed.records, cfg)
    outputs = []
    for cell_id, result in sorted(results.items()):
        csv_name = f"clean_{cell_id}.csv"
        result.series.to_csv(_out(args.out_dir, csv_name))
        sidecar = {"dt": cfg.dt, "max_gap": cfg.gap,
                   "masked_fraction": result.masked_fraction,
                   "dropped_rows": result.dropped_rows}
        side_name = f"clean_{cell_id}.json"
        with open(_out(args.out_dir, side_name), "w", encoding="utf-8",
                  newline="\n") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
            f.write("\n")
        outputs += [csv_name, side_name]
        print(f"preprocess: {cell_id}: masked {result.masked_fraction:.3f}, "
              f"dropped {result.dropped_rows}")
    _write_manifest(args.out_dir, "preprocess", seed, section,
                    {"raw_log": raw_path}, outputs)
    return 0


def _analysis_trace(series: MetricSeries, metric: str, antenna):
    """One gap-filled trace for the CWT plus the mask of filled samples."""
    require(metric in METRICS, f"unknown metric {metric!r}")
    if antenna == "mean":
        chans = [series.values[(metric, a)] for a in series.antennas]
        stack = np.vstack(chans)
        count = np.sum(np.isfinite(stack), axis=0)
        with np.errstate(invalid="ignore"):
            trace = np.where(count > 0, np.nansum(np.where(np.isfinite(stack),
                                                           stack, 0.0), axis=0)
                             / np.maximum(count, 1), np.nan)
    else:
        key = (metric, int(antenna))
        require(key in series.values, f"no channel {metric} antenna {antenna}")
        trace = series.values[key].copy()
    finite = np.isfinite(trace)
    require(int(finite.sum()) >= 2, "trace has fewer than 2 valid samples")
    lo, hi = np.argmax(finite), len(finite) - np.argmax(finite[::-1])
    times = series.times[lo:hi]
    trace = trace[lo:hi]
    finite = finite[lo:hi]
    filled = ~finite
    if filled.any():
        trace[filled] = np.interp(times[filled], times[finite], trace[finite])
    return times, trace, filled


def cmd_analyze(args):
    section, seed, manifest = _resolve(args, "analyze")
    clean_path = _need(args.clean, manifest, "clean", "cleaned metric CSV")
    series = MetricSeries.from_csv(clean_path)
    if args.metric is not None:
        section["metric"] = args.metric
    if args.antenna is not None:
        section["antenna"] = args.antenna
    times, trace, filled = _analysis_trace(series, str(section["metric"]),
                                           section["antenna"])
    band = _band_from(section)
    sg = cwt(times, trace, band, method=str(section["method"]))
    feat = summed_coefficient(sg, provenance=series.cell_id)
    feat.valid &= ~filled

    detector = TurnDetector(_detector_config(section["detector"]))
    events = detect_offline(feat, detector=detector)
    for t, msg in detector.notices:
        print(f"analyze: t={t:g}: {msg}", file=sys.stderr)

    cell = series.cell_id
    outputs = []
    s_name = f"s_{cell}.csv"
    feat.to_csv(_out(args.out_dir, s_name))
    meta = {"cell_id": cell, "dt": feat.dt,
            "band": {"min_period_s": float(section["band"]["min_period_s"]),
                     "max_period_s": float(section["band"]["max_period_s"]),
                     "voices_per_octave": int(section["band"]["voices_per_octave"])},
            "metric": str(section["metric"]), "antenna": section["antenna"]}
    meta_name = f"s_{cell}.meta.json"
    with open(_out(args.out_dir, meta_name), "w", encoding="utf-8",
              newline="\n") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    ev_name = f"events_{cell}.jsonl"
    write_events(events, _out(args.out_dir, ev_name))
    outputs += [s_name, meta_name, ev_name]

    if section["export_scalogram"]:
        sg_dir = f"scalogram_{cell}"
        sg.export(_out(args.out_dir, sg_dir))
        outputs += [f"{sg_dir}/scales.csv", f"{sg_dir}/times.csv",
                    f"{sg_dir}/coeffs_mag.csv", f"{sg_dir}/meta.json"]
    if section["make_plots"]:
        prov = _hash_provenance([clean_path])
        sg_svg = f"scalogram_{cell}.svg"
        plots.plot_scalogram(sg, _out(args.out_dir, sg_svg), provenance=prov)
        ft_svg = f"feature_{cell}.svg"
        plots.plot_feature(feat, events, _out(args.out_dir, ft_svg),
                           provenance=prov)
        outputs += [sg_svg, ft_svg]

    _write_manifest(args.out_dir, "analyze", seed, section,
                    {"clean": clean_path}, outputs)
    print(f"analyze: {cell}: {len(events)} events, "
          f"{int(feat.valid.sum())}/{len(feat)} valid samples")
    return 0


def cmd_detect(args):
    section, seed, manifest = _resolve(args, "detect")
    s_path = _need(args.s_csv, manifest, "s", "S(b) CSV")
    feat = TideBandFeature.from_csv(s_path)
    detector = TurnDetector(_detector_config(section))
    events = detect_offline(feat, detector=detector)
    for t, msg in detector.notices:
        print(f"detect: t={t:g}: {msg}", file=sys.stderr)
    write_events(events, _out(args.out_dir, "events.jsonl"))
    _write_manifest(args.out_dir, "detect", seed, section, {"s": s_path},
                    ["events.jsonl"])
    print(f"detect: {len(events)} events")
    return 0


def cmd_fuse(args):
    section, seed, manifest = _resolve(args, "fuse")
    paths = list(args.s_csvs)
    if not paths and manifest is not None:
        roles = sorted(r for r in (manifest.get("inputs") or {}) if r.startswith("s_"))
        paths = [manifest["inputs"][r]["path"] for r in roles]
    require(len(paths) >= 1, "fuse needs at least one S(b) CSV")
    feats = [TideBandFeature.from_csv(p) for p in paths]
    fused = fuse_cells(feats, window=float(section["window_s"]),
                       dt_out=float(section["dt_out_s"]),
                       max_lag=float(section["max_lag_s"]),
                       min_count=int(section["min_count"]),
                       mode=str(section["mode"]))
    fused.to_csv(_out(args.out_dir, "fused.csv"))
    detector = TurnDetector(_detector_config(section["detector"]))
    events = detect_offline(fused.as_feature(), detector=detector)
    write_events(events, _out(args.out_dir, "events_fused.jsonl"))
    inputs = {f"s_{i}": p for i, p in enumerate(paths)}
    _write_manifest(args.out_dir, "fuse", seed, section, inputs,
                    ["fused.csv", "events_fused.jsonl"])
    print(f"fuse: {len(feats)} cells -> {int(fused.valid.sum())} valid samples, "
          f"{len(events)} events")
    return 0


def cmd_features(args):
    section, seed, manifest = _resolve(args, "features")
    clean_path = _need(args.clean, manifest, "clean", "cleaned metric CSV")
    series = MetricSeries.from_csv(clean_path)
    inputs = {"clean": clean_path}

    t0 = None
    events_path = args.events or _manifest_input(manifest, "events")
    if events_path:
        events = read_events(events_path)
        t0 = phase_origin(events, float(series.times[0]))
        inputs["events"] = events_path
    phase = _cwt.tide_phase(series.times, t_tide=float(section["tide_period_s"]),
                            t0=t0)

    fused_feat = None
    fused_path = args.fused or _manifest_input(manifest, "fused")
    if fused_path:
        fused_feat = _load_fused_or_feature(fused_path, series)
        inputs["fused"] = fused_path
    elif section["include_fused"]:
        raise ValidationError("include_fused is set but no --fused file given")

    matrix = build_features(series, phase, include_fused=fused_feat)
    name = f"features_{series.cell_id}.csv"
    matrix.to_csv(_out(args.out_dir, name))
    _write_manifest(args.out_dir, "features", seed, section, inputs, [name])
    print(f"features: {matrix.n_rows} rows x {matrix.n_cols} cols, "
          f"{int(matrix.row_valid.sum())} valid")
    return 0


def _nearest_index(times, grid):
    """Index of the nearest source sample per grid point, plus a closeness mask."""
    idx = np.clip(np.searchsorted(times, grid), 0, times.size - 1)
    prev = np.maximum(idx - 1, 0)
    idx = np.where(np.abs(times[prev] - grid) <= np.abs(times[idx] - grid),
                   prev, idx)
    step = float(times[1] - times[0]) if times.size > 1 else np.inf
    return idx, np.abs(times[idx] - grid) <= step


def _load_fused_or_feature(path, series):
    """Accept a fused CSV or a plain S(b) CSV, regridded to the metric grid."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
    if header.startswith("t_unix_s,s_fused"):
        fused = FusedFeature.from_csv(path)
        idx, near = _nearest_index(fused.times, series.times)
        ok = fused.valid & np.isfinite(fused.values)
        require(int(ok.sum()) >= 2, f"{path}: too few valid samples")
        vals = np.interp(series.times, fused.times[ok], fused.values[ok],
                         left=np.nan, right=np.nan)
        counts = np.where(near, fused.contributing_count[idx], 0)
        counts[~np.isfinite(vals)] = 0
        return FusedFeature(series.times.copy(),
                            np.where(counts >= 1, vals, np.nan), counts,
                            {c: m[idx] & near & (counts >= 1)
                             for c, m in fused.availability.items()})
    src = TideBandFeature.from_csv(path)
    ok = src.valid & np.isfinite(src.values)
    require(int(ok.sum()) >= 2, f"{path}: too few valid samples")
    vals = np.interp(series.times, src.times[ok], src.values[ok],
                     left=np.nan, right=np.nan)
    inside = np.isfinite(vals)
    return TideBandFeature(series.times.copy(), np.where(inside, vals, np.nan),
                           inside, provenance="fused")


def _load_xy(features_path, tide_path):
    matrix = FeatureMatrix.from_csv(features_path)
    tide = TideSeries.from_csv(tide_path)
    require(matrix.times[0] >= tide.times[0] - 1e-6
            and matrix.times[-1] <= tide.times[-1] + 1e-6,
            "tide record does not cover the feature grid")
    y = tide.interp_at(matrix.times)
    return matrix, y


def cmd_train(args):
    section, seed, manifest = _resolve(args, "train")
    feats_path = _need(args.features, manifest, "features", "feature CSV")
    tide_path = _need(args.tide, manifest, "tide", "tide CSV")
    if args.max_epochs is not None:
        section["max_epochs"] = args.max_epochs
    if args.adapt_frac is not None:
        section["fine_tune"]["adapt_frac"] = args.adapt_frac
    matrix, y = _load_xy(feats_path, tide_path)
    inputs = {"features": feats_path, "tide": tide_path}

    base_model_path = args.fine_tune_from or _manifest_input(manifest, "base_model")
    tcfg = TrainConfig(learn_rate=float(section["learn_rate"]),
                       max_epochs=int(section["max_epochs"]),
                       patience=int(section["patience"]),
                       grow=float(section["grow"]),
                       shrink=float(section["shrink"]),
                       momentum=float(section["momentum"]))

    if base_model_path:
        inputs["base_model"] = base_model_path
        base = load_model(base_model_path)
        require(base.feature_stats is not None,
                "base model lacks feature statistics")
        z = base.feature_stats.apply(matrix)
        ft_cfg = section["fine_tune"]
        rows = adaptation_rows(matrix.n_rows, float(ft_cfg["adapt_frac"]))
        use = rows[matrix.row_valid[rows] & np.isfinite(y[rows])]
        model = fine_tune(base, z.values[use], y[use],
                          FineTuneConfig(int(ft_cfg["epochs"]),
                                         float(ft_cfg["rate_scale"]), tcfg),
                          input_columns=z.column_names)
        report = {"mode": "fine_tune", "adapt_rows": int(use.size),
                  "epochs": int(ft_cfg["epochs"]),
                  "final_loss": model.metadata.get("fine_tune_loss")}
    else:
        plan = chrono_split(matrix.n_rows, tuple(section["fractions"]))
        stats, z = fit_standardize(matrix, plan.train_idx)
        ok = matrix.row_valid & np.isfinite(y)
        tr = plan.train_idx[ok[plan.train_idx]]
        va = plan.val_idx[ok[plan.val_idx]]
        require(tr.size >= 2 and va.size >= 1, "too few valid train/val rows")
        model = init_model(z.n_cols, hidden=int(section["hidden"]), seed=seed,
                           input_columns=z.column_names)
        result = train(model, z.values[tr], y[tr], z.values[va], y[va], tcfg)
        model = result.model
        model.feature_stats = stats
        report = {"mode": "train", "train_rows": int(tr.size),
                  "val_rows": int(va.size), "epochs_run": result.epochs_run,
                  "best_epoch": result.best_epoch,
                  "best_val_loss": model.metadata.get("best_val_loss"),
                  "final_train_loss": model.metadata.get("final_train_loss"),
                  "dropped_columns": list(stats.dropped)}

    save_model(model, _out(args.out_dir, "model.json"))
    with open(_out(args.out_dir, "train_report.json"), "w", encoding="utf-8",
              newline="\n") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(args.out_dir, "train", seed, section, inputs,
                    ["model.json", "train_report.json"])
    print(f"train: {report['mode']} done -> model.json")
    return 0


def cmd_predict(args):
    section, seed, manifest = _resolve(args, "predict")
    feats_path = _need(args.features, manifest, "features", "feature CSV")
    model_path = _need(args.model, manifest, "model", "model JSON")
    model = load_model(model_path)
    require(model.feature_stats is not None, "model lacks feature statistics")
    matrix = FeatureMatrix.from_csv(feats_path)
    z = model.feature_stats.apply(matrix)
    inputs = {"features": feats_path, "model": model_path}

    y_true = None
    tide_path = args.tide or _manifest_input(manifest, "tide")
    if tide_path:
        tide = TideSeries.from_csv(tide_path)
        y_true = tide.interp_at(matrix.times)
        inputs["tide"] = tide_path

    y_hat = np.full(matrix.n_rows, np.nan)
    ok = matrix.row_valid
    if ok.any():
        y_hat[ok] = forward(model, z.values[ok])
    write_predictions(_out(args.out_dir, "predictions.csv"), matrix.times,
                      y_hat, y_true=y_true, row_valid=ok)
    _write_manifest(args.out_dir, "predict", seed, section, inputs,
                    ["predictions.csv"])
    print(f"predict: {int(ok.sum())}/{matrix.n_rows} rows -> predictions.csv")
    return 0


def cmd_evaluate(args):
    section, seed, manifest = _resolve(args, "evaluate")
    pred_path = _need(args.predictions, manifest, "predictions",
                      "prediction CSV")
    times, y_true, y_hat = read_predictions(pred_path)
    require(y_true is not None, "predictions lack a y_true_m column")
    ok = np.isfinite(y_hat)
    require(bool(ok.any()), "no valid predictions to evaluate")
    report = evaluate(y_hat[ok], y_true[ok])
    doc = {"rmse_cm": report.rmse_cm, "mae_cm": report.mae_cm,
           "n_samples": report.n_samples, "n_masked": int((~ok).sum()),
           "segments": report.segments}
    with open(_out(args.out_dir, "eval_report.json"), "w", encoding="utf-8",
              newline="\n") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(args.out_dir, "evaluate", seed, section,
                    {"predictions": pred_path}, ["eval_report.json"])
    print(f"evaluate: RMSE {report.rmse_cm:.3f} cm, MAE {report.mae_cm:.3f} cm "
          f"on {report.n_samples} samples")
    return 0


def cmd_plot(args):
    section, seed, manifest = _resolve(args, "plot")
    kind = args.kind or section["kind"]
    input_path = _need(args.input, manifest, "input", "input file")
    inputs = {"input": input_path}
    prov_paths = [input_path]
    out_name = f"plot_{kind}.svg"

    if kind == "tide":
        tide = TideSeries.from_csv(input_path)
        pt = pv = None
        pred_path = args.predictions or _manifest_input(manifest, "predictions")
        if pred_path:
            pt, _, pv = read_predictions(pred_path)
            inputs["predictions"] = pred_path
            prov_paths.append(pred_path)
        plots.plot_tide(tide.times, tide.heights, _out(args.out_dir, out_name),
                        pred_times=pt, pred_values=pv,
                        provenance=_hash_provenance(prov_paths))
    elif kind == "feature":
        feat = TideBandFeature.from_csv(input_path)
        events = []
        ev_path = args.events or _manifest_input(manifest, "events")
        if ev_path:
            events = read_events(ev_path)
            inputs["events"] = ev_path
            prov_paths.append(ev_path)
        plots.plot_feature(feat, events, _out(args.out_dir, out_name),
                           provenance=_hash_provenance(prov_paths))
    elif kind == "scalogram":
        sg = load_scalogram(input_path)
        plots.plot_scalogram(sg, _out(args.out_dir, out_name),
                             provenance={os.path.basename(input_path.rstrip("/")):
                                         sha256_file(os.path.join(input_path,
                                                                  "coeffs_mag.csv"))})
        inputs = {"input": os.path.join(input_path, "coeffs_mag.csv")}
    else:
        raise ValidationError(f"unknown plot kind {kind!r}")

    _write_manifest(args.out_dir, "plot", seed, dict(section, kind=kind),
                    inputs, [out_name])
    print(f"plot: {out_name}")
    return 0


# ---------------------------------------------------------------- wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="tidewave",
                     description="Tide estimation from LTE downlink power logs")
    parser.add_argument("--version", action="version",
                        version=f"tidewave {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="RNG seed (default 42)")
    common.add_argument("--config", default=None,
                        help="JSON config file or a stage manifest to rerun")
    common.add_argument("--out-dir", default=".", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="two-ray synthetic tide + metric logs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", parents=[common],
                       help="clean and resample a raw metric log")
    p.add_argument("raw_log", nargs="?", help="raw log CSV")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("analyze", parents=[common],
                       help="scalogram, S(b), events, and plots for one cell")
    p.add_argument("clean", nargs="?", help="cleaned metric CSV")
    p.add_argument("--metric", choices=list(METRICS), default=None)
    p.add_argument("--antenna", default=None,
                   help='antenna index or "mean" (default)')
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("detect", parents=[common],
                       help="run the online detector over an S(b) CSV")
    p.add_argument("s_csv", nargs="?", help="S(b) CSV")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("fuse", parents=[common],
                       help="median-fuse per-cell S(b) files")
    p.add_argument("s_csvs", nargs="*", help="S(b) CSVs, one per cell")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("features", parents=[common],
                       help="build the regression feature matrix")
    p.add_argument("clean", nargs="?", help="cleaned metric CSV")
    p.add_argument("--fused", default=None,
                   help="fused or per-cell S(b) CSV to append")
    p.add_argument("--events", default=None,
                   help="event JSONL used to anchor the tide phase")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common],
                       help="train or fine-tune the water-level regressor")
    p.add_argument("features", nargs="?", help="feature CSV")
    p.add_argument("tide", nargs="?", help="ground-truth tide CSV")
    p.add_argument("--fine-tune-from", dest="fine_tune_from", default=None,
                   help="existing model JSON to adapt instead of training")
    p.add_argument("--adapt-frac", dest="adapt_frac", type=float, default=None,
                   help="leading fraction of rows used for fine-tuning")
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common],
                       help="predict water level from features + model")
    p.add_argument("features", nargs="?", help="feature CSV")
    p.add_argument("model", nargs="?", help="model JSON")
    p.add_argument("--tide", default=None,
                   help="tide CSV to include ground truth in the output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common],
                       help="RMSE/MAE report from a prediction CSV")
    p.add_argument("predictions", nargs="?", help="prediction CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", parents=[common],
                       help="render a tide, feature, or scalogram SVG")
    p.add_argument("kind", nargs="?", choices=["tide", "feature", "scalogram"])
    p.add_argument("input", nargs="?", help="input file (or scalogram dir)")
    p.add_argument("--events", default=None, help="event JSONL overlay")
    p.add_argument("--predictions", default=None,
                   help="prediction CSV overlay for tide plots")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

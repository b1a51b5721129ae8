"""End-to-end orchestration shared by the CLI and the test suite:
featurization of datasets, deterministic splits, training-set assembly,
evaluation and quantification drivers."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Optional

import numpy as np

from . import detect, features, fileio, quantify, simulate
from .config import ExperimentConfig
from .errors import DataFormatError
from .hydraulics import (LeakLevel, classify_leak_level, reynolds_leak,
                         reynolds_pipe)
from .neural import Model, forward

FEATURES_MANIFEST = "features_manifest.json"


def window_role(case_id: str, window: int, seed: int,
                train_fraction: float = 0.75) -> str:
    """Deterministic per-(case, window) train/test assignment."""
    digest = hashlib.sha256(f"{seed}:{case_id}:{window}".encode()).digest()
    u = int.from_bytes(digest[:8], "little") / 2 ** 64
    return "train" if u < train_fraction else "test"


def featurize_recording(recording: simulate.DasRecording,
                        params: features.FeatureParams, z: int,
                        leak_halo: float = 1.0) -> list[features.FeatureCube]:
    """Labeled cubes for one recording."""
    grid = features.spectrogram_grid(recording.samples,
                                     recording.config.sampling_rate, params)
    cubes = list(features.stack_cubes(grid, z))
    leak_position = (None if recording.case.leak is None
                     else recording.case.leak.position)
    return features.label_cubes(cubes, recording.config.channel_spacing,
                                leak_position, halo=leak_halo,
                                n_channels=recording.config.channel_count)


def featurize_dataset(dataset_dir, out_dir, cfg: ExperimentConfig,
                      z: int) -> dict:
    """Run feature extraction over every case of a dataset directory."""
    if z % 2 == 0 or z < 1:
        raise ValueError("Z must be odd and positive")
    dataset_dir = Path(dataset_dir)
    out_dir = Path(out_dir)
    manifest = fileio.read_json(dataset_dir / "manifest.json")
    params = cfg.feature_params()
    halo = cfg.getfloat("features", "leak_halo_m")
    entries = []
    for entry in manifest["cases"]:
        recording = simulate.load_recording(dataset_dir / entry["recording"],
                                            dataset_dir / entry["truth"])
        truth = fileio.read_json(dataset_dir / entry["truth"])
        cubes = featurize_recording(recording, params, z, halo)
        frames = params.frame_count(recording.config.sampling_rate)
        cube_path = out_dir / f"{entry['case_id']}_z{z}.dasf"
        fileio.write_cubes(
            cube_path,
            ((c.center_channel, c.window_index, c.label, c.values)
             for c in cubes),
            z, params.mel_bands_kept, frames)
        n_windows = max(c.window_index for c in cubes) + 1 if cubes else 0
        entries.append({
            "case_id": entry["case_id"],
            "cubes": cube_path.name,
            "n_windows": n_windows,
            "n_channels": recording.config.channel_count,
            "channel_spacing_m": recording.config.channel_spacing,
            "training_positions": recording.training_positions,
            "pipe_flow_rate_m3s": truth["pipe_flow_rate_m3s"],
            "leak_flow_rate_m3s": truth["leak_flow_rate_m3s"],
            "leak_level": truth["leak_level"],
            "leak": truth["leak"],
        })
    out = {"format": "dasleak-features", "version": 1, "z": z,
           "bands": params.mel_bands_kept, "cases": entries}
    fileio.write_json(out_dir / FEATURES_MANIFEST, out)
    return out


def load_case_cubes(path):
    """DASF file -> (values (N,b,f,z), centers, windows, labels)."""
    entries, z = fileio.read_cubes(path)
    values = np.stack([v for _, _, _, v in entries])
    centers = np.array([c for c, _, _, _ in entries], dtype=int)
    windows = np.array([w for _, w, _, _ in entries], dtype=int)
    labels = np.array([-1 if lab is None else lab
                       for _, _, lab, _ in entries], dtype=int)
    return values, centers, windows, labels


def build_training_arrays(feature_dir, cfg: ExperimentConfig):
    """Training cubes: train-split windows, leak channels plus the seven
    designated non-leak positions.  Returns (X, y)."""
    feature_dir = Path(feature_dir)
    manifest = fileio.read_json(feature_dir / FEATURES_MANIFEST)
    split_seed = cfg.getint("train", "split_seed")
    fraction = cfg.getfloat("train", "train_fraction")
    xs, ys = [], []
    for case in manifest["cases"]:
        values, centers, windows, labels = load_case_cubes(
            feature_dir / case["cubes"])
        allowed = set(case["training_positions"])
        keep = np.zeros(len(labels), dtype=bool)
        for i in range(len(labels)):
            if window_role(case["case_id"], int(windows[i]), split_seed,
                           fraction) != "train":
                continue
            if labels[i] == 1 or centers[i] in allowed:
                keep[i] = True
        if keep.any():
            xs.append(values[keep])
            ys.append(labels[keep])
    if not xs:
        raise ValueError("no training cubes found")
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if len(np.unique(y)) < 2:
        raise ValueError("training set is missing a class")
    return x, y


def case_probability_map(model: Model, values, centers, windows,
                         n_channels: int, channel_spacing: float,
                         batch_size: int = 64) -> detect.ProbabilityMap:
    probs = forward(model, values, mode="eval", batch_size=batch_size)[:, 1]
    triples = [(int(w), int(c), float(p))
               for w, c, p in zip(windows, centers, probs)]
    pmap = detect.assemble_map(triples, n_channels, channel_spacing)
    return pmap, probs


def evaluate_case(model: Model, case_entry: dict, feature_dir,
                  cfg: ExperimentConfig):
    """Per-case probability map, median profile, finding and metrics."""
    values, centers, windows, labels = load_case_cubes(
        Path(feature_dir) / case_entry["cubes"])
    pmap, probs = case_probability_map(
        model, values, centers, windows, case_entry["n_channels"],
        case_entry["channel_spacing_m"])
    threshold = cfg.getfloat("detect", "threshold")
    profile = detect.median_profile(pmap, cfg.getfloat("detect", "horizon_s"))
    finding = detect.find_leak(profile, threshold)
    split_seed = cfg.getint("train", "split_seed")
    fraction = cfg.getfloat("train", "train_fraction")
    test_mask = np.array([
        window_role(case_entry["case_id"], int(w), split_seed,
                    fraction) == "test" for w in windows])
    leak_position = (None if case_entry["leak"] is None
                     else case_entry["leak"]["position_m"])
    metrics = detect.score_metrics(probs[test_mask], labels[test_mask],
                                   finding, leak_position, threshold)
    return {
        "pmap": pmap, "profile": profile, "finding": finding,
        "metrics": metrics,
        "test_probs": probs[test_mask], "test_labels": labels[test_mask],
    }


def evaluate_dataset(model: Model, feature_dir, cfg: ExperimentConfig,
                     out_dir: Optional[Path] = None) -> dict:
    """Evaluate every case; optionally write map CSVs; return a report."""
    feature_dir = Path(feature_dir)
    manifest = fileio.read_json(feature_dir / FEATURES_MANIFEST)
    if manifest["z"] != model.spec.z:
        raise DataFormatError(
            f"feature set has Z={manifest['z']} but model expects "
            f"Z={model.spec.z}")
    threshold = cfg.getfloat("detect", "threshold")
    rows = []
    details = {}
    for case in manifest["cases"]:
        result = evaluate_case(model, case, feature_dir, cfg)
        details[case["case_id"]] = result
        if out_dir is not None:
            detect.write_map_csv(Path(out_dir) / f"{case['case_id']}_map.csv",
                                 result["pmap"], result["profile"])
        metrics = result["metrics"]
        finding = result["finding"]
        rows.append({
            "case_id": case["case_id"],
            "leak_level": case["leak_level"],
            "tpr": metrics.tpr,
            "far": metrics.far,
            "declared": finding.declared,
            "center_m": finding.center,
            "location_error_m": metrics.location_error,
            "mean_affected_range_m": (
                quantify.mean_affected_range(result["pmap"],
                                             threshold=threshold)
                if result["pmap"].n_windows >= 6 else None),
        })
    report = {"threshold": threshold, "cases": rows}
    if out_dir is not None:
        fileio.write_json(Path(out_dir) / "evaluation_report.json", report)
    return report, details


def case_re_ratio(case: simulate.CaseSpec, pipe) -> float:
    """Leak-to-pipe Reynolds ratio of a leak case."""
    if case.leak is None:
        raise ValueError("Re ratio requires a leak case")
    return (reynolds_leak(pipe, case.flow.leak_flow_rate,
                          case.leak.orifice_diameter)
            / reynolds_pipe(pipe, case.flow.pipe_flow_rate))


def energy_range_pairs(cases, das_config, pipe,
                       threshold: float = 1.0):
    """(affected range m, Re ratio) pairs from the band-energy detector.

    The affected range here is the above-threshold extent of the
    leak-to-background SNR profile, measured on the generated fields before
    instrument effects.  Returns (pairs, case_ids) over the leak cases.
    """
    pairs, ids = [], []
    for case in cases:
        if case.leak is None:
            continue
        snr = simulate.leak_snr_profile(case, das_config, pipe)
        extent = simulate.snr_extent(snr, das_config.channel_spacing,
                                     threshold)
        pairs.append((extent, case_re_ratio(case, pipe)))
        ids.append(case.case_id)
    return pairs, ids


def quantification_sweep(cases, das_config, pipe,
                         range_model: quantify.RangeModel,
                         threshold: float = 1.0):
    """Classify randomized leak cases end to end with the energy detector.

    Each case is synthesized, its above-threshold extent measured, and the
    extent inverted through the range model and orifice equation into a leak
    level.  Returns (true level, predicted level) pairs; a quantified
    no-leak verdict counts as the lowest level.
    """
    predictions = []
    for case in cases:
        snr = simulate.leak_snr_profile(case, das_config, pipe)
        extent = simulate.snr_extent(snr, das_config.channel_spacing,
                                     threshold)
        result = quantify.quantify(
            extent, range_model, pipe, case.flow.pipe_flow_rate,
            case.leak.gauge_pressure, case.leak.discharge_coefficient)
        level = (LeakLevel.SMALL if result.level is LeakLevel.NO_LEAK
                 else result.level)
        predictions.append(
            (classify_leak_level(case.flow.leak_ratio), level))
    return predictions


def fit_range_model_from_details(details: dict, feature_manifest: dict,
                                 cfg: ExperimentConfig) -> quantify.RangeModel:
    """Fit the affected-range regression on every leak case of a dataset."""
    pipe = cfg.pipe_spec()
    threshold = cfg.getfloat("detect", "threshold")
    pairs, ids = [], []
    for case in feature_manifest["cases"]:
        if case["leak"] is None:
            continue
        ratio = (reynolds_leak(pipe, case["leak_flow_rate_m3s"],
                               case["leak"]["orifice_diameter_m"])
                 / reynolds_pipe(pipe, case["pipe_flow_rate_m3s"]))
        range_m = quantify.mean_affected_range(
            details[case["case_id"]]["pmap"], threshold=threshold)
        pairs.append((range_m, ratio))
        ids.append(case["case_id"])
    return quantify.fit_range_model(pairs, case_ids=ids)


def level_from_name(name: str) -> LeakLevel:
    return LeakLevel(name)

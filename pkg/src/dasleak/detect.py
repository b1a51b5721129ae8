"""Probability maps, median profiles, leak findings and detection metrics.

A probability map is a (window x channel) grid of per-cube leak
probabilities; channels the classifier cannot score (fiber-end channels
without a full cube neighborhood) are absent (NaN).  Leak declaration and
localization work on the per-channel median over a time horizon, which
suppresses short transients.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import DataFormatError
from .fileio import atomic_write

DEFAULT_THRESHOLD = 0.9
DEFAULT_HORIZON_S = 210.0
WINDOW_SECONDS = 5.0


@dataclass
class ProbabilityMap:
    values: np.ndarray               # (windows, channels), NaN = unscored
    channel_spacing: float
    window_seconds: float = WINDOW_SECONDS

    @property
    def n_windows(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self.n_channels) * self.channel_spacing

    def scored_channels(self) -> np.ndarray:
        return np.nonzero(~np.isnan(self.values).all(axis=0))[0]


@dataclass
class MedianProfile:
    values: np.ndarray               # (channels,), NaN = unscored
    channel_spacing: float
    horizon_seconds: float
    clamped: bool = False            # horizon exceeded the map length


@dataclass
class LeakFinding:
    declared: bool
    affected_range: Optional[tuple] = None    # (start m, end m)
    center: Optional[float] = None            # m
    peak_median_probability: Optional[float] = None


@dataclass
class DetectionMetrics:
    tpr: Optional[float]             # None when there were no leak cubes
    far: Optional[float]             # None when there were no non-leak cubes
    location_error: Optional[float]  # m, leak cases only

    def to_dict(self) -> dict:
        return {"tpr": self.tpr, "far": self.far,
                "location_error_m": self.location_error}


def assemble_map(predictions: Iterable[tuple], n_channels: int,
                 channel_spacing: float,
                 window_seconds: float = WINDOW_SECONDS) -> ProbabilityMap:
    """Build a map from (window, channel, probability) triples.

    The triples must cover a full rectangular (window x scored-channel) grid;
    identical duplicates are tolerated, conflicting ones are an error.
    """
    entries = list(predictions)
    if not entries:
        raise ValueError("empty prediction stream")
    windows = sorted({w for w, _, _ in entries})
    channels = sorted({c for _, c, _ in entries})
    if windows != list(range(windows[0], windows[-1] + 1)) or windows[0] != 0:
        raise ValueError("prediction windows must cover 0..max contiguously")
    values = np.full((windows[-1] + 1, n_channels), np.nan)
    for w, c, p in entries:
        if not 0 <= c < n_channels:
            raise ValueError(f"channel {c} outside 0..{n_channels - 1}")
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
        if not math.isnan(values[w, c]) and values[w, c] != p:
            raise ValueError(f"conflicting duplicate prediction at window {w},"
                             f" channel {c}")
        values[w, c] = p
    grid = values[:, channels]
    if np.isnan(grid).any():
        raise ValueError("predictions do not cover the full window x channel grid")
    return ProbabilityMap(values=values, channel_spacing=channel_spacing,
                          window_seconds=window_seconds)


def _low_median(column: np.ndarray) -> float:
    """Lower-middle order statistic (deterministic even-count median)."""
    ordered = np.sort(column)
    return float(ordered[(len(ordered) - 1) // 2])


def median_profile(pmap: ProbabilityMap,
                   horizon_seconds: float = DEFAULT_HORIZON_S) -> MedianProfile:
    """Per-channel median probability over the most recent horizon."""
    if horizon_seconds < pmap.window_seconds:
        raise ValueError("horizon must cover at least one window")
    k = int(math.ceil(horizon_seconds / pmap.window_seconds))
    clamped = k > pmap.n_windows
    k = min(k, pmap.n_windows)
    recent = pmap.values[-k:]
    values = np.full(pmap.n_channels, np.nan)
    for c in pmap.scored_channels():
        values[c] = _low_median(recent[:, c])
    return MedianProfile(values=values, channel_spacing=pmap.channel_spacing,
                         horizon_seconds=horizon_seconds, clamped=clamped)


def _runs_above(values: np.ndarray, threshold: float) -> list[tuple]:
    """Contiguous index runs with value > threshold, as (first, last) pairs."""
    above = np.zeros(len(values), dtype=bool)
    finite = ~np.isnan(values)
    above[finite] = values[finite] > threshold
    runs = []
    start = None
    for i, flag in enumerate(above):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(above) - 1))
    return runs


def find_leak(profile: MedianProfile,
              threshold: float = DEFAULT_THRESHOLD) -> LeakFinding:
    """Widest above-threshold run; ties broken by peak median, then leftmost."""
    runs = _runs_above(profile.values, threshold)
    if not runs:
        return LeakFinding(declared=False)
    spacing = profile.channel_spacing

    def sort_key(run):
        first, last = run
        width = last - first + 1
        peak = np.nanmax(profile.values[first:last + 1])
        return (-width, -peak, first)

    first, last = min(runs, key=sort_key)
    start_m = first * spacing - spacing / 2
    end_m = last * spacing + spacing / 2
    return LeakFinding(
        declared=True,
        affected_range=(start_m, end_m),
        center=(first + last) / 2 * spacing,
        peak_median_probability=float(np.nanmax(profile.values[first:last + 1])))


def cube_rates(probabilities: np.ndarray, labels: np.ndarray,
               threshold: float = DEFAULT_THRESHOLD):
    """Per-cube TPR over leak cubes and FAR over non-leak cubes.

    Returns (tpr, far); either is None when its denominator is zero.
    """
    probabilities = np.asarray(probabilities, dtype=float)
    labels = np.asarray(labels)
    declared = probabilities > threshold
    leak = labels == 1
    non_leak = labels == 0
    tpr = float(declared[leak].mean()) if leak.any() else None
    far = float(declared[non_leak].mean()) if non_leak.any() else None
    return tpr, far


def score_metrics(probabilities: np.ndarray, labels: np.ndarray,
                  finding: LeakFinding, true_leak_position: Optional[float],
                  threshold: float = DEFAULT_THRESHOLD) -> DetectionMetrics:
    tpr, far = cube_rates(probabilities, labels, threshold)
    location_error = None
    if true_leak_position is not None and finding.declared:
        location_error = abs(finding.center - true_leak_position)
    return DetectionMetrics(tpr=tpr, far=far, location_error=location_error)


def window_affected_ranges(pmap: ProbabilityMap,
                           threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Per-window widest above-threshold run width (meters); 0 if no run."""
    widths = np.zeros(pmap.n_windows)
    for w in range(pmap.n_windows):
        runs = _runs_above(pmap.values[w], threshold)
        if runs:
            widths[w] = max(last - first + 1 for first, last in runs) \
                * pmap.channel_spacing
    return widths


def write_map_csv(path, pmap: ProbabilityMap,
                  profile: Optional[MedianProfile] = None) -> None:
    """CSV export: header of channel positions, one row per 5-s window,
    absent entries empty; median profile appended as a commented row."""
    with atomic_write(path, "w") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"{p:.3f}" for p in pmap.positions])
        for w in range(pmap.n_windows):
            writer.writerow(["" if math.isnan(v) else f"{v:.6f}"
                             for v in pmap.values[w]])
        if profile is not None:
            fh.write("# median,")
            fh.write(",".join("" if math.isnan(v) else f"{v:.6f}"
                              for v in profile.values))
            fh.write("\n")


def read_map_csv(path) -> ProbabilityMap:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if len(rows) < 2:
        raise DataFormatError(f"{path}: probability-map CSV needs a header "
                              "and at least one window row")
    try:
        positions = np.array([float(p) for p in rows[0]])
    except ValueError as exc:
        raise DataFormatError(f"{path}: bad header row ({exc})") from exc
    if len(positions) > 1:
        spacing = float(positions[1] - positions[0])
    else:
        spacing = 1.0
    values = np.full((len(rows) - 1, len(positions)), np.nan)
    for i, row in enumerate(rows[1:]):
        if len(row) != len(positions):
            raise DataFormatError(f"{path}: row {i + 1} has {len(row)} cells, "
                                  f"expected {len(positions)}")
        for j, cell in enumerate(row):
            if cell != "":
                values[i, j] = float(cell)
    return ProbabilityMap(values=values, channel_spacing=spacing)

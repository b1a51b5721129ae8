"""Leak quantification: affected-range regression, orifice-equation
inversion, three-level classification.

The affected range (meters of fiber above the detection threshold) grows
about linearly with the leak-to-pipe Reynolds ratio.  Fitting that line on
training cases and inverting it with the orifice equation recovers the leak
diameter and flow rate from a probability map alone:

    ratio  = max(0, (range - b) / a)
    Re_l   = ratio * Re_pipe(q_pipe)
    v_jet  = C_d * sqrt(2 dP / rho)
    d      = Re_l * nu / v_jet
    Q_leak = v_jet * pi d^2 / 4
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .detect import DEFAULT_THRESHOLD, ProbabilityMap, window_affected_ranges
from .hydraulics import (LeakLevel, PipeSpec, classify_leak_level,
                         reynolds_pipe)

QUANT_WINDOW_SECONDS = 30.0


@dataclass(frozen=True)
class RangeModel:
    slope: float                   # m per unit Re ratio
    intercept: float               # m
    r_squared: float
    fit_case_ids: tuple = ()

    def to_dict(self) -> dict:
        return {"a": self.slope, "b": self.intercept,
                "r_squared": self.r_squared,
                "fit_case_ids": list(self.fit_case_ids)}

    @staticmethod
    def from_dict(d: dict) -> "RangeModel":
        return RangeModel(slope=d["a"], intercept=d["b"],
                          r_squared=d["r_squared"],
                          fit_case_ids=tuple(d.get("fit_case_ids", ())))


@dataclass(frozen=True)
class QuantifiedLeak:
    estimated_re_ratio: float
    estimated_orifice_diameter: float     # m
    estimated_leak_flow: float            # m^3/s
    estimated_leak_ratio: float
    level: LeakLevel

    def to_dict(self) -> dict:
        return {
            "estimated_re_ratio": self.estimated_re_ratio,
            "estimated_orifice_diameter_m": self.estimated_orifice_diameter,
            "estimated_leak_flow_m3s": self.estimated_leak_flow,
            "estimated_leak_ratio": self.estimated_leak_ratio,
            "level": self.level.value,
        }


def fit_range_model(pairs: Sequence[tuple], case_ids=()) -> RangeModel:
    """Ordinary least squares range = a * ratio + b over (range, ratio) pairs."""
    if len(pairs) < 2:
        raise ValueError("need at least two (range, ratio) pairs")
    ranges = np.array([p[0] for p in pairs], dtype=float)
    ratios = np.array([p[1] for p in pairs], dtype=float)
    if np.ptp(ratios) == 0:
        raise ValueError("degenerate fit: all Re ratios identical")
    x = ratios - ratios.mean()
    y = ranges - ranges.mean()
    slope = float((x * y).sum() / (x * x).sum())
    intercept = float(ranges.mean() - slope * ratios.mean())
    residual = ranges - (slope * ratios + intercept)
    ss_res = float((residual ** 2).sum())
    ss_tot = float((y ** 2).sum())
    r_squared = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return RangeModel(slope=slope, intercept=intercept, r_squared=r_squared,
                      fit_case_ids=tuple(case_ids))


def mean_affected_range(pmap: ProbabilityMap,
                        window_seconds: float = QUANT_WINDOW_SECONDS,
                        threshold: float = DEFAULT_THRESHOLD) -> float:
    """Mean widest-run width (m) over the most recent 30 s of the map.

    Windows without any above-threshold run contribute 0.
    """
    k = int(math.ceil(window_seconds / pmap.window_seconds))
    if pmap.n_windows < k:
        raise ValueError(f"map covers {pmap.n_windows} windows, "
                         f"need {k} for a {window_seconds:.0f}-s mean")
    widths = window_affected_ranges(pmap, threshold)
    return float(widths[-k:].mean())


def quantify(range_m: float, model: RangeModel, pipe: PipeSpec,
             q_pipe: float, gauge_pressure: float,
             discharge_coefficient: float = 0.61) -> QuantifiedLeak:
    """Invert the range model and orifice equation into leak estimates."""
    if model.slope <= 0:
        raise ValueError("non-physical range model: slope must be > 0")
    if q_pipe <= 0 or gauge_pressure <= 0:
        raise ValueError("q_pipe and gauge_pressure must be > 0")
    ratio = max(0.0, (range_m - model.intercept) / model.slope)
    re_leak = ratio * reynolds_pipe(pipe, q_pipe)
    v_jet = discharge_coefficient * math.sqrt(
        2.0 * gauge_pressure / pipe.water_density)
    diameter = re_leak * pipe.kinematic_viscosity / v_jet
    leak_flow = v_jet * math.pi * diameter ** 2 / 4.0
    leak_ratio = leak_flow / q_pipe
    return QuantifiedLeak(
        estimated_re_ratio=ratio,
        estimated_orifice_diameter=diameter,
        estimated_leak_flow=leak_flow,
        estimated_leak_ratio=leak_ratio,
        level=classify_leak_level(leak_ratio))


LEVEL_ORDER = (LeakLevel.SMALL, LeakLevel.SIGNIFICANT, LeakLevel.EXCESSIVE)


def truth_table(predictions: Sequence[tuple]) -> dict:
    """3x3 confusion matrix over {Small, Significant, Excessive}.

    ``predictions`` is a list of (true LeakLevel, predicted LeakLevel).
    Returns counts, per-class accuracy (diagonal / row sum, None for empty
    rows) and overall accuracy.
    """
    if not predictions:
        raise ValueError("empty prediction list")
    index = {level: i for i, level in enumerate(LEVEL_ORDER)}
    counts = np.zeros((3, 3), dtype=int)
    for true_level, pred_level in predictions:
        if true_level not in index:
            raise ValueError(f"{true_level} is not a three-level class")
        col = index.get(pred_level)
        if col is None:
            raise ValueError(f"{pred_level} is not a three-level class")
        counts[index[true_level], col] += 1
    per_class = {}
    for level, i in index.items():
        row = counts[i].sum()
        per_class[level.value] = (None if row == 0
                                  else float(counts[i, i] / row))
    overall = float(np.trace(counts) / counts.sum())
    return {"classes": [l.value for l in LEVEL_ORDER],
            "counts": counts.tolist(),
            "per_class_accuracy": per_class,
            "overall_accuracy": overall}


def quantify_from_map(pmap: ProbabilityMap, model: RangeModel, pipe: PipeSpec,
                      q_pipe: float, gauge_pressure: float,
                      discharge_coefficient: float = 0.61,
                      threshold: float = DEFAULT_THRESHOLD) -> QuantifiedLeak:
    range_m = mean_affected_range(pmap, threshold=threshold)
    return quantify(range_m, model, pipe, q_pipe, gauge_pressure,
                    discharge_coefficient)

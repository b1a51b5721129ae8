"""Dimensional hydraulics: Reynolds numbers, orifice flow, leak-level taxonomy.

All quantities are SI (m, s, Pa, m^3/s). Pure functions, no state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

# Kinematic viscosity of water near 20 degC (m^2/s).  Back-solved so that
# reynolds_pipe reproduces the reference pipe Reynolds numbers 10837 and
# 45674 for 0.427 L/s and 1.80 L/s in a 50 mm pipe.
WATER_KINEMATIC_VISCOSITY = 1.0035e-6
WATER_DENSITY = 998.0

# Sharp-edged orifice discharge coefficient.
DEFAULT_DISCHARGE_COEFF = 0.61


class LeakLevel(Enum):
    NO_LEAK = "no_leak"
    SMALL = "small"
    SIGNIFICANT = "significant"
    EXCESSIVE = "excessive"


# Leak-to-pipe flow ratio boundaries of the three-level scale.  The 5% and
# 15% boundary points are assigned to SIGNIFICANT (inclusive upper bounds).
SMALL_MAX_RATIO = 0.05
SIGNIFICANT_MAX_RATIO = 0.15


@dataclass(frozen=True)
class PipeSpec:
    """Geometry and fluid properties of the sensed water pipe."""

    internal_diameter: float = 0.05          # m
    wall_thickness: float = 0.0036           # m
    sensed_length: float = 40.0              # m
    kinematic_viscosity: float = WATER_KINEMATIC_VISCOSITY  # m^2/s
    water_density: float = WATER_DENSITY     # kg/m^3

    def __post_init__(self):
        for name in ("internal_diameter", "wall_thickness", "sensed_length",
                     "kinematic_viscosity", "water_density"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"PipeSpec.{name} must be finite and > 0, got {v!r}")
        if self.sensed_length < 1.0:
            raise ValueError("sensed_length must be >= 1 m")


@dataclass(frozen=True)
class LeakSpec:
    """A single artificial leak: drilled orifice on a pressurized pipe."""

    orifice_diameter: float                  # m
    position: float                          # m along the sensed pipe
    gauge_pressure: float = 200e3            # Pa
    discharge_coefficient: float = DEFAULT_DISCHARGE_COEFF

    def validate(self, pipe: PipeSpec) -> None:
        if not 0 < self.orifice_diameter < pipe.internal_diameter:
            raise ValueError("orifice_diameter must lie in (0, internal_diameter)")
        if not 0 <= self.position <= pipe.sensed_length:
            raise ValueError("leak position outside sensed pipe")
        if not self.gauge_pressure > 0:
            raise ValueError("gauge_pressure must be > 0")
        if not 0 < self.discharge_coefficient <= 1:
            raise ValueError("discharge_coefficient must lie in (0, 1]")


@dataclass(frozen=True)
class FlowState:
    """Steady pipe and leak volumetric flow rates (m^3/s)."""

    pipe_flow_rate: float
    leak_flow_rate: float = 0.0

    def __post_init__(self):
        if not self.pipe_flow_rate > 0:
            raise ValueError("pipe_flow_rate must be > 0")
        if not 0 <= self.leak_flow_rate < self.pipe_flow_rate:
            raise ValueError("leak_flow_rate must lie in [0, pipe_flow_rate)")

    @property
    def leak_ratio(self) -> float:
        return self.leak_flow_rate / self.pipe_flow_rate


def reynolds_pipe(pipe: PipeSpec, q: float) -> float:
    """Reynolds number of the pipe flow: Re = 4 q / (pi D nu)."""
    if not (math.isfinite(q) and q > 0):
        raise ValueError(f"pipe flow rate must be finite and > 0, got {q!r}")
    return 4.0 * q / (math.pi * pipe.internal_diameter * pipe.kinematic_viscosity)


def reynolds_leak(pipe: PipeSpec, leak_q: float, orifice_diameter: float) -> float:
    """Reynolds number of the leak jet: Re = 4 q_leak / (pi d nu)."""
    if not (math.isfinite(leak_q) and leak_q > 0):
        raise ValueError(f"leak flow rate must be finite and > 0, got {leak_q!r}")
    if not (math.isfinite(orifice_diameter) and orifice_diameter > 0):
        raise ValueError("orifice_diameter must be finite and > 0")
    return 4.0 * leak_q / (math.pi * orifice_diameter * pipe.kinematic_viscosity)


def jet_velocity(leak: LeakSpec, pipe: PipeSpec) -> float:
    """Effective jet velocity v = C_d sqrt(2 dP / rho) through the orifice."""
    return leak.discharge_coefficient * math.sqrt(
        2.0 * leak.gauge_pressure / pipe.water_density)


def orifice_flow(leak: LeakSpec, pipe: PipeSpec) -> float:
    """Orifice-equation leak flow Q = C_d (pi d^2 / 4) sqrt(2 dP / rho)."""
    leak.validate(pipe)
    area = math.pi * leak.orifice_diameter ** 2 / 4.0
    return jet_velocity(leak, pipe) * area


def classify_leak_level(leak_ratio: float) -> LeakLevel:
    """Map a leak-to-pipe flow ratio to the three-level leak scale."""
    if not (math.isfinite(leak_ratio) and leak_ratio >= 0):
        raise ValueError(f"leak_ratio must be finite and >= 0, got {leak_ratio!r}")
    if leak_ratio == 0:
        return LeakLevel.NO_LEAK
    if leak_ratio < SMALL_MAX_RATIO:
        return LeakLevel.SMALL
    if leak_ratio <= SIGNIFICANT_MAX_RATIO:
        return LeakLevel.SIGNIFICANT
    return LeakLevel.EXCESSIVE


@dataclass(frozen=True)
class CaseRow:
    """One row of the reference 11-case test matrix (flows in L/s, dia in mm)."""

    case_id: int
    level: LeakLevel
    pipe_flow_lps: float
    leak_flow_lps: float          # 0 for no-leak cases
    leak_ratio_pct: float         # 0 for no-leak cases
    orifice_mm: float             # 0 for no-leak cases
    pipe_re: float                # published reference value
    leak_re: float                # published reference value (0 if none)
    re_ratio: float               # published reference value (0 if none)
    duration_min: float

    @property
    def has_leak(self) -> bool:
        return self.leak_flow_lps > 0


# Reference experimental case matrix: 9 steady-state leak conditions plus two
# leak-free baselines at the two pipe flow rates.  Published Reynolds columns
# are kept for verification.  Levels follow the stated ratio thresholds
# (case 7 at 8.0% is therefore SIGNIFICANT, case 9 at 1.5% SMALL).
CASE_MATRIX = (
    CaseRow(1, LeakLevel.EXCESSIVE,   0.427, 0.319, 74.7, 3.72, 10837, 108987, 10.06, 14),
    CaseRow(2, LeakLevel.EXCESSIVE,   0.427, 0.261, 61.1, 3.36, 10837,  98657,  9.10, 14),
    CaseRow(3, LeakLevel.EXCESSIVE,   0.427, 0.102, 23.9, 2.15, 10837,  60418,  5.58, 14),
    CaseRow(4, LeakLevel.EXCESSIVE,   1.800, 0.399, 22.2, 4.63, 45674, 109347,  2.39, 14),
    CaseRow(5, LeakLevel.SIGNIFICANT, 1.800, 0.257, 14.3, 3.72, 45674,  87663,  1.92, 14),
    CaseRow(6, LeakLevel.SIGNIFICANT, 1.800, 0.209, 11.6, 3.36, 45674,  78918,  1.73, 14),
    CaseRow(7, LeakLevel.SIGNIFICANT, 0.427, 0.034,  8.0, 1.22, 10837,  35233,  3.25, 14),
    CaseRow(8, LeakLevel.SMALL,       1.800, 0.084,  4.7, 2.15, 45674,  49696,  1.09, 14),
    CaseRow(9, LeakLevel.SMALL,       1.800, 0.027,  1.5, 1.22, 45674,  28445,  0.62, 14),
    CaseRow(10, LeakLevel.NO_LEAK,    0.427, 0.0,    0.0, 0.0,  10837,      0,   0.0, 28),
    CaseRow(11, LeakLevel.NO_LEAK,    1.800, 0.0,    0.0, 0.0,  45674,      0,   0.0, 28),
)

"""Synthetic DAS testbed generator.

Phenomenological signal model of a fiber-on-pipe vibration measurement:

* flow-induced background: zero-mean colored Gaussian noise, RMS proportional
  to the square of the pipe flow rate, first-order low-pass envelope above
  500 Hz; flange and elbow channels couple more strongly (x1.5, x1.3);
* leak signature: stationary broadband noise (flat 200-4000 Hz), spatially
  decaying as A0 * exp(-|x|/lambda) around the leak channel, with both A0 and
  lambda proportional to the leak-to-pipe Reynolds ratio, so the
  above-noise-floor extent grows about linearly with that ratio;
* instrument: gauge-length spatial moving average plus additive white noise;
* optional short broadband transients localized to <= 3 channels.

Everything is a pure function of (parameters, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from . import fileio
from .hydraulics import (CASE_MATRIX, FlowState, LeakLevel, LeakSpec,
                         PipeSpec, classify_leak_level, reynolds_leak,
                         reynolds_pipe)

# Flow-noise RMS = FLOW_NOISE_COEFF * q^2  (q in m^3/s); normalized so the
# 1.8 L/s reference flow has unit RMS.
FLOW_NOISE_COEFF = 1.0 / (1.8e-3) ** 2
FLOW_LOWPASS_CORNER_HZ = 500.0
FLANGE_COUPLING = 1.5
ELBOW_COUPLING = 1.3

# Leak signature calibration: amplitude at the leak channel is
# LEAK_AMP_COEFF * (Re ratio) * (flow-noise RMS); spatial decay length is
# LEAK_DECAY_COEFF * (Re ratio) meters.  Chosen so the band-energy extent
# at unit SNR threshold stays linear in the Re ratio across the reference
# cases (largest one-sided extent < 8 m, the leak-to-fiber-start
# clearance) while the smallest reference leak (ratio 0.62) still clears
# the threshold only at its own channel.
LEAK_AMP_COEFF = 8.0
LEAK_DECAY_COEFF = 0.17
LEAK_BAND_HZ = (200.0, 4000.0)
TRANSIENT_BAND_HZ = (100.0, 4500.0)

DEFAULT_LEAK_POSITION_M = 8.0
DEFAULT_GAUGE_PRESSURE_PA = 200e3


class PositionTag(Enum):
    STRAIGHT_PIPE = "straight_pipe"
    FLANGE_JOINT = "flange_joint"
    ELBOW = "elbow"
    LEAK_ORIFICE = "leak_orifice"


@dataclass(frozen=True)
class DasConfig:
    sampling_rate: float = 10000.0
    channel_spacing: float = 0.8
    spatial_resolution: float = 2.0
    channel_count: int = 50
    instrument_noise_rms: float = 0.1

    def __post_init__(self):
        if self.sampling_rate <= 0 or self.channel_spacing <= 0:
            raise ValueError("sampling_rate and channel_spacing must be > 0")
        if self.spatial_resolution < self.channel_spacing:
            raise ValueError("spatial_resolution must be >= channel_spacing")
        if self.channel_count < 9:
            raise ValueError("channel_count must cover the largest cube depth")

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self.channel_count) * self.channel_spacing

    @property
    def gauge_window(self) -> int:
        return int(round(self.spatial_resolution / self.channel_spacing)) + 1


@dataclass(frozen=True)
class CaseSpec:
    case_id: str
    flow: FlowState
    leak: Optional[LeakSpec]
    duration: float
    seed: int
    level_hint: Optional[str] = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if (self.leak is not None) != (self.flow.leak_flow_rate > 0):
            raise ValueError("leak spec present iff leak_flow_rate > 0")


def default_position_tags(channel_count: int,
                          leak_channel: Optional[int]) -> list[PositionTag]:
    """Flange at 22.4 m, elbows at 17.6 m and 32 m, leak orifice if present.

    Fittings sit in the back section of the pipe, well clear of the leak
    signature's spatial footprint around 8 m.
    """
    tags = [PositionTag.STRAIGHT_PIPE] * channel_count
    for ch, tag in ((28, PositionTag.FLANGE_JOINT),
                    (22, PositionTag.ELBOW), (40, PositionTag.ELBOW)):
        if ch < channel_count:
            tags[ch] = tag
    if leak_channel is not None:
        tags[leak_channel] = PositionTag.LEAK_ORIFICE
    return tags


def default_training_positions(channel_count: int) -> list[int]:
    """Seven non-leak training channels: flange, two elbows, four straight.

    All of them sit at least 9 m from the default leak position so the
    non-leak class is not taught on leak-contaminated channels.
    """
    return [ch for ch in (28, 22, 40, 25, 31, 36, 44) if ch < channel_count]


@dataclass
class DasRecording:
    config: DasConfig
    samples: np.ndarray                       # (channels, time) float32
    case: CaseSpec
    position_tags: list[PositionTag] = field(default_factory=list)
    training_positions: list[int] = field(default_factory=list)

    @property
    def leak_channel(self) -> Optional[int]:
        if self.case.leak is None:
            return None
        return int(round(self.case.leak.position / self.config.channel_spacing))


def _shaped_noise(rng: np.random.Generator, n: int, sample_rate: float,
                  rms: float, shape_fn) -> np.ndarray:
    """Gaussian noise whose spectrum is weighted by shape_fn(freqs), exact RMS."""
    if rms == 0:
        return np.zeros(n)
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    weights = shape_fn(np.fft.rfftfreq(n, 1.0 / sample_rate))
    spec *= weights
    out = np.fft.irfft(spec, n)
    scale = out.std()
    if scale == 0:
        return np.zeros(n)
    return out * (rms / scale)


def _lowpass_shape(freqs: np.ndarray) -> np.ndarray:
    # -20 dB/decade amplitude roll-off above the corner frequency.
    return 1.0 / np.sqrt(1.0 + (freqs / FLOW_LOWPASS_CORNER_HZ) ** 2)


def _band_shape(low: float, high: float):
    def shape(freqs: np.ndarray) -> np.ndarray:
        return ((freqs >= low) & (freqs <= high)).astype(float)
    return shape


def flow_noise_rms(q: float) -> float:
    """Square-law background level for a pipe flow rate q (m^3/s)."""
    return FLOW_NOISE_COEFF * q * q


def coupling_factor(tag: PositionTag) -> float:
    if tag is PositionTag.FLANGE_JOINT:
        return FLANGE_COUPLING
    if tag is PositionTag.ELBOW:
        return ELBOW_COUPLING
    return 1.0


def synth_flow_noise(config: DasConfig, pipe: PipeSpec, q: float,
                     tags: list[PositionTag], seed,
                     n_samples: int) -> np.ndarray:
    """Per-channel flow-induced background noise, shape (channels, n_samples)."""
    if q <= 0:
        raise ValueError("pipe flow rate must be > 0")
    base_rms = flow_noise_rms(q)
    ss = np.random.SeedSequence(seed) if not isinstance(
        seed, np.random.SeedSequence) else seed
    out = np.empty((config.channel_count, n_samples), dtype=np.float64)
    for ch, child in enumerate(ss.spawn(config.channel_count)):
        rng = np.random.Generator(np.random.PCG64(child))
        rms = base_rms * coupling_factor(tags[ch])
        out[ch] = _shaped_noise(rng, n_samples, config.sampling_rate, rms,
                                _lowpass_shape)
    return out


def leak_envelope(config: DasConfig, pipe: PipeSpec, leak: LeakSpec,
                  flow: FlowState) -> np.ndarray:
    """Closed-form per-channel RMS amplitude of the leak signature."""
    ratio = (reynolds_leak(pipe, flow.leak_flow_rate, leak.orifice_diameter)
             / reynolds_pipe(pipe, flow.pipe_flow_rate))
    a0 = LEAK_AMP_COEFF * ratio * flow_noise_rms(flow.pipe_flow_rate)
    lam = LEAK_DECAY_COEFF * ratio
    dist = np.abs(config.positions - leak.position)
    return a0 * np.exp(-dist / lam)


def synth_leak_signature(config: DasConfig, pipe: PipeSpec, leak: LeakSpec,
                         flow: FlowState, seed,
                         n_samples: int) -> np.ndarray:
    """Stationary broadband leak signature, shape (channels, n_samples)."""
    if flow.leak_flow_rate <= 0:
        raise ValueError("leak signature requires leak_flow_rate > 0")
    leak.validate(pipe)
    envelope = leak_envelope(config, pipe, leak, flow)
    ss = np.random.SeedSequence(seed) if not isinstance(
        seed, np.random.SeedSequence) else seed
    shape = _band_shape(*LEAK_BAND_HZ)
    out = np.zeros((config.channel_count, n_samples), dtype=np.float64)
    peak = envelope.max()
    for ch, child in enumerate(ss.spawn(config.channel_count)):
        if envelope[ch] < 1e-9 * peak:
            continue
        rng = np.random.Generator(np.random.PCG64(child))
        out[ch] = _shaped_noise(rng, n_samples, config.sampling_rate,
                                envelope[ch], shape)
    return out


def apply_transient(samples: np.ndarray, config: DasConfig, position: float,
                    start: float, duration: float, amplitude: float,
                    seed) -> np.ndarray:
    """Add a short broadband burst (<= 3 channels) to a recording in place."""
    if duration > 5.0:
        raise ValueError("transient duration must be <= 5 s")
    n_total = samples.shape[1]
    i0 = int(round(start * config.sampling_rate))
    n = int(round(duration * config.sampling_rate))
    if i0 < 0 or n <= 0 or i0 + n > n_total:
        raise ValueError("transient burst outside recording bounds")
    center = int(round(position / config.channel_spacing))
    if center < 0 or center >= config.channel_count:
        raise ValueError("transient position outside the sensed span")
    if amplitude == 0:
        return samples
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / max(n - 1, 1))
    shape = _band_shape(*TRANSIENT_BAND_HZ)
    for ch, weight in ((center - 1, 0.5), (center, 1.0), (center + 1, 0.5)):
        if 0 <= ch < config.channel_count:
            burst = _shaped_noise(rng, n, config.sampling_rate,
                                  amplitude * weight, shape)
            samples[ch, i0:i0 + n] += (burst * window).astype(samples.dtype)
    return samples


def apply_instrument(config: DasConfig, samples: np.ndarray,
                     seed=None) -> np.ndarray:
    """Gauge-length spatial moving average plus white instrument noise."""
    window = config.gauge_window
    half = window // 2
    padded = np.pad(samples, ((half, half), (0, 0)))
    out = np.zeros_like(samples, dtype=np.float64)
    for k in range(window):
        out += padded[k:k + samples.shape[0]]
    out /= window
    if config.instrument_noise_rms > 0 and seed is not None:
        rng = np.random.Generator(np.random.PCG64(
            seed if isinstance(seed, np.random.SeedSequence)
            else np.random.SeedSequence(seed)))
        out += config.instrument_noise_rms * rng.standard_normal(out.shape)
    return out


def synth_case(case: CaseSpec, config: DasConfig,
               pipe: PipeSpec) -> DasRecording:
    """Generate one full recording for a case, deterministically in its seed."""
    n_samples = int(round(case.duration * config.sampling_rate))
    leak_channel = None
    if case.leak is not None:
        leak_channel = int(round(case.leak.position / config.channel_spacing))
    tags = default_position_tags(config.channel_count, leak_channel)
    ss_flow, ss_leak, ss_inst = np.random.SeedSequence(case.seed).spawn(3)
    samples = synth_flow_noise(config, pipe, case.flow.pipe_flow_rate,
                                     tags, ss_flow, n_samples)
    if case.leak is not None:
        samples += synth_leak_signature(config, pipe, case.leak, case.flow,
                                        ss_leak, n_samples)
    samples = apply_instrument(config, samples, ss_inst)
    return DasRecording(config=config, samples=samples.astype(np.float32),
                        case=case, position_tags=tags,
                        training_positions=default_training_positions(
                            config.channel_count))


def band_rms(samples: np.ndarray, sampling_rate: float,
             band=LEAK_BAND_HZ) -> np.ndarray:
    """Per-channel RMS restricted to a frequency band, shape (channels,)."""
    spec = np.fft.rfft(samples, axis=-1)
    freqs = np.fft.rfftfreq(samples.shape[-1], 1.0 / sampling_rate)
    mask = (freqs >= band[0]) & (freqs <= band[1])
    n = samples.shape[-1]
    power = (np.abs(spec[..., mask]) ** 2).sum(axis=-1)
    # one-sided spectrum: double everything except DC/Nyquist, which the
    # band excludes anyway for the defaults
    return np.sqrt(2.0 * power) / n


def leak_snr_profile(case: CaseSpec, config: DasConfig,
                     pipe: PipeSpec) -> np.ndarray:
    """Per-channel leak-to-background amplitude SNR in the leak band.

    Uses the same per-component seed schedule as synth_case, but measures
    the flow and leak fields separately before instrument effects — a
    band-energy detector with perfect background knowledge.
    """
    if case.leak is None:
        raise ValueError("SNR profile requires a leak case")
    n_samples = int(round(case.duration * config.sampling_rate))
    leak_channel = int(round(case.leak.position / config.channel_spacing))
    tags = default_position_tags(config.channel_count, leak_channel)
    ss_flow, ss_leak, _ = np.random.SeedSequence(case.seed).spawn(3)
    flow = synth_flow_noise(config, pipe, case.flow.pipe_flow_rate, tags,
                            ss_flow, n_samples)
    leak = synth_leak_signature(config, pipe, case.leak, case.flow,
                                ss_leak, n_samples)
    return (band_rms(leak, config.sampling_rate)
            / band_rms(flow, config.sampling_rate))


def snr_extent(snr: np.ndarray, channel_spacing: float,
               threshold: float = 1.0) -> float:
    """Width (m) of the widest contiguous run with SNR >= threshold."""
    best = cur = 0
    for above in snr >= threshold:
        cur = cur + 1 if above else 0
        best = max(best, cur)
    return best * channel_spacing


def implied_gauge_pressure(leak_flow: float, orifice_diameter: float,
                           pipe: PipeSpec,
                           discharge_coefficient: float = 0.61) -> float:
    """Gauge pressure making the orifice equation reproduce a measured flow."""
    area = math.pi * orifice_diameter ** 2 / 4.0
    v = leak_flow / (discharge_coefficient * area)
    return 0.5 * pipe.water_density * v * v


def reference_cases(duration: float = 120.0, base_seed: int = 20211120,
                    pipe: Optional[PipeSpec] = None,
                    leak_position: float = DEFAULT_LEAK_POSITION_M
                    ) -> list[CaseSpec]:
    """The 11-row reference case matrix at desk-scale duration.

    Each leak case carries the gauge pressure implied by its measured flow and
    orifice diameter, so the orifice equation holds exactly per case.
    """
    pipe = pipe or PipeSpec()
    cases = []
    for row in CASE_MATRIX:
        q_pipe = row.pipe_flow_lps * 1e-3
        q_leak = row.leak_flow_lps * 1e-3
        leak = None
        if row.has_leak:
            d = row.orifice_mm * 1e-3
            leak = LeakSpec(orifice_diameter=d, position=leak_position,
                            gauge_pressure=implied_gauge_pressure(q_leak, d, pipe))
        cases.append(CaseSpec(
            case_id=f"case{row.case_id:02d}",
            flow=FlowState(pipe_flow_rate=q_pipe, leak_flow_rate=q_leak),
            leak=leak, duration=duration, seed=base_seed + row.case_id,
            level_hint=row.level.value))
    return cases


# Flow-ratio bands (margins inside the 5% / 15% level boundaries) and
# leak-to-pipe Reynolds-ratio ranges used when sampling randomized leak
# cases.  The Re-ratio ranges keep the spatial footprint of each level
# resolvable at the 0.8 m channel pitch.
_SWEEP_FLOW_RATIO = {
    LeakLevel.SMALL: (0.010, 0.040),
    LeakLevel.SIGNIFICANT: (0.065, 0.135),
    LeakLevel.EXCESSIVE: (0.170, 0.550),
}
_SWEEP_RE_RATIO = {
    LeakLevel.SMALL: (0.4, 1.9),
    LeakLevel.SIGNIFICANT: (2.0, 6.0),
    LeakLevel.EXCESSIVE: (2.5, 8.5),
}
_SWEEP_ORIFICE_RANGE_M = (0.8e-3, 8e-3)


def random_leak_cases(n_per_level: int = 20, seed: int = 0,
                      pipe: Optional[PipeSpec] = None,
                      duration: float = 30.0,
                      leak_position: float = DEFAULT_LEAK_POSITION_M
                      ) -> list[CaseSpec]:
    """Randomized leak cases, stratified over the three leak levels.

    Flow ratio and Re ratio are drawn independently per level; the orifice
    diameter follows from the two (d = flow_ratio * D / re_ratio) and the
    gauge pressure is implied by the orifice equation, so every sampled case
    is dimensionally self-consistent.  Draws with an out-of-range orifice
    are resampled.  Deterministic in ``seed``.
    """
    pipe = pipe or PipeSpec()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    d_lo, d_hi = _SWEEP_ORIFICE_RANGE_M
    cases = []
    for level in (LeakLevel.SMALL, LeakLevel.SIGNIFICANT,
                  LeakLevel.EXCESSIVE):
        made = 0
        while made < n_per_level:
            flow_ratio = rng.uniform(*_SWEEP_FLOW_RATIO[level])
            re_ratio = rng.uniform(*_SWEEP_RE_RATIO[level])
            d = flow_ratio * pipe.internal_diameter / re_ratio
            if not d_lo <= d <= d_hi:
                continue
            i = len(cases)
            q_pipe = 0.427e-3 if i % 2 == 0 else 1.8e-3
            q_leak = flow_ratio * q_pipe
            leak = LeakSpec(
                orifice_diameter=d, position=leak_position,
                gauge_pressure=implied_gauge_pressure(q_leak, d, pipe))
            cases.append(CaseSpec(
                case_id=f"sweep{i:02d}",
                flow=FlowState(pipe_flow_rate=q_pipe, leak_flow_rate=q_leak),
                leak=leak, duration=duration, seed=seed * 100000 + i,
                level_hint=level.value))
            made += 1
    return cases


def truth_sidecar(recording: DasRecording) -> dict:
    case = recording.case
    config = recording.config
    leak = None
    if case.leak is not None:
        leak = {
            "orifice_diameter_m": case.leak.orifice_diameter,
            "position_m": case.leak.position,
            "gauge_pressure_pa": case.leak.gauge_pressure,
            "discharge_coefficient": case.leak.discharge_coefficient,
        }
    return {
        "case_id": case.case_id,
        "pipe_flow_rate_m3s": case.flow.pipe_flow_rate,
        "leak_flow_rate_m3s": case.flow.leak_flow_rate,
        "leak_ratio": case.flow.leak_ratio,
        "leak_level": classify_leak_level(case.flow.leak_ratio).value,
        "leak": leak,
        "duration_s": case.duration,
        "seed": case.seed,
        "sampling_rate_hz": config.sampling_rate,
        "channel_spacing_m": config.channel_spacing,
        "spatial_resolution_m": config.spatial_resolution,
        "channel_count": config.channel_count,
        "instrument_noise_rms": config.instrument_noise_rms,
        "position_tags": [t.value for t in recording.position_tags],
        "training_positions": recording.training_positions,
    }


def build_dataset(cases: list[CaseSpec], config: DasConfig, pipe: PipeSpec,
                  out_dir) -> dict:
    """Generate every case, write DASR + truth sidecars, return the manifest."""
    if not cases:
        raise ValueError("case list must be non-empty")
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate case_id in case list")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for case in cases:
        recording = synth_case(case, config, pipe)
        rec_path = out_dir / f"{case.case_id}.dasr"
        truth_path = out_dir / f"{case.case_id}.truth"
        fileio.write_recording(rec_path, recording.samples,
                               config.sampling_rate, config.channel_spacing)
        fileio.write_json(truth_path, truth_sidecar(recording))
        entries.append({
            "case_id": case.case_id,
            "recording": rec_path.name,
            "truth": truth_path.name,
            "seed": case.seed,
            "duration_s": case.duration,
            "pipe_flow_rate_m3s": case.flow.pipe_flow_rate,
            "leak_flow_rate_m3s": case.flow.leak_flow_rate,
            "sha256": fileio.file_digest(rec_path),
        })
    manifest = {"format": "dasleak-dataset", "version": 1, "cases": entries}
    fileio.write_json(out_dir / "manifest.json", manifest)
    return manifest


def load_recording(rec_path, truth_path=None) -> DasRecording:
    """Read a DASR file plus its truth sidecar back into a DasRecording."""
    rec_path = Path(rec_path)
    if truth_path is None:
        truth_path = rec_path.with_suffix(".truth")
    samples, rate, spacing = fileio.read_recording(rec_path)
    truth = fileio.read_json(truth_path)
    config = DasConfig(sampling_rate=rate, channel_spacing=spacing,
                       spatial_resolution=truth["spatial_resolution_m"],
                       channel_count=samples.shape[0],
                       instrument_noise_rms=truth["instrument_noise_rms"])
    leak = None
    if truth["leak"] is not None:
        leak = LeakSpec(
            orifice_diameter=truth["leak"]["orifice_diameter_m"],
            position=truth["leak"]["position_m"],
            gauge_pressure=truth["leak"]["gauge_pressure_pa"],
            discharge_coefficient=truth["leak"]["discharge_coefficient"])
    case = CaseSpec(case_id=truth["case_id"],
                    flow=FlowState(pipe_flow_rate=truth["pipe_flow_rate_m3s"],
                                   leak_flow_rate=truth["leak_flow_rate_m3s"]),
                    leak=leak, duration=truth["duration_s"],
                    seed=truth["seed"])
    tags = [PositionTag(t) for t in truth["position_tags"]]
    return DasRecording(config=config, samples=samples, case=case,
                        position_tags=tags,
                        training_positions=list(truth["training_positions"]))

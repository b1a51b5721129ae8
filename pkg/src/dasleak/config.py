"""Experiment configuration: flat INI-style sections with exhaustive
defaults.  Unknown sections or keys are rejected."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

from .errors import UsageError
from .features import FeatureParams
from .hydraulics import PipeSpec
from .neural import ArchitectureSpec, TrainConfig, VARIANT_2D, VARIANT_3D
from .simulate import DasConfig

_DEFAULTS = {
    "das": {
        "sampling_rate": "10000",
        "channel_spacing": "0.8",
        "spatial_resolution": "2.0",
        "channel_count": "50",
        "instrument_noise_rms": "0.1",
    },
    "pipe": {
        "internal_diameter": "0.05",
        "wall_thickness": "0.0036",
        "sensed_length": "40.0",
        "kinematic_viscosity": "1.0035e-6",
        "water_density": "998.0",
    },
    "simulate": {
        "duration_s": "120",
        "base_seed": "20211120",
        "leak_position_m": "8.0",
    },
    "features": {
        "segment_seconds": "5.0",
        "window_length": "2048",
        "hop_length": "512",
        "mel_bands_total": "128",
        "mel_bands_kept": "90",
        "freq_min": "0",
        "freq_max": "5000",
        "leak_halo_m": "1.0",
    },
    "model": {
        "variant": "cnn3d",
        "z": "5",
        "dropout_rate": "0.3",
    },
    "train": {
        "batch_size": "128",
        "epochs": "100",
        "learning_rate": "1e-3",
        "lr_decay": "0.96",
        "l2_penalty": "0.003",
        "patience": "10",
        "val_fraction": "0.1",
        "train_fraction": "0.75",
        "split_seed": "7",
        "init_seed": "1",
        "train_seed": "2",
    },
    "detect": {
        "threshold": "0.9",
        "horizon_s": "210",
    },
    "quantify": {
        "gauge_pressure_pa": "200e3",
        "discharge_coefficient": "0.61",
        "window_s": "30",
    },
}


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=dict)

    def get(self, section: str, key: str) -> str:
        return self.raw[section][key]

    def getfloat(self, section: str, key: str) -> float:
        return float(self.get(section, key))

    def getint(self, section: str, key: str) -> int:
        return int(float(self.get(section, key)))

    def das_config(self) -> DasConfig:
        return DasConfig(
            sampling_rate=self.getfloat("das", "sampling_rate"),
            channel_spacing=self.getfloat("das", "channel_spacing"),
            spatial_resolution=self.getfloat("das", "spatial_resolution"),
            channel_count=self.getint("das", "channel_count"),
            instrument_noise_rms=self.getfloat("das", "instrument_noise_rms"))

    def pipe_spec(self) -> PipeSpec:
        return PipeSpec(
            internal_diameter=self.getfloat("pipe", "internal_diameter"),
            wall_thickness=self.getfloat("pipe", "wall_thickness"),
            sensed_length=self.getfloat("pipe", "sensed_length"),
            kinematic_viscosity=self.getfloat("pipe", "kinematic_viscosity"),
            water_density=self.getfloat("pipe", "water_density"))

    def feature_params(self) -> FeatureParams:
        return FeatureParams(
            segment_seconds=self.getfloat("features", "segment_seconds"),
            window_length=self.getint("features", "window_length"),
            hop_length=self.getint("features", "hop_length"),
            mel_bands_total=self.getint("features", "mel_bands_total"),
            mel_bands_kept=self.getint("features", "mel_bands_kept"),
            freq_min=self.getfloat("features", "freq_min"),
            freq_max=self.getfloat("features", "freq_max"))

    def architecture(self, variant: str | None = None, z: int | None = None,
                     input_frames: int | None = None) -> ArchitectureSpec:
        variant = variant or self.get("model", "variant")
        if variant not in (VARIANT_2D, VARIANT_3D):
            raise UsageError(f"unknown model variant {variant!r}")
        if input_frames is None:
            input_frames = self.feature_params().frame_count(
                self.getfloat("das", "sampling_rate"))
        return ArchitectureSpec(
            variant=variant,
            z=z if z is not None else self.getint("model", "z"),
            input_bands=self.getint("features", "mel_bands_kept"),
            input_frames=input_frames,
            dropout_rate=self.getfloat("model", "dropout_rate"))

    def train_config(self, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(
            batch_size=self.getint("train", "batch_size"),
            epochs=epochs if epochs is not None
            else self.getint("train", "epochs"),
            learning_rate=self.getfloat("train", "learning_rate"),
            lr_decay=self.getfloat("train", "lr_decay"),
            l2_penalty=self.getfloat("train", "l2_penalty"),
            patience=self.getint("train", "patience"),
            val_fraction=self.getfloat("train", "val_fraction"))

    def dump(self) -> str:
        parser = configparser.ConfigParser()
        for section, keys in self.raw.items():
            parser[section] = dict(keys)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        canonical = "\n".join(
            f"{s}.{k}={self.raw[s][k]}"
            for s in sorted(self.raw) for k in sorted(self.raw[s]))
        return hashlib.sha256(canonical.encode()).hexdigest()


def default_config() -> ExperimentConfig:
    return ExperimentConfig(raw={s: dict(kv) for s, kv in _DEFAULTS.items()})


def load_config(path=None) -> ExperimentConfig:
    """Defaults overlaid with an optional INI file; unknown keys rejected."""
    cfg = default_config()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc
    if not read:
        raise UsageError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in cfg.raw:
            raise UsageError(f"unknown config section [{section}]")
        for key, value in parser[section].items():
            if key not in cfg.raw[section]:
                raise UsageError(f"unknown config key {key!r} in [{section}]")
            cfg.raw[section][key] = value
    return cfg

"""Preprocessing: segmentation, Z-score, Mel-spectrograms, 3D cube stacking.

The feature of one (channel, 5-s window) pair is a 90x98 matrix: an STFT with
Hann window 2048 and hop 512 (center/reflect padded, hence 98 frames at
10 kHz), a 128-triangle Mel filterbank on [0, 5000] Hz, log(1+P) compression,
the first 90 bands, and a final per-matrix Z-score.  Cubes stack the matrices
of Z consecutive channels.

Mel scale: mel(f) = 2595 * log10(1 + f/700).  Triangles are built on points
uniformly spaced in mel between the band edges, with 2/(width) area
normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np


@dataclass(frozen=True)
class FeatureParams:
    segment_seconds: float = 5.0
    window_length: int = 2048      # 204.8 ms at 10 kHz
    hop_length: int = 512          # 51.2 ms at 10 kHz
    mel_bands_total: int = 128
    mel_bands_kept: int = 90
    freq_min: float = 0.0
    freq_max: float = 5000.0
    center_padding: bool = True

    def __post_init__(self):
        if self.hop_length > self.window_length:
            raise ValueError("hop_length must be <= window_length")
        if self.mel_bands_kept > self.mel_bands_total:
            raise ValueError("mel_bands_kept must be <= mel_bands_total")

    def validate_rate(self, sample_rate: float) -> None:
        if self.freq_max > sample_rate / 2 + 1e-9:
            raise ValueError("freq_max exceeds Nyquist frequency")

    def clip_length(self, sample_rate: float) -> int:
        return int(round(self.segment_seconds * sample_rate))

    def frame_count(self, sample_rate: float) -> int:
        n = self.clip_length(sample_rate)
        if self.center_padding:
            return 1 + n // self.hop_length
        return 1 + (n - self.window_length) // self.hop_length


@dataclass
class MelSpectrogram:
    values: np.ndarray            # (mel_bands_kept, frames)
    source_channel: int
    window_index: int


@dataclass
class FeatureCube:
    values: np.ndarray            # (bands, frames, Z)
    center_channel: int
    window_index: int
    label: Optional[int] = None   # 1 leak, 0 non-leak, None unlabeled


def zscore(x: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance scaling; constant input maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean()
    std = x.std()
    # Treat round-off-level spread of a constant input as zero variance.
    if std <= 1e-12 * max(abs(mean), 1.0) or not np.isfinite(std):
        return np.zeros_like(x)
    return (x - mean) / std


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(window_length: int, sample_rate: float, n_mels: int,
                   fmin: float, fmax: float) -> np.ndarray:
    """Triangular Mel filterbank, shape (n_mels, window_length//2 + 1)."""
    n_bins = window_length // 2 + 1
    bin_freqs = np.arange(n_bins) * sample_rate / window_length
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lower = (bin_freqs - edges[i]) / (edges[i + 1] - edges[i])
        upper = (edges[i + 2] - bin_freqs) / (edges[i + 2] - edges[i + 1])
        fb[i] = np.maximum(0.0, np.minimum(lower, upper))
        fb[i] *= 2.0 / (edges[i + 2] - edges[i])
    return fb


def mel_center_frequencies(params: FeatureParams) -> np.ndarray:
    """Center frequency (Hz) of every Mel band."""
    edges = mel_to_hz(np.linspace(hz_to_mel(params.freq_min),
                                  hz_to_mel(params.freq_max),
                                  params.mel_bands_total + 2))
    return edges[1:-1]


def _hann(n: int) -> np.ndarray:
    # Periodic Hann analysis window.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(signal: np.ndarray, params: FeatureParams) -> np.ndarray:
    """Magnitude STFT, shape (window_length//2 + 1, frames)."""
    x = np.asarray(signal, dtype=np.float64)
    n_fft = params.window_length
    hop = params.hop_length
    if params.center_padding:
        x = np.pad(x, n_fft // 2, mode="reflect")
    n_frames = 1 + (len(x) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * _hann(n_fft)[None, :]
    return np.abs(np.fft.rfft(frames, axis=1)).T


def mel_spectrogram(clip: np.ndarray, params: FeatureParams,
                    sample_rate: float) -> np.ndarray:
    """Full per-clip feature: returns the (mel_bands_kept, frames) matrix."""
    params.validate_rate(sample_rate)
    clip = np.asarray(clip, dtype=np.float64)
    expected = params.clip_length(sample_rate)
    if clip.ndim != 1 or len(clip) != expected:
        raise ValueError(f"clip must be 1D with {expected} samples, got shape "
                         f"{clip.shape}")
    clip = zscore(clip)
    mag = stft_magnitude(clip, params)
    power = mag ** 2
    fb = mel_filterbank(params.window_length, sample_rate,
                        params.mel_bands_total, params.freq_min, params.freq_max)
    mel = fb @ power
    mel = np.log1p(mel)
    kept = mel[:params.mel_bands_kept]
    return zscore(kept)


def segment(samples: np.ndarray, sample_rate: float,
            params: FeatureParams) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield (channel, window_index, clip) for non-overlapping 5-s windows.

    Trailing partial windows are discarded.
    """
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.size == 0:
        raise ValueError("recording must be a non-empty (channel, time) array")
    clip_len = params.clip_length(sample_rate)
    n_windows = samples.shape[1] // clip_len
    for channel in range(samples.shape[0]):
        for w in range(n_windows):
            yield channel, w, samples[channel, w * clip_len:(w + 1) * clip_len]


def spectrogram_grid(samples: np.ndarray, sample_rate: float,
                     params: FeatureParams) -> np.ndarray:
    """All per-(channel, window) matrices, shape (channels, windows, bands, frames)."""
    clip_len = params.clip_length(sample_rate)
    n_channels = samples.shape[0]
    n_windows = samples.shape[1] // clip_len
    frames = params.frame_count(sample_rate)
    out = np.empty((n_channels, n_windows, params.mel_bands_kept, frames),
                   dtype=np.float32)
    for channel, w, clip in segment(samples, sample_rate, params):
        out[channel, w] = mel_spectrogram(clip, params, sample_rate)
    return out


def stack_cubes(grid: np.ndarray, z: int) -> Iterator[FeatureCube]:
    """Stack Z consecutive channels around every interior center channel.

    ``grid`` is (channels, windows, bands, frames).  Edge channels without a
    full neighborhood are skipped, not padded.
    """
    if z % 2 == 0 or z < 1:
        raise ValueError("Z must be odd and positive")
    n_channels, n_windows = grid.shape[:2]
    if z > n_channels:
        raise ValueError("Z exceeds channel count")
    half = z // 2
    for w in range(n_windows):
        for center in range(half, n_channels - half):
            values = np.moveaxis(grid[center - half:center + half + 1, w], 0, -1)
            yield FeatureCube(values=np.ascontiguousarray(values),
                              center_channel=center, window_index=w)


def leak_channels(n_channels: int, channel_spacing: float,
                  leak_position: float, halo: float = 1.0) -> list[int]:
    """Channels whose position is within ``halo`` meters of the leak."""
    positions = np.arange(n_channels) * channel_spacing
    dist = np.abs(positions - leak_position)
    return [int(c) for c in np.nonzero(dist <= halo + 1e-9)[0]]


def label_cubes(cubes, channel_spacing: float, leak_position: Optional[float],
                halo: float = 1.0, n_channels: Optional[int] = None):
    """Assign leak / non-leak labels in place and return the cubes.

    A cube is a leak iff the case has a leak and its center channel lies
    within ``halo`` meters of the leak position.  With halo 0 only the single
    nearest channel is labeled leak.
    """
    cubes = list(cubes)
    if leak_position is None:
        hits: set[int] = set()
    else:
        count = n_channels if n_channels is not None else (
            max(c.center_channel for c in cubes) + 1)
        if halo <= 0:
            positions = np.arange(count) * channel_spacing
            hits = {int(np.argmin(np.abs(positions - leak_position)))}
        else:
            hits = set(leak_channels(count, channel_spacing, leak_position, halo))
    for cube in cubes:
        cube.label = 1 if cube.center_channel in hits else 0
    return cubes

"""Mixed acoustic feature: log-mel, MFCC, spectral centroid and RMS energy.

All four are computed on the same STFT hop, resized to a fixed number of
columns and stacked row-wise in the order (mel, mfcc, sc, rmse).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from .audio_io import AudioClip, frame_signal
from .errors import ConfigError, FormatError, ShapeError

FEATURE_MAGIC = b"MDMFEAT1"
BLOCK_ORDER = ("mel", "mfcc", "sc", "rmse")


@dataclass(frozen=True)
class DspConfig:
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    n_mfcc: int = 20
    fmin: float = 0.0
    fmax: float | None = None  # None means sample_rate / 2
    target_frames: int = 256
    log_floor: float = 1e-10
    sample_rate: int = 22050

    def __post_init__(self):
        if self.n_fft <= 0 or self.n_fft & (self.n_fft - 1):
            raise ConfigError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ConfigError("hop must be in (0, n_fft]")
        if not 0 < self.n_mfcc <= self.n_mels:
            raise ConfigError(f"n_mfcc ({self.n_mfcc}) must not exceed n_mels ({self.n_mels})")
        if self.target_frames <= 0:
            raise ConfigError("target_frames must be positive")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if not 0 <= self.fmin < self.upper_hz <= self.sample_rate / 2:
            raise ConfigError("need 0 <= fmin < fmax <= sample_rate/2")

    @property
    def upper_hz(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)

    @property
    def n_rows(self) -> int:
        return self.n_mels + self.n_mfcc + 2

    def layout(self) -> dict[str, list[int]]:
        """Row span ``[start, stop)`` of each block."""
        sizes = (self.n_mels, self.n_mfcc, 1, 1)
        out, start = {}, 0
        for name, size in zip(BLOCK_ORDER, sizes):
            out[name] = [start, start + size]
            start += size
        return out


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # (n_fft // 2 + 1, frames)
    bin_hz: float

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[1]

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.magnitudes.shape[0]) * self.bin_hz


@dataclass
class MixedFeature:
    rows: np.ndarray  # (n_rows, target_frames)
    layout: dict[str, list[int]]
    normalized: bool = False

    def block(self, name: str) -> np.ndarray:
        a, b = self.layout[name]
        return self.rows[a:b]


@dataclass(frozen=True)
class NormStats:
    """Per-row mean/std measured on the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrices, min_std: float = 1e-6) -> "NormStats":
        stacked = np.concatenate([np.asarray(m, dtype=np.float64) for m in matrices], axis=1)
        return cls(stacked.mean(axis=1), np.maximum(stacked.std(axis=1), min_std))

    def apply(self, rows: np.ndarray) -> np.ndarray:
        if rows.shape[0] != self.mean.shape[0]:
            raise ShapeError(f"stats cover {self.mean.shape[0]} rows, feature has {rows.shape[0]}")
        return (rows - self.mean[:, None]) / self.std[:, None]


def hann(n: int) -> np.ndarray:
    # periodic Hann, the usual choice for STFT analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(clip: AudioClip, cfg: DspConfig) -> Spectrogram:
    frames = frame_signal(clip.samples, cfg.n_fft, cfg.hop)
    mag = np.abs(np.fft.rfft(frames * hann(cfg.n_fft), axis=1)).T
    return Spectrogram(mag, clip.sample_rate / cfg.n_fft)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: DspConfig) -> np.ndarray:
    """``n_mels + 2`` frequencies equally spaced on the mel scale."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.upper_hz), cfg.n_mels + 2))


@lru_cache(maxsize=16)
def _filterbank(cfg: DspConfig, sample_rate: int) -> np.ndarray:
    edges = mel_band_edges(cfg)
    fft_hz = np.arange(cfg.n_fft // 2 + 1) * sample_rate / cfg.n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_hz[None, :] - lower) / (center - lower)
    falling = (upper - fft_hz[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb *= (2.0 / (upper - lower))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ConfigError(
            f"n_mels={cfg.n_mels} too large for {cfg.fmin}-{cfg.upper_hz} Hz at n_fft={cfg.n_fft}: "
            f"bands {empty.tolist()[:5]} cover no FFT bin"
        )
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg: DspConfig, sample_rate: int | None = None) -> np.ndarray:
    """Triangular mel filters with area normalization, shape ``(n_mels, n_fft//2 + 1)``."""
    return _filterbank(cfg, int(sample_rate or cfg.sample_rate))


def mel_spectrogram(spec: Spectrogram, fb: np.ndarray) -> np.ndarray:
    if fb.shape[1] != spec.magnitudes.shape[0]:
        raise ShapeError(f"filterbank expects {fb.shape[1]} bins, spectrogram has {spec.magnitudes.shape[0]}")
    return fb @ (spec.magnitudes ** 2)


def mfcc(mel: np.ndarray, cfg: DspConfig) -> np.ndarray:
    if mel.shape[0] < cfg.n_mfcc:
        raise ConfigError(f"need at least {cfg.n_mfcc} mel bands, got {mel.shape[0]}")
    return dct(np.log(mel + cfg.log_floor), type=2, norm="ortho", axis=0)[: cfg.n_mfcc]


def spectral_centroid(spec: Spectrogram) -> np.ndarray:
    mag = spec.magnitudes
    total = mag.sum(axis=0)
    weighted = spec.frequencies @ mag
    out = np.zeros(mag.shape[1])
    live = total >= 1e-12
    out[live] = weighted[live] / total[live]
    return out


def rmse(clip: AudioClip, cfg: DspConfig) -> np.ndarray:
    frames = frame_signal(clip.samples, cfg.n_fft, cfg.hop)
    return np.sqrt(np.mean(frames ** 2, axis=1))


def resize_time(rows: np.ndarray, target: int) -> np.ndarray:
    """Linearly interpolate each row to ``target`` columns, endpoints pinned."""
    rows = np.atleast_2d(rows)
    n = rows.shape[1]
    if n == target:
        return rows.copy()
    if n == 1:
        return np.repeat(rows, target, axis=1)
    pos = np.linspace(0.0, n - 1, target)
    lo = np.minimum(np.floor(pos).astype(int), n - 2)
    frac = pos - lo
    return rows[:, lo] * (1.0 - frac) + rows[:, lo + 1] * frac


def resize_rows(rows: np.ndarray, target: int) -> np.ndarray:
    return resize_time(rows.T, target).T


def _log_mel(mel: np.ndarray, cfg: DspConfig) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(mel, cfg.log_floor))


def assemble_mixed_feature(clip: AudioClip, cfg: DspConfig, stats: NormStats | None = None) -> MixedFeature:
    spec = stft_magnitude(clip, cfg)
    mel = mel_spectrogram(spec, mel_filterbank(cfg, clip.sample_rate))
    parts = (
        _log_mel(mel, cfg),
        mfcc(mel, cfg),
        spectral_centroid(spec)[None, :],
        rmse(clip, cfg)[None, :],
    )
    rows = np.concatenate([resize_time(p, cfg.target_frames) for p in parts], axis=0)
    if stats is not None:
        rows = stats.apply(rows)
    return MixedFeature(rows, cfg.layout(), normalized=stats is not None)


def stft_feature(clip: AudioClip, cfg: DspConfig, stats: NormStats | None = None) -> MixedFeature:
    """Magnitude STFT resized to the mixed-feature shape (ablation input)."""
    mag = stft_magnitude(clip, cfg).magnitudes
    rows = resize_rows(resize_time(mag, cfg.target_frames), cfg.n_rows)
    if stats is not None:
        rows = stats.apply(rows)
    return MixedFeature(rows, {"stft": [0, cfg.n_rows]}, normalized=stats is not None)


def write_feature_dump(path, feat: MixedFeature, cfg: DspConfig, extra: dict | None = None) -> None:
    rows = np.ascontiguousarray(feat.rows, dtype="<f4")
    header = {
        "rows": int(rows.shape[0]),
        "cols": int(rows.shape[1]),
        "layout": feat.layout,
        "normalized": feat.normalized,
        "config": asdict(cfg),
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<I", len(blob)) + blob + rows.tobytes())


def read_feature_dump(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != FEATURE_MAGIC:
        raise FormatError("bad feature dump magic")
    (n,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12 : 12 + n])
    body = data[12 + n :]
    expected = header["rows"] * header["cols"] * 4
    if len(body) != expected:
        raise FormatError(f"feature payload is {len(body)} bytes, header implies {expected}")
    return np.frombuffer(body, dtype="<f4").reshape(header["rows"], header["cols"]).astype(np.float64), header

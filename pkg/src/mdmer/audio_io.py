"""WAV decoding and the small amount of signal plumbing the DSP stage needs.

Everything here is a pure function over immutable :class:`AudioClip` values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, UnsupportedCodecError, ValidationError

CANONICAL_SR = 22050

_PCM = 0x0001
_IEEE_FLOAT = 0x0003
_EXTENSIBLE = 0xFFFE
_CODEC_NAMES = {0x0002: "MS ADPCM", 0x0006: "A-law", 0x0007: "mu-law", 0x0011: "IMA ADPCM", 0x0055: "MP3"}


@dataclass(frozen=True)
class AudioClip:
    """Audio buffer, shape ``(n,)`` for mono or ``(n, channels)``."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""
    channels: int = field(init=False)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[0] == 0:
            raise ValidationError("audio clip must hold at least one frame")
        if not np.all(np.isfinite(x)):
            raise ValidationError("audio samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValidationError(f"sample rate must be positive, got {self.sample_rate}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "channels", 1 if x.ndim == 1 else x.shape[1])

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        yield cid, body
        pos += 8 + size + (size & 1)


def decode_wav(data: bytes, source_id: str = "") -> AudioClip:
    """Decode a RIFF/WAVE byte string (PCM16 or float32, 1-2 channels).

    Stereo input stays two-channel; call :func:`to_mono` to mix it down.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file")
    fmt = None
    payload = None
    for cid, body in _chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise FormatError("truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _EXTENSIBLE and len(body) >= 26:
                # the real codec tag is the first two bytes of the subformat GUID
                sub = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            payload = body
    if fmt is None:
        raise FormatError("missing fmt chunk")
    if payload is None:
        raise FormatError("missing data chunk")
    tag, channels, sr, _, block_align, bits = fmt
    if tag not in (_PCM, _IEEE_FLOAT):
        raise UnsupportedCodecError(tag, _CODEC_NAMES.get(tag, "unknown"))
    if channels not in (1, 2):
        raise FormatError(f"expected 1 or 2 channels, got {channels}")
    if tag == _PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedCodecError(tag, f"{bits}-bit {'PCM' if tag == _PCM else 'float'}")
    frame_bytes = dtype.itemsize * channels
    n_frames = len(payload) // frame_bytes
    if n_frames == 0:
        raise FormatError("data chunk holds no sample frames")
    x = np.frombuffer(payload[: n_frames * frame_bytes], dtype=dtype).astype(np.float64) * scale
    if channels == 2:
        x = x.reshape(n_frames, 2)
    return AudioClip(np.clip(x, -1.0, 1.0), sr, source_id)


def read_wav(path, source_id: str | None = None) -> AudioClip:
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_wav(data, source_id if source_id is not None else str(path))


def encode_wav_pcm16(samples: np.ndarray, sample_rate: int) -> bytes:
    """Serialize ``samples`` (mono or ``(n, 2)``) to 16-bit PCM WAV bytes."""
    x = np.asarray(samples, dtype=np.float64)
    channels = 1 if x.ndim == 1 else x.shape[1]
    q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
    fmt = struct.pack("<HHIIHH", _PCM, channels, sample_rate, sample_rate * 2 * channels, 2 * channels, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(q)) + q
    return b"RIFF" + struct.pack("<I", len(body)) + body


def to_mono(clip: AudioClip) -> AudioClip:
    if clip.channels == 1:
        return clip
    return AudioClip(clip.samples.mean(axis=1), clip.sample_rate, clip.source_id)


def resample(clip: AudioClip, target_sr: int) -> AudioClip:
    """Linear-interpolation resampler.

    No anti-aliasing filter is applied, so content above the new Nyquist
    frequency folds back. Fine for the tonal material this package handles.
    """
    if target_sr <= 0:
        raise ValidationError(f"target sample rate must be positive, got {target_sr}")
    if target_sr == clip.sample_rate:
        return clip
    n_in = len(clip)
    n_out = max(1, int(round(n_in * target_sr / clip.sample_rate)))
    t_out = np.arange(n_out) * (clip.sample_rate / target_sr)
    t_in = np.arange(n_in)
    x = clip.samples
    if x.ndim == 1:
        y = np.interp(t_out, t_in, x)
    else:
        y = np.stack([np.interp(t_out, t_in, x[:, c]) for c in range(x.shape[1])], axis=1)
    return AudioClip(y, target_sr, clip.source_id)


def frame_count(n: int, frame_len: int, hop: int) -> int:
    if n <= frame_len:
        return 1
    return 1 + (n - frame_len) // hop


def frame_signal(samples, frame_len: int, hop: int) -> np.ndarray:
    """Slice ``samples`` into overlapping frames, shape ``(n_frames, frame_len)``.

    Frames start at multiples of ``hop``; a trailing partial frame is
    dropped. A signal shorter than one frame yields a single zero-padded
    frame.
    """
    if frame_len <= 0 or hop <= 0:
        raise ValidationError("frame_len and hop must be positive")
    x = np.asarray(samples, dtype=np.float64)
    n = x.shape[0]
    if n < frame_len:
        out = np.zeros((1, frame_len))
        out[0, :n] = x
        return out
    # strided read-only view, no copy
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]


def load_canonical(path, sample_rate: int = CANONICAL_SR, source_id: str | None = None) -> AudioClip:
    """Read a WAV file and bring it to mono at ``sample_rate``."""
    return resample(to_mono(read_wav(path, source_id)), sample_rate)

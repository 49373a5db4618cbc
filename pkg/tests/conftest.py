import io
import struct
import wave

import numpy as np
import pytest


def wav_bytes_stdlib(samples, sample_rate, channels=1):
    """Independent PCM16 writer built on the stdlib ``wave`` module."""
    q = np.clip(np.round(np.asarray(samples) * 32767), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(q.tobytes())
    return buf.getvalue()


def raw_wav(fmt_tag, channels, sample_rate, bits, payload: bytes):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, sample_rate, sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def vlq(n):
    out = [n & 0x7F]
    n >>= 7
    while n:
        out.append((n & 0x7F) | 0x80)
        n >>= 7
    return bytes(reversed(out))


def smf(tracks, division=480, fmt=None):
    """Assemble an SMF from lists of ``(delta_ticks, raw_event_bytes)``."""
    fmt = (0 if len(tracks) == 1 else 1) if fmt is None else fmt
    out = b"MThd" + struct.pack(">IHHH", 6, fmt, len(tracks), division)
    for events in tracks:
        body = b"".join(vlq(d) + ev for d, ev in events)
        out += b"MTrk" + struct.pack(">I", len(body)) + body
    return out


def tempo(uspq):
    return b"\xff\x51\x03" + uspq.to_bytes(3, "big")


END = b"\xff\x2f\x00"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

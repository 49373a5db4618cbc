"""Paired WAV + MIDI clips whose emotion label is fixed by construction.

Arousal controls loudness (peak 0.8 vs 0.1), note velocity (100 vs 40) and
chord rate (8/s vs 2/s). Valence controls mode (major vs minor triads) and
register (roots around C5 vs C3).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..audio_io import CANONICAL_SR, encode_wav_pcm16
from ..emotion_model import EmotionLabel, Quadrant
from ..errors import ValidationError
from ..symbolic import NoteEvent, encode_midi
from .data import ManifestEntry, write_manifest

DURATION = 2.0
DECAY = 0.4  # seconds, amplitude time constant of each partial
RELEASE = 0.01

AROUSAL = {1: dict(peak=0.8, velocity=100, rate=8.0), 0: dict(peak=0.1, velocity=40, rate=2.0)}
VALENCE = {1: dict(intervals=(0, 4, 7), center=72), 0: dict(intervals=(0, 3, 7), center=48)}


def clip_notes(label: EmotionLabel, rng: np.random.Generator, duration: float = DURATION) -> list[NoteEvent]:
    a, v = AROUSAL[label.arousal], VALENCE[label.valence]
    step = 1.0 / a["rate"]
    notes = []
    t = float(rng.uniform(0.0, 0.05))
    while t + 0.05 < duration:
        root = v["center"] + int(rng.integers(-3, 4))
        length = min(step * float(rng.uniform(0.8, 1.0)), duration - t)
        vel = int(np.clip(a["velocity"] + rng.integers(-5, 6), 1, 127))
        for iv in v["intervals"]:
            notes.append(NoteEvent(round(t, 4), round(t + length, 4), root + iv, vel))
        t += step
    return notes


def render(notes, peak: float, sample_rate: int = CANONICAL_SR, duration: float = DURATION) -> np.ndarray:
    """Sum of exponentially decaying sinusoids, scaled to ``peak``."""
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    for note in notes:
        start = int(round(note.onset * sample_rate))
        stop = min(n, int(round((note.offset + RELEASE) * sample_rate)))
        if stop <= start:
            continue
        t = np.arange(stop - start) / sample_rate
        f0 = 440.0 * 2.0 ** ((note.pitch - 69) / 12.0)
        tone = np.zeros_like(t)
        for k, amp in ((1, 1.0), (2, 0.4), (3, 0.2)):
            if k * f0 < sample_rate / 2:
                tone += amp * np.sin(2 * np.pi * k * f0 * t)
        env = np.exp(-t / DECAY) * (note.velocity / 127.0)
        tail = min(len(env), int(RELEASE * sample_rate))
        env[-tail:] *= np.linspace(1.0, 0.0, tail)
        out[start:stop] += tone * env
    m = np.abs(out).max()
    return out * (peak / m) if m > 0 else out


def generate_synthetic(n_clips: int, seed: int, out_dir) -> list[ManifestEntry]:
    """Write ``n_clips`` clips (equal share per quadrant) plus ``manifest.jsonl``."""
    if n_clips < 8 or n_clips % 4:
        raise ValidationError("n_clips must be at least 8 and divisible by 4")
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "midi").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_clips):
        label = EmotionLabel(Quadrant(i % 4))
        rng = np.random.default_rng([seed, i])
        notes = clip_notes(label, rng)
        audio = render(notes, AROUSAL[label.arousal]["peak"])
        cid = f"synth_{i:04d}"
        wav, mid = out / "audio" / f"{cid}.wav", out / "midi" / f"{cid}.mid"
        wav.write_bytes(encode_wav_pcm16(audio, CANONICAL_SR))
        mid.write_bytes(encode_midi(notes))
        entries.append(ManifestEntry(cid, str(wav), str(mid), label))
    write_manifest(out / "manifest.jsonl", entries)
    return entries

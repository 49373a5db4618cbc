"""Manifest handling, stratified splitting and per-clip input preparation."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..audio_io import load_canonical
from ..dsp_features import DspConfig, assemble_mixed_feature, stft_feature
from ..emotion_model import EmotionLabel, Quadrant
from ..errors import MdmError, ValidationError
from ..symbolic import QuantConfig, read_midi, tokenize, tokens_to_array
from .config import TrainingConfig

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    audio_path: str
    midi_path: str
    label: EmotionLabel
    split: str | None = None

    @property
    def quadrant(self) -> Quadrant:
        return self.label.quadrant

    def to_json(self) -> dict:
        d = {"clip_id": self.clip_id, "audio_path": self.audio_path, "midi_path": self.midi_path,
             "quadrant": self.label.name}
        if self.split:
            d["split"] = self.split
        return d


def load_manifest(path) -> list[ManifestEntry]:
    """Read a JSON-lines manifest; relative paths resolve against its directory."""
    base = Path(path).parent
    entries, seen = [], {}
    dupes = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                clip_id = str(row["clip_id"])
                label = EmotionLabel.parse(row["quadrant"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed entry ({exc})") from None
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            split = row.get("split")
            if split is not None and split not in SPLITS:
                raise ValidationError(f"{path}:{lineno}: unknown split tag {split!r}")
            if clip_id in seen:
                dupes.append(clip_id)
            seen[clip_id] = lineno
            entries.append(ManifestEntry(
                clip_id,
                str(base / row.get("audio_path", "")) if row.get("audio_path") else "",
                str(base / row.get("midi_path", "")) if row.get("midi_path") else "",
                label,
                split,
            ))
    if dupes:
        raise ValidationError(f"duplicate clip ids in {path}: {sorted(set(dupes))}")
    return entries


def write_manifest(path, entries, relative_to=None) -> None:
    base = Path(relative_to or Path(path).parent)
    with open(path, "w") as fh:
        for e in entries:
            d = e.to_json()
            for key in ("audio_path", "midi_path"):
                if d[key]:
                    d[key] = os.path.relpath(d[key], base)
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def split_dataset(entries, cfg: TrainingConfig = TrainingConfig()):
    """Stratified seeded split; tagged entries keep their tag.

    Within each quadrant the untagged entries are shuffled and cut so that
    val and test get ``floor(n * ratio)`` and train takes the remainder.
    """
    if not entries:
        raise ValidationError("cannot split an empty manifest")
    out = {s: [] for s in SPLITS}
    rng = np.random.default_rng(cfg.seed)
    total = sum(cfg.split_ratio)
    _, r_val, r_test = cfg.split_ratio
    for q in Quadrant:
        pool = []
        for e in entries:
            if e.quadrant != q:
                continue
            (out[e.split] if e.split else pool).append(e)
        if not pool:
            continue
        if len(pool) < 3:
            log.warning("quadrant %s has only %d untagged entries; all go to train", q.name, len(pool))
            out["train"].extend(pool)
            continue
        order = rng.permutation(len(pool))
        n_val = int(len(pool) * r_val / total + 1e-9)
        n_test = int(len(pool) * r_test / total + 1e-9)
        n_train = len(pool) - n_val - n_test
        shuffled = [pool[i] for i in order]
        out["train"].extend(shuffled[:n_train])
        out["val"].extend(shuffled[n_train : n_train + n_val])
        out["test"].extend(shuffled[n_train + n_val :])
    return out["train"], out["val"], out["test"]


class InputCache:
    """Raw (unnormalized) features and token arrays per clip.

    Kept in memory and, when ``directory`` is given, as ``.npy`` files keyed
    by clip id and a hash of the configuration that produced them.
    """

    def __init__(self, dsp: DspConfig, quant: QuantConfig, kind: str = "mixed", directory=None, config_hash: str = ""):
        self.dsp, self.quant, self.kind = dsp, quant, kind
        self.dir = Path(directory) if directory else None
        self.tag = config_hash
        self._mem: dict[tuple[str, str], np.ndarray] = {}
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def _cached(self, entry: ManifestEntry, what: str, compute):
        key = (entry.clip_id, what)
        if key in self._mem:
            return self._mem[key]
        path = self.dir / f"{entry.clip_id}.{what}.{self.tag}.npy" if self.dir else None
        if path is not None and path.exists():
            arr = np.load(path)
        else:
            arr = compute()
            if path is not None:
                np.save(path, arr)
        self._mem[key] = arr
        return arr

    def features(self, entry: ManifestEntry) -> np.ndarray:
        def compute():
            clip = load_canonical(entry.audio_path, self.dsp.sample_rate, entry.clip_id)
            fn = stft_feature if self.kind == "stft" else assemble_mixed_feature
            return fn(clip, self.dsp).rows
        return self._cached(entry, self.kind, compute)

    def tokens(self, entry: ManifestEntry) -> np.ndarray:
        def compute():
            seq = read_midi(entry.midi_path, entry.clip_id, self.quant.sustain_pedal)
            return tokens_to_array(tokenize(seq, self.quant))
        return self._cached(entry, "tokens", compute)

    def prepare(self, entries, need_audio: bool = True, need_midi: bool = True):
        """Load inputs for every entry; unreadable ones are skipped with a warning."""
        ok = []
        for e in entries:
            try:
                if need_audio:
                    self.features(e)
                if need_midi:
                    toks = self.tokens(e)
                    if len(toks) == 0:
                        raise ValidationError("MIDI file has no notes")
            except (OSError, MdmError) as exc:
                log.warning("skipping %s: %s", e.clip_id, exc)
                continue
            ok.append(e)
        return ok

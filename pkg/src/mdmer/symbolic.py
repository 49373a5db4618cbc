"""Standard MIDI File ingestion and the per-note symbolic representation.

Each note becomes a 5-attribute token
``(onset_bin, harmonic, velocity_bin, time_shift_bin, offset_bin)`` where
``harmonic`` is the number of notes sounding when the note starts.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, FormatError, ValidationError

log = logging.getLogger(__name__)

# keeps floor() stable for values that sit on a bin edge up to float error
_GRID_EPS = 1e-6


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset: float
    offset: float
    pitch: int
    velocity: int

    def __post_init__(self):
        if self.onset < 0 or not self.offset > self.onset:
            raise ValidationError(f"need 0 <= onset < offset, got {self.onset}, {self.offset}")
        if not 0 <= self.pitch <= 127:
            raise ValidationError(f"pitch {self.pitch} out of range")
        if not 1 <= self.velocity <= 127:
            raise ValidationError(f"velocity {self.velocity} out of range")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


class NoteSequence:
    """Immutable, sorted collection of notes."""

    def __init__(self, notes: Iterable[NoteEvent] = (), source_id: str = ""):
        # stable sort: equal (onset, pitch) keep their given order
        self._notes = tuple(sorted(notes, key=lambda n: (n.onset, n.pitch)))
        self.source_id = source_id

    @property
    def notes(self) -> tuple[NoteEvent, ...]:
        return self._notes

    def __len__(self):
        return len(self._notes)

    def __iter__(self):
        return iter(self._notes)

    def __getitem__(self, i):
        return self._notes[i]

    def __eq__(self, other):
        return isinstance(other, NoteSequence) and self._notes == other._notes

    def __repr__(self):
        return f"NoteSequence({len(self)} notes, source_id={self.source_id!r})"

    def onsets(self) -> np.ndarray:
        return np.array([n.onset for n in self._notes], dtype=np.float64)

    def offsets(self) -> np.ndarray:
        return np.array([n.offset for n in self._notes], dtype=np.float64)


@dataclass(frozen=True)
class QuantConfig:
    time_shift_bin: float = 0.01
    max_time_shift: float = 1.0
    max_time: float = 600.0
    velocity_bins: int = 32
    max_harmonic: int = 16
    sustain_pedal: bool = False

    def __post_init__(self):
        if self.time_shift_bin <= 0:
            raise ConfigError("time_shift_bin must be positive")
        for name in ("max_time_shift", "max_time"):
            ratio = getattr(self, name) / self.time_shift_bin
            if ratio < 1 or abs(ratio - round(ratio)) > 1e-6:
                raise ConfigError(f"{name} must be a positive multiple of time_shift_bin")
        if not 1 <= self.velocity_bins <= 128:
            raise ConfigError("velocity_bins must be in [1, 128]")
        if self.max_harmonic < 1:
            raise ConfigError("max_harmonic must be >= 1")

    @property
    def n_time_bins(self) -> int:
        """Vocabulary size of onset/offset bins."""
        return int(round(self.max_time / self.time_shift_bin)) + 1

    @property
    def n_shift_bins(self) -> int:
        return int(round(self.max_time_shift / self.time_shift_bin)) + 1

    @property
    def velocity_width(self) -> float:
        return 128.0 / self.velocity_bins

    def vocab_sizes(self) -> dict[str, int]:
        return {
            "onset": self.n_time_bins,
            "harmonic": self.max_harmonic + 1,
            "velocity": self.velocity_bins,
            "time_shift": self.n_shift_bins,
            "offset": self.n_time_bins,
        }


class SymbolicToken(NamedTuple):
    onset_bin: int
    harmonic: int
    velocity_bin: int
    time_shift_bin: int
    offset_bin: int


# ----------------------------------------------------------------------------
# SMF parsing


def _read_vlq(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= len(data):
            raise FormatError("truncated variable-length quantity")
        b = data[pos]
        pos += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, pos
    raise FormatError("variable-length quantity longer than 4 bytes")


def _track_events(chunk: bytes):
    """Yield ``(abs_tick, kind, payload)`` for one MTrk body.

    kind is ``"on"``, ``"off"``, ``"tempo"``, ``"cc"`` or ``"end"``.
    """
    pos, tick, status = 0, 0, None
    while pos < len(chunk):
        delta, pos = _read_vlq(chunk, pos)
        tick += delta
        if pos >= len(chunk):
            raise FormatError("truncated track event")
        b = chunk[pos]
        if b & 0x80:
            status = b
            pos += 1
        elif status is None or status >= 0xF0:
            raise FormatError("running status without a preceding channel event")
        if status == 0xFF:
            mtype = chunk[pos]
            length, pos = _read_vlq(chunk, pos + 1)
            body = chunk[pos : pos + length]
            pos += length
            status = None
            if mtype == 0x51 and length == 3:
                yield tick, "tempo", int.from_bytes(body, "big")
            elif mtype == 0x2F:
                yield tick, "end", None
                return
        elif status in (0xF0, 0xF7):
            length, pos = _read_vlq(chunk, pos)
            pos += length
            status = None
        else:
            kind, channel = status & 0xF0, status & 0x0F
            n_data = 1 if kind in (0xC0, 0xD0) else 2
            args = chunk[pos : pos + n_data]
            if len(args) < n_data:
                raise FormatError("truncated channel event")
            pos += n_data
            if kind == 0x90 and args[1] > 0:
                yield tick, "on", (channel, args[0], args[1])
            elif kind == 0x80 or kind == 0x90:
                yield tick, "off", (channel, args[0])
            elif kind == 0xB0:
                yield tick, "cc", (channel, args[0], args[1])
    yield tick, "end", None


class _TempoMap:
    def __init__(self, division: int, tempos: list[tuple[int, int]]):
        self.smpte = division & 0x8000
        if self.smpte:
            fps = 256 - (division >> 8)
            self.ticks_per_second = fps * (division & 0xFF)
            return
        if division == 0:
            raise FormatError("ticks per quarter note must be positive")
        self.tpq = division
        ticks, secs, uspq = [0], [0.0], [500000]
        for tick, tempo in sorted(tempos, key=lambda t: t[0]):
            if tick == ticks[-1]:
                uspq[-1] = tempo
                continue
            secs.append(secs[-1] + (tick - ticks[-1]) * uspq[-1] / 1e6 / self.tpq)
            ticks.append(tick)
            uspq.append(tempo)
        self.ticks = np.array(ticks)
        self.secs = np.array(secs)
        self.uspq = np.array(uspq, dtype=np.float64)

    def seconds(self, tick: int) -> float:
        if self.smpte:
            return tick / self.ticks_per_second
        i = int(np.searchsorted(self.ticks, tick, side="right")) - 1
        return float(self.secs[i] + (tick - self.ticks[i]) * self.uspq[i] / 1e6 / self.tpq)


def parse_midi(data: bytes, source_id: str = "", sustain_pedal: bool = False) -> NoteSequence:
    """Parse SMF format 0/1 bytes into a :class:`NoteSequence`.

    Tracks are merged and channels ignored. A note-on with velocity 0 ends
    the note. Notes left open at the end of their track are closed there.
    With ``sustain_pedal`` the offsets of notes released while CC64 is down
    are pushed to the pedal release.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise FormatError("missing MThd header chunk")
    hlen, fmt, ntrks, division = struct.unpack_from(">IHHH", data, 4)
    if hlen < 6:
        raise FormatError("header chunk too short")
    if fmt not in (0, 1):
        raise FormatError(f"unsupported SMF format {fmt}")
    pos = 8 + hlen
    tracks = []
    while pos + 8 <= len(data) and len(tracks) < ntrks:
        cid, size = struct.unpack_from(">4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        pos += 8 + size
        if cid != b"MTrk":
            continue
        if len(body) < size:
            raise FormatError("truncated track chunk")
        tracks.append(list(_track_events(body)))

    tempos = [(t, v) for events in tracks for t, kind, v in events if kind == "tempo"]
    tmap = _TempoMap(division, tempos)

    raw = []  # (on_tick, off_tick, pitch, velocity)
    for ti, events in enumerate(tracks):
        open_notes: dict[tuple[int, int], list[tuple[int, int]]] = {}
        pedal_down = {}
        held: dict[int, list[list]] = {}
        end_tick = events[-1][0] if events else 0
        for tick, kind, payload in events:
            if kind == "on":
                ch, pitch, vel = payload
                open_notes.setdefault((ch, pitch), []).append((tick, vel))
            elif kind == "off":
                ch, pitch = payload
                stack = open_notes.get((ch, pitch))
                if not stack:
                    log.warning("track %d tick %d: note-off for pitch %d without note-on; dropped", ti, tick, pitch)
                    continue
                on_tick, vel = stack.pop(0)
                note = [on_tick, tick, pitch, vel]
                raw.append(note)
                if sustain_pedal and pedal_down.get(ch):
                    held.setdefault(ch, []).append(note)
            elif kind == "cc" and sustain_pedal:
                ch, num, val = payload
                if num == 64:
                    down = val >= 64
                    if pedal_down.get(ch) and not down:
                        for note in held.pop(ch, []):
                            note[1] = max(note[1], tick)
                    pedal_down[ch] = down
        for ch, notes in held.items():
            for note in notes:
                note[1] = max(note[1], end_tick)
        for (ch, pitch), stack in open_notes.items():
            for on_tick, vel in stack:
                raw.append([on_tick, end_tick, pitch, vel])

    notes = []
    for on_tick, off_tick, pitch, vel in raw:
        onset, offset = tmap.seconds(on_tick), tmap.seconds(off_tick)
        if offset <= onset:
            log.debug("zero-length note at %.4fs pitch %d skipped", onset, pitch)
            continue
        notes.append(NoteEvent(onset, offset, pitch, vel))
    notes.sort(key=lambda n: (n.onset, n.pitch, n.offset, n.velocity))
    return NoteSequence(notes, source_id)


def read_midi(path, source_id: str | None = None, sustain_pedal: bool = False) -> NoteSequence:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_midi(data, str(path) if source_id is None else source_id, sustain_pedal)


def _vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def encode_midi(notes: Sequence[NoteEvent], ticks_per_quarter: int = 480, tempo: int = 500000) -> bytes:
    """Write notes as a single-track format-0 file at a constant tempo."""
    ticks_per_sec = ticks_per_quarter * 1e6 / tempo
    events = []
    for n in notes:
        on = int(round(n.onset * ticks_per_sec))
        off = max(on + 1, int(round(n.offset * ticks_per_sec)))
        # offs sort before ons at the same tick so repeated pitches re-strike cleanly
        events.append((off, 0, bytes([0x80, n.pitch, 0])))
        events.append((on, 1, bytes([0x90, n.pitch, n.velocity])))
    events.sort(key=lambda e: (e[0], e[1], e[2]))
    body = bytearray(b"\x00\xff\x51\x03" + tempo.to_bytes(3, "big"))
    last = 0
    for tick, _, msg in events:
        body += _vlq(tick - last) + msg
        last = tick
    body += b"\x00\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, ticks_per_quarter)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


# ----------------------------------------------------------------------------
# representation


def harmonic_counts(seq: NoteSequence) -> np.ndarray:
    """Number of notes sounding at each note's onset, the note itself included.

    Note j sounds at time t when ``onset_j <= t < offset_j``.
    """
    on, off = seq.onsets(), seq.offsets()
    if on.size == 0:
        return np.zeros(0, dtype=np.int64)
    started = np.searchsorted(np.sort(on), on, side="right")
    # offset_j <= t implies onset_j < t, so these notes are a subset of `started`
    ended = np.searchsorted(np.sort(off), on, side="right")
    return (started - ended).astype(np.int64)


def _time_bin(t: np.ndarray, q: QuantConfig) -> np.ndarray:
    b = np.floor(np.asarray(t) / q.time_shift_bin + _GRID_EPS).astype(np.int64)
    return np.clip(b, 0, q.n_time_bins - 1)


def quantize(seq: NoteSequence, q: QuantConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Onset bins, offset bins (at least one bin after onset) and velocity bins."""
    on = _time_bin(seq.onsets(), q)
    off = np.maximum(_time_bin(seq.offsets(), q), on + 1)
    vel = np.array([n.velocity for n in seq], dtype=np.float64)
    vb = np.minimum(np.floor(vel / q.velocity_width).astype(np.int64), q.velocity_bins - 1)
    return on, off, vb


def _bin_harmonic(on: np.ndarray, off: np.ndarray) -> np.ndarray:
    started = np.searchsorted(np.sort(on), on, side="right")
    ended = np.searchsorted(np.sort(off), on, side="right")
    return started - ended


def tokenize(seq: NoteSequence, q: QuantConfig = QuantConfig()) -> list[SymbolicToken]:
    """One token per note, in sequence order.

    Harmonic counts and time shifts are derived from the quantized grid so
    that re-tokenizing a detokenized sequence reproduces the tokens.
    """
    if len(seq) == 0:
        return []
    on, off, vb = quantize(seq, q)
    harm = _bin_harmonic(on, off)
    shift = np.minimum(np.diff(on, prepend=on[0]), q.n_shift_bins - 1)
    return [
        SymbolicToken(int(a), int(h), int(v), int(s), int(b))
        for a, h, v, s, b in zip(on, harm, vb, shift, off)
    ]


def detokenize(tokens: Sequence[SymbolicToken], q: QuantConfig = QuantConfig(), pitch: int = 60) -> NoteSequence:
    """Rebuild notes at bin centres. Pitch is not represented, so every note gets ``pitch``."""
    w = q.time_shift_bin
    notes = []
    for i, tok in enumerate(tokens):
        tok = SymbolicToken(*tok)
        if tok.offset_bin <= tok.onset_bin:
            raise ValidationError(f"token {i}: offset_bin {tok.offset_bin} <= onset_bin {tok.onset_bin}")
        if not 0 <= tok.velocity_bin < q.velocity_bins:
            raise ValidationError(f"token {i}: velocity_bin {tok.velocity_bin} out of range")
        vel = int(min(127, max(1, np.floor((tok.velocity_bin + 0.5) * q.velocity_width))))
        notes.append(NoteEvent((tok.onset_bin + 0.5) * w, (tok.offset_bin + 0.5) * w, pitch, vel))
    return NoteSequence(notes)


def tokens_to_array(tokens: Sequence[SymbolicToken]) -> np.ndarray:
    return np.array(tokens, dtype=np.int64).reshape(-1, 5)


def token_document(source_id: str, tokens: Sequence[SymbolicToken], q: QuantConfig) -> dict:
    return {
        "source_id": source_id,
        "quant_config": asdict(q),
        "tokens": [list(map(int, t)) for t in tokens],
    }

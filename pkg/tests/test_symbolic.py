import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdmer.errors import ConfigError, FormatError, ValidationError
from mdmer.symbolic import (
    NoteEvent,
    NoteSequence,
    QuantConfig,
    SymbolicToken,
    detokenize,
    encode_midi,
    harmonic_counts,
    parse_midi,
    token_document,
    tokenize,
)

from conftest import END, smf, tempo

Q = QuantConfig()


def brute_harmonic(notes):
    return [sum(1 for b in notes if b.onset <= a.onset < b.offset) for a in notes]


def random_sequence(rng, n, span=20.0):
    notes = []
    for _ in range(n):
        on = float(rng.uniform(0, span))
        notes.append(NoteEvent(on, on + float(rng.uniform(0.005, 3.0)), int(rng.integers(21, 109)), int(rng.integers(1, 128))))
    return NoteSequence(notes)


# -- parsing -------------------------------------------------------------------


def test_parse_single_note_hand_case():
    data = smf([[(0, tempo(500000)), (0, b"\x90\x3c\x50"), (480, b"\x80\x3c\x40"), (0, END)]])
    seq = parse_midi(data)
    assert seq.notes == (NoteEvent(0.0, 0.5, 60, 80),)


def test_parse_empty_track():
    assert len(parse_midi(smf([[(0, END)]]))) == 0


def test_velocity_zero_closes_note():
    data = smf([[(0, b"\x90\x40\x64"), (240, b"\x90\x40\x00"), (0, END)]])
    (note,) = parse_midi(data).notes
    assert note.offset == pytest.approx(0.25)  # default 120 bpm


def test_running_status_and_tempo_change_across_tracks():
    # track 0: tempo 500000 then 1000000 us/quarter at tick 480
    conductor = [(0, tempo(500000)), (480, tempo(1000000)), (0, END)]
    # track 1 with running status: on@0, on@480 (second pitch), offs@960
    notes = [(0, b"\x90\x3c\x50"), (480, b"\x3e\x46"), (480, b"\x3c\x00"), (0, b"\x3e\x00"), (0, END)]
    seq = parse_midi(smf([conductor, notes]))
    # tick 480 -> 0.5 s; tick 960 -> 0.5 + 480 * 1.0 / 480 = 1.5 s
    assert seq.notes == (NoteEvent(0.0, 1.5, 60, 80), NoteEvent(0.5, 1.5, 62, 70))


def test_unterminated_note_closed_at_end_of_track():
    data = smf([[(0, b"\x90\x3c\x50"), (960, END)]])
    (note,) = parse_midi(data).notes
    assert note.offset == pytest.approx(1.0)


def test_orphan_note_off_is_dropped(caplog):
    data = smf([[(0, b"\x80\x3c\x40"), (10, b"\x90\x3d\x40"), (10, b"\x80\x3d\x40"), (0, END)]])
    with caplog.at_level(logging.WARNING):
        seq = parse_midi(data)
    assert len(seq) == 1 and seq[0].pitch == 61
    assert "without note-on" in caplog.text


def test_sysex_and_meta_are_skipped():
    data = smf([[(0, b"\xf0\x03\x7e\x00\xf7"), (0, b"\xff\x03\x04name"), (0, b"\x90\x3c\x50"), (480, b"\x80\x3c\x00"), (0, END)]])
    assert len(parse_midi(data)) == 1


def test_sustain_pedal_flag():
    track = [(0, b"\xb0\x40\x7f"), (0, b"\x90\x3c\x50"), (240, b"\x80\x3c\x00"), (240, b"\xb0\x40\x00"), (0, END)]
    data = smf([track])
    assert parse_midi(data)[0].offset == pytest.approx(0.25)
    assert parse_midi(data, sustain_pedal=True)[0].offset == pytest.approx(0.5)


@pytest.mark.parametrize("data", [b"", b"MThx" + b"\x00" * 10, smf([[(0, END)]], fmt=2)])
def test_bad_header(data):
    with pytest.raises(FormatError):
        parse_midi(data)


def test_encode_parse_roundtrip(rng):
    seq = random_sequence(rng, 40)
    back = parse_midi(encode_midi(seq.notes))
    assert len(back) == len(seq)
    for a, b in zip(sorted(seq, key=lambda n: (n.onset, n.pitch)), back):
        assert a.pitch == b.pitch and a.velocity == b.velocity
        assert abs(a.onset - b.onset) <= 1 / 960 and abs(a.offset - b.offset) <= 1 / 960


def test_note_invariants():
    with pytest.raises(ValidationError):
        NoteEvent(1.0, 1.0, 60, 64)
    with pytest.raises(ValidationError):
        NoteEvent(0.0, 1.0, 128, 64)
    with pytest.raises(ValidationError):
        NoteEvent(0.0, 1.0, 60, 0)


def test_sequence_sorted_by_onset_then_pitch():
    seq = NoteSequence([NoteEvent(1, 2, 64, 1), NoteEvent(0, 1, 70, 1), NoteEvent(1, 2, 60, 1)])
    assert [(n.onset, n.pitch) for n in seq] == [(0, 70), (1, 60), (1, 64)]


# -- harmonic ------------------------------------------------------------------


def test_harmonic_examples():
    assert harmonic_counts(NoteSequence([NoteEvent(0, 1, 60, 64)])).tolist() == [1]
    chord = NoteSequence([NoteEvent(0, 1, p, 64) for p in (60, 64, 67)])
    assert harmonic_counts(chord).tolist() == brute_harmonic(chord.notes) == [3, 3, 3]
    overlap = NoteSequence([NoteEvent(0, 1.0, 60, 64), NoteEvent(0.5, 2.0, 62, 64)])
    assert harmonic_counts(overlap).tolist() == brute_harmonic(overlap.notes) == [1, 2]
    touching = NoteSequence([NoteEvent(0, 1.0, 60, 64), NoteEvent(1.0, 2.0, 62, 64)])
    assert harmonic_counts(touching).tolist() == [1, 1]


def test_harmonic_matches_bruteforce_on_random_sequences(rng):
    for _ in range(100):
        seq = random_sequence(rng, 200)
        assert harmonic_counts(seq).tolist() == brute_harmonic(seq.notes)


# -- tokenization --------------------------------------------------------------


def test_tokenize_examples():
    assert tokenize(NoteSequence([]), Q) == []
    (tok,) = tokenize(NoteSequence([NoteEvent(0.0, 0.5, 60, 64)]), Q)
    assert tok == SymbolicToken(onset_bin=0, harmonic=1, velocity_bin=16, time_shift_bin=0, offset_bin=50)
    two = tokenize(NoteSequence([NoteEvent(0.3, 0.5, 60, 64), NoteEvent(0.3, 0.7, 67, 90)]), Q)
    assert two[1].time_shift_bin == 0


def test_time_shift_is_clipped():
    toks = tokenize(NoteSequence([NoteEvent(0.0, 0.1, 60, 64), NoteEvent(5.0, 5.1, 60, 64)]), Q)
    assert toks[1].time_shift_bin == 100


def test_token_count_preserved(rng):
    for n in (1, 7, 150):
        assert len(tokenize(random_sequence(rng, n), Q)) == n


def test_quantization_fixpoint(rng):
    for _ in range(100):
        toks = tokenize(random_sequence(rng, int(rng.integers(1, 60))), Q)
        assert tokenize(detokenize(toks, Q), Q) == toks


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(0, 30), st.floats(0.001, 4), st.integers(0, 127), st.integers(1, 127)),
        min_size=1,
        max_size=40,
    )
)
def test_fixpoint_property(raw):
    seq = NoteSequence([NoteEvent(on, on + d, p, v) for on, d, p, v in raw])
    toks = tokenize(seq, Q)
    assert tokenize(detokenize(toks, Q), Q) == toks


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 3000), st.integers(1, 300), st.integers(1, 127)), min_size=1, max_size=30),
    st.integers(0, 500),
)
def test_time_translation_equivariance(raw, k):
    w = Q.time_shift_bin
    seq = NoteSequence([NoteEvent(a * w + 0.003, (a + d) * w + 0.004, 60, v) for a, d, v in raw])
    moved = NoteSequence([NoteEvent(n.onset + k * w, n.offset + k * w, n.pitch, n.velocity) for n in seq])
    t0, t1 = tokenize(seq, Q), tokenize(moved, Q)
    for a, b in zip(t0, t1):
        assert b.onset_bin == a.onset_bin + k and b.offset_bin == a.offset_bin + k
        assert (b.time_shift_bin, b.harmonic, b.velocity_bin) == (a.time_shift_bin, a.harmonic, a.velocity_bin)


def test_roundtrip_error_bounds(rng):
    w = Q.time_shift_bin
    for _ in range(20):
        seq = random_sequence(rng, 50)
        back = detokenize(tokenize(seq, Q), Q)
        for a, b in zip(seq, back):
            assert abs(a.onset - b.onset) <= w / 2 + 1e-9
            assert abs(a.velocity - b.velocity) <= Q.velocity_width / 2
            if a.duration >= w:
                assert abs(a.offset - b.offset) <= w / 2 + 1e-9


def test_detokenize_examples():
    assert len(detokenize([], Q)) == 0
    (note,) = detokenize([SymbolicToken(0, 1, 16, 0, 50)], Q)
    assert abs(note.onset - 0.0) <= 0.01 and abs(note.offset - 0.5) <= 0.01
    assert abs(note.velocity - 64) <= 4
    with pytest.raises(ValidationError):
        detokenize([SymbolicToken(5, 1, 3, 0, 5)], Q)


def test_quant_config_validation():
    with pytest.raises(ConfigError):
        QuantConfig(time_shift_bin=0)
    with pytest.raises(ConfigError):
        QuantConfig(max_time_shift=1.005)
    assert Q.vocab_sizes() == {"onset": 60001, "harmonic": 17, "velocity": 32, "time_shift": 101, "offset": 60001}


def test_token_document():
    doc = token_document("clip", [SymbolicToken(0, 1, 16, 0, 50)], Q)
    assert doc["tokens"] == [[0, 1, 16, 0, 50]]
    assert doc["source_id"] == "clip" and doc["quant_config"]["velocity_bins"] == 32

import json
import logging

import numpy as np
import pytest

from mdmer.audio_io import read_wav
from mdmer.dsp_features import DspConfig, rmse
from mdmer.emotion_model import EmotionLabel, Prediction, Quadrant, total_loss
from mdmer.errors import ConfigError, ValidationError
from mdmer.nn_core import no_grad
from mdmer.pipeline import (
    ExperimentConfig,
    ManifestEntry,
    Session,
    TrainingConfig,
    evaluate_checkpoint,
    generate_synthetic,
    load_manifest,
    score,
    split_dataset,
    train,
    write_manifest,
)
from mdmer.pipeline.cli import main as cli_main
from mdmer.symbolic import read_midi

TINY = {
    "dsp": {"n_mels": 16, "n_mfcc": 8, "target_frames": 16, "n_fft": 512, "hop": 256},
    "quant": {"max_time": 3.0},
    "model": {"d_model": 16, "heads": 2, "cda_heads": 2, "ffn": 32, "attr_dim": 4},
    "training": {"epochs": 3, "batch_size": 8, "learning_rate": 0.001, "seed": 0},
}


def tiny(**training):
    d = json.loads(json.dumps(TINY))
    d["training"].update(training)
    return ExperimentConfig.from_dict(d)


def entry(i, q, split=None):
    return ManifestEntry(f"c{i}", "", "", EmotionLabel(Quadrant(q)), split)


@pytest.fixture(scope="module")
def synth16(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth16")
    generate_synthetic(16, 3, out)
    return out


# -- manifest ------------------------------------------------------------------


def test_manifest_empty_and_order(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("")
    assert load_manifest(p) == []
    rows = [{"clip_id": f"x{i}", "audio_path": f"a/{i}.wav", "midi_path": f"m/{i}.mid", "quadrant": f"Q{i % 4 + 1}"} for i in range(10)]
    p.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    got = load_manifest(p)
    assert [e.clip_id for e in got] == [f"x{i}" for i in range(10)]
    assert got[3].audio_path == str(tmp_path / "a/3.wav") and got[3].quadrant == Quadrant.Q4
    write_manifest(tmp_path / "copy.jsonl", got)
    assert load_manifest(tmp_path / "copy.jsonl") == got


def test_manifest_errors_name_the_line(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"clip_id": "a", "quadrant": "Q1"}\n{"clip_id": "b", "quadrant": "Q5"}\n')
    with pytest.raises(ValidationError, match=":2:"):
        load_manifest(p)
    p.write_text('{"clip_id": "a", "quadrant": "Q1"}\n{"clip_id": "a", "quadrant": "Q2"}\n')
    with pytest.raises(ValidationError, match="duplicate"):
        load_manifest(p)


# -- splits --------------------------------------------------------------------


def test_split_exact_ratio():
    entries = [entry(i, i % 4) for i in range(40)]
    tr, va, te = split_dataset(entries, TrainingConfig(seed=5))
    for q in Quadrant:
        assert [sum(e.quadrant == q for e in s) for s in (tr, va, te)] == [7, 2, 1]


def test_split_deterministic_disjoint_exhaustive(rng):
    entries = [entry(i, int(rng.integers(4))) for i in range(100)]
    a = split_dataset(entries, TrainingConfig(seed=1))
    b = split_dataset(entries, TrainingConfig(seed=1))
    assert a == b
    ids = [[e.clip_id for e in s] for s in a]
    flat = sum(ids, [])
    assert len(flat) == len(set(flat)) == 100
    assert set(flat) == {e.clip_id for e in entries}
    assert split_dataset(entries, TrainingConfig(seed=2)) != a


def test_split_tags_and_small_quadrants(caplog):
    entries = [entry(i, 0) for i in range(10)] + [entry(10, 1, "test"), entry(11, 2), entry(12, 2)]
    with caplog.at_level(logging.WARNING):
        tr, va, te = split_dataset(entries)
    assert entry(10, 1, "test") in te
    assert entry(11, 2) in tr and entry(12, 2) in tr
    assert "Q3" in caplog.text
    with pytest.raises(ValidationError):
        split_dataset([])


# -- scoring -------------------------------------------------------------------


def pred(q):
    lab = EmotionLabel(Quadrant(q))
    return Prediction(lab.quadrant, lab.valence, lab.arousal, None, None, (0.25,) * 4)


def test_score_examples():
    labels = [EmotionLabel(Quadrant(i % 4)) for i in range(12)]
    oracle = score(labels, [pred(l.quadrant) for l in labels])
    assert (oracle.accuracy_4q, oracle.accuracy_arousal, oracle.accuracy_valence) == (1.0, 1.0, 1.0)
    const = score(labels, [pred(0)] * 12)
    assert (const.accuracy_4q, const.accuracy_arousal, const.accuracy_valence) == (0.25, 0.5, 0.5)
    assert sum(map(sum, const.confusion)) == 12 and const.per_class_counts == [3, 3, 3, 3]
    assert const.aux_accuracy_arousal is None
    with pytest.raises(ValidationError):
        score([], [])


# -- synthetic data ------------------------------------------------------------


def test_synthetic_roundtrip(synth16):
    entries = load_manifest(synth16 / "manifest.jsonl")
    assert [sum(e.quadrant == q for e in entries) for q in Quadrant] == [4, 4, 4, 4]
    for e in entries:
        clip = read_wav(e.audio_path)
        assert clip.samples.size > 0 and np.all(np.abs(clip.samples) <= 1.0)
        assert len(read_midi(e.midi_path)) > 0


def test_synthetic_arousal_energy(synth16):
    entries = load_manifest(synth16 / "manifest.jsonl")

    def mean_rmse(q):
        return np.mean([rmse(read_wav(e.audio_path), DspConfig()).mean() for e in entries if e.quadrant == q])

    assert mean_rmse(Quadrant.Q2) > mean_rmse(Quadrant.Q3)
    assert mean_rmse(Quadrant.Q1) > mean_rmse(Quadrant.Q4)


def test_synthetic_bit_identical(tmp_path):
    generate_synthetic(8, 9, tmp_path / "a")
    generate_synthetic(8, 9, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 17
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# -- config --------------------------------------------------------------------


def test_config_rejects_unknown_keys():
    for bad in ({"dsp": {"n_mel": 4}}, {"training": {"epoch": 1}}, {"model": {"width": 3}}, {"extra": {}}):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)
    with pytest.raises(ConfigError):
        tiny(mode="no-symbolic")


def test_modes_map_to_model_and_weights():
    assert tiny(mode="acoustic-only").model_config().branches == "acoustic"
    assert tiny(mode="symbolic-only").model_config().branches == "symbolic"
    w = tiny(mode="single-loss").training.effective_weights
    assert (w.arousal, w.valence) == (0.0, 0.0)
    assert tiny(mode="stft-input").training.feature_kind == "stft"
    assert tiny().hash() == tiny().hash() != tiny(seed=1).hash()


# -- training ------------------------------------------------------------------


def test_empty_train_set_is_fatal(tmp_path):
    with pytest.raises(ValidationError):
        train([], tiny(), tmp_path)


def _batch_loss(sess, entries):
    with no_grad():
        return sum(float(total_loss(sess.model(*sess.inputs(e)), e.label)[0].data) for e in entries)


def test_loss_decreases_after_50_steps(synth16, tmp_path):
    entries = load_manifest(synth16 / "manifest.jsonl")
    cfg = tiny(epochs=50, batch_size=16, patience=0)
    before = Session(cfg)
    before.fit_stats(entries)
    initial = _batch_loss(before, entries)
    res = train(entries, cfg, tmp_path)
    assert res.history[-1]["step"] == 50
    after = Session.load(res.checkpoint)
    assert _batch_loss(after, entries) < initial


def test_training_log_components_and_determinism(synth16, tmp_path):
    entries = load_manifest(synth16 / "manifest.jsonl")
    a = train(entries, tiny(), tmp_path / "a")
    b = train(entries, tiny(), tmp_path / "b")
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    assert a.log.read_bytes() == b.log.read_bytes()
    for rec in map(json.loads, a.log.read_text().splitlines()):
        parts = rec["loss_quadrant"] + rec["loss_arousal"] + rec["loss_valence"]
        assert abs(parts - rec["loss_total"]) <= 1e-6
    r1 = evaluate_checkpoint(a.checkpoint, entries, split=None)
    r2 = evaluate_checkpoint(a.checkpoint, entries, split=None)
    assert r1 == r2 and r1.n == 16


@pytest.mark.parametrize("mode", ["symbolic-only", "acoustic-only", "stft-input", "single-loss"])
def test_ablation_modes_run(synth16, tmp_path, mode):
    entries = load_manifest(synth16 / "manifest.jsonl")
    res = train(entries, tiny(mode=mode, epochs=1), tmp_path)
    rec = res.history[0]
    if mode == "single-loss":
        assert rec["loss_arousal"] == rec["loss_valence"] == 0.0
    if mode == "acoustic-only":
        assert rec["loss_valence"] == 0.0
    if mode == "symbolic-only":
        assert rec["loss_arousal"] == 0.0
    assert evaluate_checkpoint(res.checkpoint, entries, split=None).n == 16


def test_cache_directory_reuse(synth16, tmp_path):
    entries = load_manifest(synth16 / "manifest.jsonl")
    cfg = tiny(epochs=1)
    a = train(entries, cfg, tmp_path / "a", cache_dir=tmp_path / "cache")
    assert any((tmp_path / "cache").iterdir())
    b = train(entries, cfg, tmp_path / "b", cache_dir=tmp_path / "cache")
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()


# -- command line --------------------------------------------------------------


def test_cli_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    data = tmp_path / "data"
    assert cli_main(["synth", "--n", "8", "--seed", "2", "--out", str(data)]) == 0
    manifest = str(data / "manifest.jsonl")
    assert cli_main(["features", "--manifest", manifest, "--config", str(cfg), "--out", str(tmp_path / "f")]) == 0
    assert len(list((tmp_path / "f").glob("*.mdmfeat"))) == 8
    assert cli_main(["tokenize", "--manifest", manifest, "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
    doc = json.loads(next((tmp_path / "t").glob("*.tokens.json")).read_text())
    assert len(doc["tokens"][0]) == 5
    capsys.readouterr()
    assert cli_main(["train", "--manifest", manifest, "--config", str(cfg), "--out", str(tmp_path / "run"), "--seed", "1"]) == 0
    ckpt = json.loads(capsys.readouterr().out)["checkpoint"]
    assert cli_main(["eval", "--checkpoint", ckpt, "--manifest", manifest, "--split", "all"]) == 0
    assert json.loads(capsys.readouterr().out)["n"] == 8
    e = load_manifest(manifest)[0]
    assert cli_main(["predict", "--checkpoint", ckpt, "--audio", e.audio_path, "--midi", e.midi_path]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["quadrant"] in ("Q1", "Q2", "Q3", "Q4") and len(out["q_probabilities"]) == 4
    assert cli_main(["eval", "--checkpoint", str(tmp_path / "missing.mdm"), "--manifest", manifest]) == 2


def test_cli_reports_errors(tmp_path, capsys):
    bad = tmp_path / "m.jsonl"
    bad.write_text('{"clip_id": "a", "quadrant": "Q9"}\n')
    assert cli_main(["train", "--manifest", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "Q9" in capsys.readouterr().err

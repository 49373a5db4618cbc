"""Command-line entry point: ``mdmer <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..audio_io import load_canonical
from ..dsp_features import assemble_mixed_feature, stft_feature, write_feature_dump
from ..emotion_model import predict
from ..errors import MdmError
from ..nn_core import no_grad
from ..symbolic import read_midi, token_document, tokenize, tokens_to_array
from .config import MODES, ExperimentConfig
from .data import load_manifest
from .synthetic import generate_synthetic
from .training import Session, evaluate_checkpoint, train

log = logging.getLogger("mdmer")


def _cmd_features(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fn = stft_feature if cfg.training.feature_kind == "stft" else assemble_mixed_feature
    for e in load_manifest(args.manifest):
        try:
            clip = load_canonical(e.audio_path, cfg.dsp.sample_rate, e.clip_id)
        except (OSError, MdmError) as exc:
            log.warning("skipping %s: %s", e.clip_id, exc)
            continue
        feat = fn(clip, cfg.dsp)
        write_feature_dump(out / f"{e.clip_id}.mdmfeat", feat, cfg.dsp, {"clip_id": e.clip_id})
    return 0


def _cmd_tokenize(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for e in load_manifest(args.manifest):
        try:
            seq = read_midi(e.midi_path, e.clip_id, cfg.quant.sustain_pedal)
        except (OSError, MdmError) as exc:
            log.warning("skipping %s: %s", e.clip_id, exc)
            continue
        doc = token_document(e.clip_id, tokenize(seq, cfg.quant), cfg.quant)
        (out / f"{e.clip_id}.tokens.json").write_text(json.dumps(doc))
    return 0


def _cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config).with_overrides(args.mode, args.seed)
    res = train(load_manifest(args.manifest), cfg, args.out, cache_dir=args.cache)
    print(json.dumps({"checkpoint": str(res.checkpoint), "log": str(res.log),
                      "best_epoch": res.best_epoch, "best_val_acc_4q": res.best_val_acc}))
    return 0


def _cmd_eval(args) -> int:
    split = None if args.split == "all" else args.split
    rep = evaluate_checkpoint(args.checkpoint, load_manifest(args.manifest), split, cache_dir=args.cache)
    print(json.dumps(rep.to_dict(), indent=2))
    return 0


def _cmd_predict(args) -> int:
    sess = Session.load(args.checkpoint)
    feat = toks = None
    if sess.needs_audio:
        if not args.audio:
            raise MdmError("this checkpoint needs --audio")
        clip = load_canonical(args.audio, sess.cfg.dsp.sample_rate)
        fn = stft_feature if sess.cfg.training.feature_kind == "stft" else assemble_mixed_feature
        feat = fn(clip, sess.cfg.dsp, sess.stats).rows
    if sess.needs_midi:
        if not args.midi:
            raise MdmError("this checkpoint needs --midi")
        toks = tokens_to_array(tokenize(read_midi(args.midi), sess.cfg.quant))
    with no_grad():
        p = predict(sess.model(feat, toks))
    print(json.dumps({"quadrant": p.quadrant.name, "valence": p.valence, "arousal": p.arousal,
                      "q_probabilities": list(p.q_probabilities)}))
    return 0


def _cmd_synth(args) -> int:
    entries = generate_synthetic(args.n, args.seed, args.out)
    print(json.dumps({"manifest": str(Path(args.out) / "manifest.jsonl"), "clips": len(entries)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdmer", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("features", help="write one MDMFEAT1 feature dump per clip")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_features)

    s = sub.add_parser("tokenize", help="write one token JSON document per clip")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_tokenize)

    s = sub.add_parser("train", help="train a model and write checkpoint + log")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=MODES)
    s.add_argument("--seed", type=int)
    s.add_argument("--cache", help="directory for cached features/tokens")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint on a manifest split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    s.add_argument("--cache")
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("predict", help="classify one clip")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--audio")
    s.add_argument("--midi")
    s.set_defaults(func=_cmd_predict)

    s = sub.add_parser("synth", help="generate the synthetic dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MdmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

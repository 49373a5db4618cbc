"""Mini-batch training with Adam, best-on-validation checkpointing, JSON-lines log."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..dsp_features import NormStats
from ..emotion_model import EmotionModel, read_checkpoint, save_checkpoint, total_loss
from ..errors import ConfigError, ValidationError
from ..nn_core import AdamState, adam_step
from .config import ExperimentConfig
from .data import InputCache, ManifestEntry, split_dataset
from .evaluation import EvalReport, predict_all, score

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.mdm"
LOG_NAME = "train_log.jsonl"
NORM_MEAN, NORM_STD = "buffer.norm_mean", "buffer.norm_std"


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    best_epoch: int
    best_val_acc: float
    history: list[dict]


class Session:
    """A model plus everything needed to turn manifest entries into its inputs."""

    def __init__(self, cfg: ExperimentConfig, cache_dir=None, model: EmotionModel | None = None):
        self.cfg = cfg
        tr = cfg.training
        self.model = model or EmotionModel(cfg.model_config(), seed=tr.seed)
        self.cache = InputCache(cfg.dsp, cfg.quant, tr.feature_kind, cache_dir, cfg.hash("dsp", "quant"))
        self.stats: NormStats | None = None

    @property
    def needs_audio(self) -> bool:
        return self.model.cfg.uses_acoustic

    @property
    def needs_midi(self) -> bool:
        return self.model.cfg.uses_symbolic

    def inputs(self, entry: ManifestEntry):
        feat = toks = None
        if self.needs_audio:
            raw = self.cache.features(entry)
            feat = raw if self.stats is None else self.stats.apply(raw)
        if self.needs_midi:
            toks = self.cache.tokens(entry)
        return feat, toks

    def fit_stats(self, entries) -> None:
        if self.needs_audio:
            self.stats = NormStats.fit([self.cache.features(e) for e in entries])

    def evaluate(self, entries) -> EvalReport:
        entries = self.cache.prepare(entries, self.needs_audio, self.needs_midi)
        preds = predict_all(self.model, (self.inputs(e) for e in entries))
        return score([e.label for e in entries], preds)

    def state(self) -> dict[str, np.ndarray]:
        st = self.model.state_dict()
        if self.stats is not None:
            st[NORM_MEAN] = self.stats.mean
            st[NORM_STD] = self.stats.std
        return st

    def save(self, path, state=None) -> None:
        save_checkpoint(path, self.state() if state is None else state, self.cfg.to_dict())

    @classmethod
    def load(cls, path, cache_dir=None) -> "Session":
        state, config = read_checkpoint(path)
        cfg = ExperimentConfig.from_dict(config)
        sess = cls(cfg, cache_dir)
        mean, std = state.pop(NORM_MEAN, None), state.pop(NORM_STD, None)
        if mean is not None:
            sess.stats = NormStats(mean.astype(np.float64), std.astype(np.float64))
        elif sess.needs_audio:
            raise ConfigError(f"{path}: acoustic model checkpoint lacks normalization statistics")
        sess.model.load_state_dict(state)
        return sess


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, 7919, epoch])


def train(entries, cfg: ExperimentConfig, out_dir, cache_dir=None) -> TrainResult:
    """Train on the manifest's train split; keep the best-validation checkpoint."""
    tr = cfg.training
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sess = Session(cfg, cache_dir)
    model = sess.model
    train_set, val_set, _ = split_dataset(list(entries), tr) if entries else ([], [], [])
    train_set = sess.cache.prepare(train_set, sess.needs_audio, sess.needs_midi)
    if not train_set:
        raise ValidationError("no usable training entries")
    val_set = sess.cache.prepare(val_set, sess.needs_audio, sess.needs_midi)
    sess.fit_stats(train_set)
    weights = tr.effective_weights
    opt = AdamState(lr=tr.learning_rate)
    log.info("training %s: %d train / %d val clips, %d parameters",
             tr.mode, len(train_set), len(val_set), model.n_parameters())

    history = []
    best_acc, best_epoch, best_state = -1.0, 0, sess.state()
    stale = 0
    log_path = out / LOG_NAME
    with open(log_path, "w") as fh:
        for epoch in range(1, tr.epochs + 1):
            order = _epoch_rng(tr.seed, epoch).permutation(len(train_set))
            sums = {"total": 0.0, "quadrant": 0.0, "arousal": 0.0, "valence": 0.0}
            for start in range(0, len(order), tr.batch_size):
                batch = [train_set[i] for i in order[start : start + tr.batch_size]]
                model.zero_grad()
                batch_loss = None
                for j, entry in enumerate(batch):
                    feat, toks = sess.inputs(entry)
                    out_j = model(feat, toks, dropout_key=(tr.seed, opt.step, j))
                    loss, comps = total_loss(out_j, entry.label, weights)
                    batch_loss = loss if batch_loss is None else batch_loss + loss
                    sums["total"] += float(loss.data)
                    for k, v in comps.items():
                        sums[k] += v
                (batch_loss * (1.0 / len(batch))).backward()
                grads = {k: t.grad for k, t in model.params.items() if t.grad is not None}
                adam_step(model.params, grads, opt)
            n = len(train_set)
            record = {"epoch": epoch, "step": opt.step}
            record.update({f"loss_{k}": v / n for k, v in sums.items()})
            if val_set:
                rep = sess.evaluate(val_set)
                record.update(val_acc_4q=rep.accuracy_4q, val_acc_arousal=rep.accuracy_arousal,
                              val_acc_valence=rep.accuracy_valence)
                acc = rep.accuracy_4q
            else:
                acc = -record["loss_total"]
            if acc > best_acc:
                best_acc, best_epoch, best_state = acc, epoch, sess.state()
                stale = 0
            else:
                stale += 1
            record["best_epoch"] = best_epoch
            history.append(record)
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            log.info("epoch %d loss %.4f val 4Q %s", epoch, record["loss_total"], record.get("val_acc_4q"))
            if tr.patience and stale >= tr.patience:
                log.info("early stop after %d epochs without improvement", stale)
                break
    ckpt = out / CHECKPOINT_NAME
    sess.save(ckpt, best_state)
    return TrainResult(ckpt, log_path, best_epoch, best_acc, history)


def evaluate_checkpoint(path, entries, split: str | None = "test", cache_dir=None) -> EvalReport:
    """Score a checkpoint on one split of ``entries`` (or all of them when ``split`` is None)."""
    sess = Session.load(path, cache_dir)
    if split is not None:
        parts = dict(zip(("train", "val", "test"), split_dataset(list(entries), sess.cfg.training)))
        entries = parts[split]
    if not entries:
        raise ValidationError(f"split {split!r} is empty")
    return sess.evaluate(entries)

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..emotion_model import EmotionLabel, EmotionModel, Prediction, predict
from ..errors import ValidationError
from ..nn_core import no_grad


@dataclass
class EvalReport:
    n: int
    accuracy_4q: float
    accuracy_arousal: float
    accuracy_valence: float
    aux_accuracy_arousal: float | None
    aux_accuracy_valence: float | None
    confusion: list[list[int]]  # rows: true quadrant, columns: predicted
    per_class_counts: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def score(labels: Sequence[EmotionLabel], preds: Sequence[Prediction]) -> EvalReport:
    if not labels:
        raise ValidationError("cannot evaluate an empty subset")
    if len(labels) != len(preds):
        raise ValidationError("labels and predictions differ in length")
    conf = np.zeros((4, 4), dtype=np.int64)
    hit_q = hit_a = hit_v = 0
    aux_a, aux_v = [], []
    for lab, p in zip(labels, preds):
        conf[int(lab.quadrant), int(p.quadrant)] += 1
        hit_q += p.quadrant == lab.quadrant
        hit_a += p.arousal == lab.arousal
        hit_v += p.valence == lab.valence
        if p.aux_arousal is not None:
            aux_a.append(p.aux_arousal == lab.arousal)
        if p.aux_valence is not None:
            aux_v.append(p.aux_valence == lab.valence)
    n = len(labels)
    return EvalReport(
        n=n,
        accuracy_4q=hit_q / n,
        accuracy_arousal=hit_a / n,
        accuracy_valence=hit_v / n,
        aux_accuracy_arousal=float(np.mean(aux_a)) if len(aux_a) == n else None,
        aux_accuracy_valence=float(np.mean(aux_v)) if len(aux_v) == n else None,
        confusion=conf.tolist(),
        per_class_counts=conf.sum(axis=1).tolist(),
    )


def predict_all(model: EmotionModel, inputs) -> list[Prediction]:
    """``inputs`` yields ``(features, tokens)`` pairs; either may be None for a missing branch."""
    with no_grad():
        return [predict(model(feat, toks)) for feat, toks in inputs]

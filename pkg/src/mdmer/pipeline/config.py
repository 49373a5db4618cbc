"""Experiment configuration: JSON with sections dsp, quant, model, training."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from ..dsp_features import DspConfig
from ..emotion_model import LossWeights, ModelConfig
from ..errors import ConfigError
from ..symbolic import QuantConfig

MODES = ("full", "symbolic-only", "acoustic-only", "stft-input", "single-loss")

# model keys a config file may set; the rest are derived from dsp/quant/mode
MODEL_KEYS = ("d_model", "layers", "heads", "ffn", "max_len", "attr_dim", "cda_heads", "dropout", "positional")


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    split_ratio: tuple[float, float, float] = (7.0, 2.0, 1.0)
    loss_weights: LossWeights = LossWeights()
    mode: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "split_ratio", tuple(float(r) for r in self.split_ratio))
        if isinstance(self.loss_weights, dict):
            object.__setattr__(self, "loss_weights", _build(LossWeights, self.loss_weights, "training.loss_weights"))
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if len(self.split_ratio) != 3 or min(self.split_ratio) <= 0:
            raise ConfigError("split_ratio needs three positive components")
        if self.batch_size <= 0 or self.epochs < 0 or self.learning_rate <= 0:
            raise ConfigError("batch_size and learning_rate must be positive, epochs non-negative")

    @property
    def effective_weights(self) -> LossWeights:
        w = self.loss_weights
        if self.mode == "single-loss":
            return LossWeights(w.quadrant, 0.0, 0.0)
        if self.mode == "acoustic-only":
            return LossWeights(w.quadrant, w.arousal, 0.0)
        if self.mode == "symbolic-only":
            return LossWeights(w.quadrant, 0.0, w.valence)
        return w

    @property
    def branches(self) -> str:
        return {"acoustic-only": "acoustic", "symbolic-only": "symbolic"}.get(self.mode, "both")

    @property
    def feature_kind(self) -> str:
        return "stft" if self.mode == "stft-input" else "mixed"


def _build(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {section!r} section: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    dsp: DspConfig = field(default_factory=DspConfig)
    quant: QuantConfig = field(default_factory=QuantConfig)
    model: dict = field(default_factory=dict)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        unknown = set(self.model) - set(MODEL_KEYS)
        if unknown:
            raise ConfigError(f"unknown keys in 'model': {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - {"dsp", "quant", "model", "training"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            dsp=_build(DspConfig, data.get("dsp", {}), "dsp"),
            quant=_build(QuantConfig, data.get("quant", {}), "quant"),
            model=dict(data.get("model", {})),
            training=_build(TrainingConfig, data.get("training", {}), "training"),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        if path is None:
            return cls()
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "dsp": asdict(self.dsp),
            "quant": asdict(self.quant),
            "model": dict(sorted(self.model.items())),
            "training": asdict(self.training),
        }

    def with_overrides(self, mode: str | None = None, seed: int | None = None) -> "ExperimentConfig":
        tr = self.training
        if mode is not None:
            tr = replace(tr, mode=mode)
        if seed is not None:
            tr = replace(tr, seed=seed)
        return replace(self, training=tr)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            feature_rows=self.dsp.n_rows,
            feature_cols=self.dsp.target_frames,
            branches=self.training.branches,
            vocab=self.quant.vocab_sizes(),
            **self.model,
        )

    def hash(self, *sections: str) -> str:
        d = self.to_dict()
        picked = {k: d[k] for k in (sections or d)}
        return hashlib.sha256(json.dumps(picked, sort_keys=True).encode()).hexdigest()[:16]

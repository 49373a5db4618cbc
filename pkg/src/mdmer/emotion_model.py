"""Two-branch emotion model with bidirectional cross-domain attention.

Acoustic branch: three conv3x3 + ReLU + maxpool stages (64, 128, 256
channels) over the mixed feature image; every spatial position of the last
map becomes one sequence element. Symbolic branch: attribute embeddings and a
four-layer post-norm transformer encoder. The two sequences attend to each
other in both directions, are mean-pooled, concatenated and classified into
four quadrants. Each branch also carries a binary head (arousal on the
acoustic side, valence on the symbolic side).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError, ValidationError
from .nn_core import (
    AttentionParams,
    EncoderLayerParams,
    Tensor,
    add,
    bce_loss,
    ce_loss,
    concat,
    conv2d,
    linear,
    maxpool2d,
    mean_pool,
    multi_head_attention,
    relu,
    reshape,
    sinusoidal_positions,
    take_rows,
    transformer_encoder_layer,
    transpose,
)
from .symbolic import QuantConfig

CHECKPOINT_MAGIC = b"MDMCKPT1"
CONV_CHANNELS = (64, 128, 256)
BRANCHES = ("both", "acoustic", "symbolic")
ATTRIBUTES = ("onset", "harmonic", "velocity", "time_shift", "offset")


class Quadrant(IntEnum):
    Q1 = 0
    Q2 = 1
    Q3 = 2
    Q4 = 3


# quadrant -> (valence, arousal) on the circumplex
_VA = {Quadrant.Q1: (1, 1), Quadrant.Q2: (0, 1), Quadrant.Q3: (0, 0), Quadrant.Q4: (1, 0)}
_FROM_VA = {va: q for q, va in _VA.items()}


@dataclass(frozen=True)
class EmotionLabel:
    quadrant: Quadrant

    @classmethod
    def parse(cls, text) -> "EmotionLabel":
        if isinstance(text, (int, np.integer)) and 0 <= int(text) < 4:
            return cls(Quadrant(int(text)))
        try:
            return cls(Quadrant[str(text).strip().upper()])
        except KeyError:
            raise ValidationError(f"unknown quadrant {text!r}; expected Q1..Q4") from None

    @classmethod
    def from_bits(cls, valence: int, arousal: int) -> "EmotionLabel":
        return cls(_FROM_VA[(int(valence), int(arousal))])

    @property
    def valence(self) -> int:
        return _VA[self.quadrant][0]

    @property
    def arousal(self) -> int:
        return _VA[self.quadrant][1]

    @property
    def name(self) -> str:
        return self.quadrant.name


@dataclass(frozen=True)
class ModelConfig:
    feature_rows: int = 150
    feature_cols: int = 256
    conv_channels: tuple[int, ...] = CONV_CHANNELS
    d_model: int = 256
    layers: int = 4
    heads: int = 4
    ffn: int = 1024
    max_len: int = 512
    attr_dim: int = 32
    cda_heads: int = 4
    dropout: float = 0.1
    positional: bool = True
    branches: str = "both"
    vocab: dict = field(default_factory=lambda: QuantConfig().vocab_sizes())

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.conv_channels != CONV_CHANNELS:
            raise ConfigError(f"acoustic encoder channels are fixed at {CONV_CHANNELS}")
        if self.layers != 4:
            raise ConfigError("the symbolic encoder has exactly 4 layers")
        if self.d_model % self.heads or self.d_model % self.cda_heads:
            raise ConfigError("head counts must divide d_model")
        if self.d_model % 2:
            raise ConfigError("d_model must be even")
        if self.branches not in BRANCHES:
            raise ConfigError(f"branches must be one of {BRANCHES}")
        if self.feature_rows < 8 or self.feature_cols < 8:
            raise ConfigError("feature image must be at least 8x8 to survive three 2x2 pools")
        if set(self.vocab) != set(ATTRIBUTES):
            raise ConfigError(f"vocab must size exactly {ATTRIBUTES}")

    @property
    def acoustic_grid(self) -> tuple[int, int]:
        h, w = self.feature_rows, self.feature_cols
        for _ in self.conv_channels:
            h, w = h // 2, w // 2
        return h, w

    @property
    def uses_acoustic(self) -> bool:
        return self.branches in ("both", "acoustic")

    @property
    def uses_symbolic(self) -> bool:
        return self.branches in ("both", "symbolic")


@dataclass
class ModelOutput:
    q_logits: Tensor
    arousal_logit: Tensor | None
    valence_logit: Tensor | None

    def arity(self) -> tuple[int, int, int]:
        return (
            self.q_logits.data.size,
            0 if self.arousal_logit is None else self.arousal_logit.data.size,
            0 if self.valence_logit is None else self.valence_logit.data.size,
        )


@dataclass(frozen=True)
class LossWeights:
    quadrant: float = 1.0
    arousal: float = 1.0
    valence: float = 1.0


@dataclass(frozen=True)
class Prediction:
    quadrant: Quadrant
    valence: int
    arousal: int
    aux_arousal: int | None
    aux_valence: int | None
    q_probabilities: tuple[float, ...]


def _xavier(rng, fan_in, fan_out, dtype):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def _kaiming_conv(rng, c_out, c_in, dtype):
    bound = math.sqrt(6.0 / (c_in * 9))
    return rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3)).astype(dtype)


def _dropout_rng(key: tuple[int, int, int] | None, layer: int):
    if key is None:
        return None
    seed, step, sample = key
    return np.random.Generator(np.random.Philox(key=[seed, layer], counter=[step, sample, 0, 0]))


class EmotionModel:
    """Parameters live in :attr:`params` (name -> :class:`Tensor`)."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        dm = cfg.d_model
        if cfg.uses_acoustic:
            c_in = 1
            for i, c_out in enumerate(cfg.conv_channels, 1):
                self._add(f"conv{i}.w", _kaiming_conv(rng, c_out, c_in, self.dtype))
                self._add(f"conv{i}.b", np.zeros(c_out, self.dtype))
                c_in = c_out
            self._linear(rng, "acoustic_proj", c_in, dm)
            self._linear(rng, "arousal_head", dm, 1)
        if cfg.uses_symbolic:
            for attr in ATTRIBUTES:
                self._add(f"embed.{attr}", rng.normal(0.0, 1.0, (cfg.vocab[attr], cfg.attr_dim)).astype(self.dtype))
            self._linear(rng, "token_proj", len(ATTRIBUTES) * cfg.attr_dim, dm)
            for i in range(cfg.layers):
                p = f"encoder{i}"
                self._attention(rng, f"{p}.attn")
                self._add(f"{p}.ln1.gain", np.ones(dm, self.dtype))
                self._add(f"{p}.ln1.bias", np.zeros(dm, self.dtype))
                self._linear(rng, f"{p}.ff1", dm, cfg.ffn)
                self._linear(rng, f"{p}.ff2", cfg.ffn, dm)
                self._add(f"{p}.ln2.gain", np.ones(dm, self.dtype))
                self._add(f"{p}.ln2.bias", np.zeros(dm, self.dtype))
            self._linear(rng, "valence_head", dm, 1)
        if cfg.branches == "both":
            self._attention(rng, "cda_acoustic")
            self._attention(rng, "cda_symbolic")
        fused = 2 * dm if cfg.branches == "both" else dm
        self._linear(rng, "classifier1", fused, dm)
        self._linear(rng, "classifier2", dm, 4)

    # -- parameter helpers --------------------------------------------------------

    def _add(self, name, arr):
        self.params[name] = Tensor(arr, requires_grad=True, name=name)

    def _linear(self, rng, name, fan_in, fan_out):
        self._add(f"{name}.w", _xavier(rng, fan_in, fan_out, self.dtype))
        self._add(f"{name}.b", np.zeros(fan_out, self.dtype))

    def _attention(self, rng, name):
        dm = self.cfg.d_model
        for part in ("wq", "wk", "wv", "wo"):
            self._add(f"{name}.{part}", _xavier(rng, dm, dm, self.dtype))

    def attention_params(self, name: str, heads: int) -> AttentionParams:
        p = self.params
        return AttentionParams(p[f"{name}.wq"], p[f"{name}.wk"], p[f"{name}.wv"], p[f"{name}.wo"], heads)

    def _encoder_params(self, i: int) -> EncoderLayerParams:
        p, n = self.params, f"encoder{i}"
        return EncoderLayerParams(
            self.attention_params(f"{n}.attn", self.cfg.heads),
            p[f"{n}.ln1.gain"], p[f"{n}.ln1.bias"],
            p[f"{n}.ff1.w"], p[f"{n}.ff1.b"],
            p[f"{n}.ff2.w"], p[f"{n}.ff2.b"],
            p[f"{n}.ln2.gain"], p[f"{n}.ln2.bias"],
        )

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ConfigError(f"parameter sets differ: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for k, t in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ConfigError(f"parameter {k}: checkpoint shape {arr.shape}, config expects {t.shape}")
            t.data = arr.astype(self.dtype).copy()

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    # -- branches -----------------------------------------------------------------

    def acoustic_encode(self, feat) -> Tensor:
        """Feature matrix ``(rows, cols)`` -> sequence ``(h*w, d_model)``."""
        rows = getattr(feat, "rows", feat)
        rows = np.asarray(rows, dtype=self.dtype)
        expect = (self.cfg.feature_rows, self.cfg.feature_cols)
        if rows.shape != expect:
            raise ConfigError(f"feature shape {rows.shape} does not match model input {expect}")
        x = Tensor(rows[None])
        for i in range(1, len(self.cfg.conv_channels) + 1):
            x = maxpool2d(relu(conv2d(x, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"])))
        c, h, w = x.shape
        seq = transpose(reshape(x, (c, h * w)))
        return linear(seq, self.params["acoustic_proj.w"], self.params["acoustic_proj.b"])

    def embed_tokens(self, tokens) -> Tensor:
        arr = np.asarray(tokens, dtype=np.int64).reshape(-1, len(ATTRIBUTES))
        if arr.shape[0] == 0:
            raise ValidationError("symbolic branch needs at least one token")
        arr = arr[: self.cfg.max_len]
        parts = []
        for j, attr in enumerate(ATTRIBUTES):
            lo = 1 if attr == "harmonic" else 0
            idx = np.clip(arr[:, j], lo, self.cfg.vocab[attr] - 1)
            parts.append(take_rows(self.params[f"embed.{attr}"], idx))
        x = linear(concat(parts, axis=1), self.params["token_proj.w"], self.params["token_proj.b"])
        if self.cfg.positional:
            x = add(x, Tensor(sinusoidal_positions(arr.shape[0], self.cfg.d_model).astype(self.dtype)))
        return x

    def symbolic_encode(self, tokens, dropout_key=None) -> Tensor:
        """Token array ``(n, 5)`` -> sequence ``(min(n, max_len), d_model)``."""
        x = self.embed_tokens(tokens)
        for i in range(self.cfg.layers):
            x = transformer_encoder_layer(x, self._encoder_params(i), self.cfg.dropout, _dropout_rng(dropout_key, i))
        return x

    def cda_fuse(self, f_a: Tensor, f_s: Tensor) -> Tensor:
        """Acoustic-query and symbolic-query attention, pooled and concatenated."""
        h = self.cfg.cda_heads
        a = multi_head_attention(f_a, f_s, self.attention_params("cda_acoustic", h))
        s = multi_head_attention(f_s, f_a, self.attention_params("cda_symbolic", h))
        return concat([mean_pool(a), mean_pool(s)], axis=0)

    def _classify(self, v: Tensor) -> Tensor:
        p = self.params
        hidden = relu(linear(reshape(v, (1, -1)), p["classifier1.w"], p["classifier1.b"]))
        return reshape(linear(hidden, p["classifier2.w"], p["classifier2.b"]), (4,))

    def forward(self, feat, tokens, dropout_key: tuple[int, int, int] | None = None) -> ModelOutput:
        """``dropout_key=(seed, step, sample)`` switches on dropout; None is eval mode."""
        p = self.params
        f_a = f_s = None
        arousal = valence = None
        if self.cfg.uses_acoustic:
            f_a = self.acoustic_encode(feat)
            pooled = reshape(mean_pool(f_a), (1, -1))
            arousal = reshape(linear(pooled, p["arousal_head.w"], p["arousal_head.b"]), (1,))
        if self.cfg.uses_symbolic:
            f_s = self.symbolic_encode(tokens, dropout_key)
            pooled = reshape(mean_pool(f_s), (1, -1))
            valence = reshape(linear(pooled, p["valence_head.w"], p["valence_head.b"]), (1,))
        if self.cfg.branches == "both":
            fused = self.cda_fuse(f_a, f_s)
        else:
            fused = mean_pool(f_a if f_a is not None else f_s)
        return ModelOutput(self._classify(fused), arousal, valence)

    __call__ = forward


def total_loss(out: ModelOutput, label: EmotionLabel, weights: LossWeights = LossWeights()) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of 4Q cross entropy and the two branch BCE terms.

    Components are reported already weighted, so they always add up to the
    total. A head that is absent (single-branch models) contributes zero.
    """
    total = ce_loss(out.q_logits, int(label.quadrant)) * weights.quadrant
    comps = {"quadrant": float(total.data), "arousal": 0.0, "valence": 0.0}
    for key, logit, bit, w in (
        ("arousal", out.arousal_logit, label.arousal, weights.arousal),
        ("valence", out.valence_logit, label.valence, weights.valence),
    ):
        if logit is None or w == 0:
            continue
        term = bce_loss(logit, bit) * w
        comps[key] = float(term.data)
        total = total + term
    return total, comps


def predict(out: ModelOutput) -> Prediction:
    z = out.q_logits.data.astype(np.float64).reshape(-1)
    q = Quadrant(int(np.argmax(z)))  # argmax returns the lowest index on ties
    e = np.exp(z - z.max())
    probs = tuple(float(v) for v in e / e.sum())
    lab = EmotionLabel(q)
    aux_a = None if out.arousal_logit is None else int(out.arousal_logit.data.reshape(()) > 0)
    aux_v = None if out.valence_logit is None else int(out.valence_logit.data.reshape(()) > 0)
    return Prediction(q, lab.valence, lab.arousal, aux_a, aux_v, probs)


# ----------------------------------------------------------------------------
# checkpoint file


def save_checkpoint(path, state: dict[str, np.ndarray], config: dict) -> None:
    """Write parameters (and any extra arrays) with a JSON manifest header."""
    manifest, blobs, offset = [], [], 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"config": config, "params": manifest}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header)
        for b in blobs:
            fh.write(b)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12 : 12 + n])
    body = memoryview(data)[12 + n :]
    state = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + 4 * count > len(body):
            raise FormatError(f"{path}: payload for {entry['name']} is truncated")
        state[entry["name"]] = np.frombuffer(body[start : start + 4 * count], dtype="<f4").reshape(entry["shape"]).copy()
    return state, header["config"]


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    if "conv_channels" in d:
        d["conv_channels"] = tuple(d["conv_channels"])
    return ModelConfig(**d)


def tokens_array(tokens: Sequence) -> np.ndarray:
    return np.asarray(tokens, dtype=np.int64).reshape(-1, len(ATTRIBUTES))


__all__ = [
    "EmotionLabel",
    "EmotionModel",
    "LossWeights",
    "ModelConfig",
    "ModelOutput",
    "Prediction",
    "Quadrant",
    "predict",
    "read_checkpoint",
    "save_checkpoint",
    "total_loss",
]

"""Layer kernels built on :mod:`.tensor`: conv, pooling, attention, transformer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, ShapeError
from .tensor import Tensor, add, concat, make, matmul, mean, mul, relu, reshape, take_along_rows, transpose

LN_EPS = 1e-5


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1.

    ``x`` is ``(C_in, H, W)`` or ``(N, C_in, H, W)``; ``weight`` is
    ``(C_out, C_in, 3, 3)``. Output keeps the spatial size.
    """
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    n, c_in, h, w = xd.shape
    c_out = weight.shape[0]
    if weight.shape[1:] != (c_in, 3, 3):
        raise ShapeError(f"conv weight {weight.shape} does not fit input with {c_in} channels")
    padded = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # (n, c_in, h, w, 3, 3) -> (n, c_in*9, h*w)
    cols = sliding_window_view(padded, (3, 3), axis=(2, 3))
    cols = cols.transpose(0, 1, 4, 5, 2, 3).reshape(n, c_in * 9, h * w)
    wmat = weight.data.reshape(c_out, c_in * 9)
    out = wmat @ cols
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(n, c_out, h, w)

    def bw(g):
        g = g if batched else g[None]
        gm = g.reshape(n, c_out, h * w)
        gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(n, c_in, 3, 3, h, w)
            gpad = np.zeros_like(padded)
            for i in range(3):
                for j in range(3):
                    gpad[:, :, i : i + h, j : j + w] += gcols[:, :, i, j]
            gx = gpad[:, :, 1:-1, 1:-1]
            if not batched:
                gx = gx[0]
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out if batched else out[0], parents, lambda g: bw(g)[: len(parents)])


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; an odd trailing row/column is dropped.

    Backward routes each window's gradient to its first maximal element.
    """
    *lead, h, w = x.shape
    h2, w2 = h // 2, w // 2
    crop = x.data[..., : 2 * h2, : 2 * w2]
    win = crop.reshape(*lead, h2, 2, w2, 2)
    win = np.moveaxis(win, -3, -2).reshape(*lead, h2, w2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gw = np.moveaxis(gw.reshape(*lead, h2, w2, 2, 2), -2, -3).reshape(*lead, 2 * h2, 2 * w2)
        full = np.zeros(x.shape, dtype=g.dtype)
        full[..., : 2 * h2, : 2 * w2] = gw
        return (full,)

    return make(out, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make(y, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    d = x.shape[-1]

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return (gx, (g * xhat).sum(axis=lead), g.sum(axis=lead))

    return make(xhat * gain.data + bias.data, (x, gain, bias), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, keep)


def sinusoidal_positions(n: int, d_model: int) -> np.ndarray:
    """Sin on even dims, cos on odd dims, wavelengths geometric up to 10000."""
    if d_model % 2:
        raise ConfigError("d_model must be even for sinusoidal positions")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = np.exp(-np.log(10000.0) * np.arange(0, d_model, 2) / d_model)
    pe = np.zeros((n, d_model))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def canonical_order(rows: np.ndarray) -> np.ndarray:
    """Lexicographic order of the rows of a 2-D array (stable on ties)."""
    return np.lexsort(rows.T[::-1])


def _canonical_keys(k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    if k.shape[-2] < 2:
        return k, v
    kv = np.concatenate([k.data, v.data], axis=-1)
    lead = kv.shape[:-2]
    flat = kv.reshape(-1, *kv.shape[-2:])
    idx = np.stack([canonical_order(m) for m in flat]).reshape(*lead, kv.shape[-2])
    return take_along_rows(k, idx), take_along_rows(v, idx)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """``softmax(q k^T / sqrt(d)) v`` over the last two axes.

    Key/value pairs are visited in lexicographic order. The result is
    mathematically independent of key order; fixing the order makes it
    bit-for-bit independent too.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} disagree")
    d = q.shape[-1]
    k, v = _canonical_keys(k, v)
    scores = mul(matmul(q, transpose(k, _swap_last(k.ndim))), 1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


@dataclass
class AttentionParams:
    """Per-head projections stored side by side.

    ``w_q[:, i*d:(i+1)*d]`` is head ``i``'s query projection (same for K, V);
    ``w_o`` maps the concatenated heads back to ``d_model``.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    heads: int

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[1] // self.heads

    def validate(self) -> None:
        dm, hd = self.w_q.shape
        if self.heads <= 0 or hd % self.heads or hd != dm:
            raise ConfigError(f"heads={self.heads} with projection {self.w_q.shape}: need H*d == d_model")
        for m in (self.w_k, self.w_v):
            if m.shape != self.w_q.shape:
                raise ConfigError("query/key/value projections must share a shape")
        if self.w_o.shape != (hd, dm):
            raise ConfigError(f"output projection must be {(hd, dm)}, got {self.w_o.shape}")


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, hd = x.shape
    return transpose(reshape(x, (n, heads, hd // heads)), (1, 0, 2))


def multi_head_attention(f_alpha: Tensor, f_beta: Tensor, p: AttentionParams) -> Tensor:
    """Queries from ``f_alpha``, keys and values from ``f_beta``; returns ``(n_alpha, d_model)``.

    """
    p.validate()
    q = _split_heads(matmul(f_alpha, p.w_q), p.heads)
    k = _split_heads(matmul(f_beta, p.w_k), p.heads)
    v = _split_heads(matmul(f_beta, p.w_v), p.heads)
    heads = scaled_dot_attention(q, k, v)  # (H, n_alpha, d)
    n = f_alpha.shape[0]
    merged = reshape(transpose(heads, (1, 0, 2)), (n, p.w_q.shape[1]))
    return matmul(merged, p.w_o)


@dataclass
class EncoderLayerParams:
    attn: AttentionParams
    ln1_gain: Tensor
    ln1_bias: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


def transformer_encoder_layer(
    x: Tensor,
    p: EncoderLayerParams,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Post-norm encoder layer: ``LN(x + Attn(x))`` then ``LN(h + FFN(h))``.

    Dropout is applied to each sublayer output only when ``rng`` is given.
    """
    a = dropout(multi_head_attention(x, x, p.attn), dropout_rate, rng)
    h = layer_norm(add(x, a), p.ln1_gain, p.ln1_bias)
    f = linear(relu(linear(h, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2)
    f = dropout(f, dropout_rate, rng)
    return layer_norm(add(h, f), p.ln2_gain, p.ln2_bias)


def mean_pool(x: Tensor) -> Tensor:
    return mean(x, axis=0)


__all__ = [
    "AttentionParams",
    "EncoderLayerParams",
    "concat",
    "conv2d",
    "dropout",
    "layer_norm",
    "linear",
    "maxpool2d",
    "mean_pool",
    "multi_head_attention",
    "scaled_dot_attention",
    "sinusoidal_positions",
    "softmax",
    "transformer_encoder_layer",
]

"""Minimal deterministic neural kernels: tensors, layers, losses, Adam."""

from .gradcheck import grad_check
from .layers import (
    AttentionParams,
    EncoderLayerParams,
    conv2d,
    dropout,
    layer_norm,
    linear,
    maxpool2d,
    mean_pool,
    multi_head_attention,
    scaled_dot_attention,
    sinusoidal_positions,
    softmax,
    transformer_encoder_layer,
)
from .losses import bce_loss, ce_loss
from .optim import AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    concat,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    set_debug,
    take_along_rows,
    take_rows,
    transpose,
    tsum,
)

__all__ = [
    "AdamState",
    "AttentionParams",
    "EncoderLayerParams",
    "Tensor",
    "adam_step",
    "add",
    "bce_loss",
    "ce_loss",
    "concat",
    "conv2d",
    "dropout",
    "grad_check",
    "layer_norm",
    "linear",
    "matmul",
    "maxpool2d",
    "mean",
    "mean_pool",
    "mul",
    "multi_head_attention",
    "no_grad",
    "relu",
    "reshape",
    "scaled_dot_attention",
    "set_debug",
    "sinusoidal_positions",
    "softmax",
    "take_along_rows",
    "take_rows",
    "transformer_encoder_layer",
    "transpose",
    "tsum",
]

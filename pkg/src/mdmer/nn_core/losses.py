"""Stable classification losses on logits."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .tensor import Tensor, make


def bce_loss(logit: Tensor, target: int) -> Tensor:
    """Binary cross entropy on a single logit: ``max(z,0) - z*y + log(1+exp(-|z|))``."""
    if target not in (0, 1):
        raise ValidationError(f"BCE target must be 0 or 1, got {target}")
    z = logit.data.astype(np.float64).reshape(())
    loss = np.maximum(z, 0) - z * target + np.log1p(np.exp(-np.abs(z)))
    e = np.exp(-np.abs(z))
    sig = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make(np.asarray(loss), (logit,), lambda g: ((g * (sig - target)).astype(logit.dtype).reshape(logit.shape),))


def ce_loss(logits: Tensor, target: int) -> Tensor:
    """``-log softmax(logits)[target]`` via log-sum-exp."""
    n = logits.data.size
    if not 0 <= int(target) < n:
        raise ValidationError(f"class index {target} outside [0, {n})")
    # loss values in float64; gradients go back in the logits' dtype
    z = logits.data.astype(np.float64).reshape(-1)
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    p = np.exp(z - lse)

    def bw(g):
        d = p.copy()
        d[target] -= 1.0
        return ((g * d).astype(logits.dtype).reshape(logits.shape),)

    return make(np.asarray(lse - z[target]), (logits,), bw)

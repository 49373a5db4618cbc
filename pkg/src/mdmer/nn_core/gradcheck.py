from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-4,
    n_samples: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``x`` should hold float64 data. With ``n_samples`` only that many randomly
    chosen coordinates are probed. Per-coordinate error is
    ``|a - n| / max(|a|, |n|, 1e-7 * scale)`` where ``scale`` is the largest
    gradient magnitude, so entries that are numerically zero are judged on the
    gradient's own scale.
    """
    x.grad = None
    x.requires_grad = True
    f(x).backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    idx = np.arange(flat.size)
    if n_samples is not None and n_samples < flat.size:
        idx = np.random.default_rng(seed).choice(flat.size, n_samples, replace=False)
    numeric = np.empty(idx.size)
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(x).data)
        flat[i] = orig - step
        lo = float(f(x).data)
        flat[i] = orig
        numeric[j] = (hi - lo) / (2 * step)
    a = analytic.reshape(-1)[idx]
    scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-7 * scale + 1e-300)
    return float(np.max(np.abs(a - numeric) / denom, initial=0.0))

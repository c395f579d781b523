"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, backward


def numeric_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], index: int, eps: float = 1e-6) -> np.ndarray:
    x = inputs[index]
    g = np.zeros(x.shape, dtype=np.float64)
    # index in place: reshape(-1) would silently copy a non-contiguous array
    for j in np.ndindex(*x.shape):
        orig = x.data[j]
        x.data[j] = orig + eps
        up = fn(*inputs).item()
        x.data[j] = orig - eps
        down = fn(*inputs).item()
        x.data[j] = orig
        g[j] = (up - down) / (2 * eps)
    return g


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Worst relative error between backward() and central differences.

    ``inputs`` must be float64 tensors; every one with ``requires_grad`` is
    checked. The error for one input is ``|a - n| / max(|a|, |n|, 1e-8)``
    with ``|.|`` the Euclidean norm over that input's elements.
    """
    for x in inputs:
        if x.dtype != np.float64:
            raise TypeError("grad_check runs in float64 only")
        x.grad = None
    out = fn(*inputs)
    backward(out)
    worst = 0.0
    for i, x in enumerate(inputs):
        if not x.requires_grad:
            continue
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        num = numeric_grad(fn, inputs, i, eps)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(num), 1e-8)
        worst = max(worst, float(np.linalg.norm(analytic - num) / denom))
    return worst

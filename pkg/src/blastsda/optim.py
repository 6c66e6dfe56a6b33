"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["AdamWState", "init_adamw", "adamw_step"]


@dataclass
class AdamWState:
    """First/second moment buffers plus the shared step counter."""

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0


def init_adamw(params: list[Tensor]) -> AdamWState:
    return AdamWState(
        m=[np.zeros(p.shape) for p in params],
        v=[np.zeros(p.shape) for p in params],
    )


def adamw_step(
    params: list[Tensor],
    state: AdamWState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One optimizer step in place.

    Weight decay is decoupled: parameters shrink multiplicatively by
    (1 - lr * weight_decay) before the bias-corrected adaptive update.
    Missing gradients count as zero.
    """
    if len(params) != len(state.m):
        raise ValueError("optimizer state does not match parameter list")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad if p.grad is not None else np.zeros(p.shape)
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)

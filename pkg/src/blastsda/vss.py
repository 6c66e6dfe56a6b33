"""2D visual state-space blocks.

cross_scan/cross_merge unfold a feature grid into four directional pixel
sequences and fold them back; ss2d runs the selective scan along each
direction; vss_block wraps ss2d in the usual norm/expand/gate/project
residual shape; stss_block fuses a pre/post feature pair; ra_stss_fuse
combines a fused map with the carried decoder state under a multiplicative
(1 + blast) gate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .ssm import selective_scan_op, stable_a_init
from .tensor import Tensor

__all__ = [
    "LAYER_NORM_EPS",
    "DirectionWeights",
    "SS2DWeights",
    "VSSWeights",
    "STSSWeights",
    "cross_scan",
    "cross_merge",
    "ss2d",
    "vss_block",
    "stss_block",
    "ra_stss_fuse",
    "init_vss_weights",
    "init_stss_weights",
]

LAYER_NORM_EPS = 1e-5


@lru_cache(maxsize=None)
def _grid_permutations(h: int, w: int) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    """Pixel orderings for the four scan directions and their inverses.

    1: row-major; 2: reverse of 1; 3: column-major; 4: reverse of 3.
    """
    length = h * w
    d1 = np.arange(length)
    d2 = d1[::-1].copy()
    d3 = d1.reshape(h, w).flatten(order="F")
    d4 = d3[::-1].copy()
    perms = (d1, d2, d3, d4)
    inverses = []
    for p in perms:
        inv = np.empty(length, dtype=np.int64)
        inv[p] = d1
        inverses.append(inv)
    return perms, tuple(inverses)


def cross_scan(f: Tensor) -> list[Tensor]:
    """Unfold an (H, W, C) map into four (H*W, C) directional sequences."""
    h, w, c = f.shape
    perms, _ = _grid_permutations(h, w)
    seq = T.reshape(f, (h * w, c))
    return [T.take_rows(seq, p) for p in perms]


def cross_merge(seqs: list[Tensor], h: int, w: int) -> Tensor:
    """Inverse-permute each directional sequence to the grid and sum them."""
    _, inverses = _grid_permutations(h, w)
    if len(seqs) != 4:
        raise ValueError("cross_merge expects exactly four sequences")
    total = None
    for seq, inv in zip(seqs, inverses):
        if seq.shape[0] != h * w:
            raise ValueError(f"sequence length {seq.shape[0]} does not match {h}x{w} grid")
        back = T.take_rows(seq, inv)
        total = back if total is None else T.add(total, back)
    return T.reshape(total, (h, w, seqs[0].shape[1]))


@dataclass
class DirectionWeights:
    """Per-direction scan parameters: shared decay vector plus projections."""

    a: Tensor          # (N,)
    w_b: Tensor        # (C, N)
    w_c: Tensor        # (C, N)
    w_delta: Tensor    # (C, 1)
    b_delta: Tensor    # scalar


@dataclass
class SS2DWeights:
    directions: list[DirectionWeights]


@dataclass
class VSSWeights:
    norm_gamma: Tensor
    norm_beta: Tensor
    w_in: Tensor
    b_in: Tensor
    w_gate: Tensor
    b_gate: Tensor
    ss2d: SS2DWeights
    w_out: Tensor
    b_out: Tensor


@dataclass
class STSSWeights:
    """A doubled-width VSS core over the concatenated pair, plus a projection back."""

    vss: VSSWeights
    w_proj: Tensor
    b_proj: Tensor


def ss2d(f: Tensor, weights: SS2DWeights) -> Tensor:
    """Four-direction selective scan over a feature grid, averaged at merge."""
    h, w, c = f.shape
    if weights.directions[0].w_b.shape[0] != c:
        raise ValueError(f"ss2d: weights expect {weights.directions[0].w_b.shape[0]} channels, got {c}")
    seqs = cross_scan(f)
    length = h * w
    b_parts, c_parts, d_parts = [], [], []
    for seq, dw in zip(seqs, weights.directions):
        b_parts.append(T.matmul(seq, dw.w_b))
        c_parts.append(T.matmul(seq, dw.w_c))
        d_parts.append(T.softplus(T.add(T.matmul(seq, dw.w_delta), dw.b_delta)))
    a_all = T.stack([dw.a for dw in weights.directions])            # (4, N)
    b_all = T.stack(b_parts)                                        # (4, L, N)
    c_all = T.stack(c_parts)
    delta_all = T.reshape(T.stack(d_parts), (4, length))
    x_all = T.stack(seqs)                                           # (4, L, C)
    y_all = selective_scan_op(a_all, b_all, c_all, delta_all, x_all)
    merged = cross_merge(T.unstack(y_all), h, w)
    return T.mul(merged, T.scalar(0.25))


def vss_block(f: Tensor, weights: VSSWeights) -> Tensor:
    """Residual visual state-space block.

    norm -> linear expansion -> SiLU -> ss2d, gated by a parallel
    SiLU(linear) branch, projected back and added to the input. With the
    output projection zeroed the block is the exact identity.
    """
    normed = T.layer_norm(f, weights.norm_gamma, weights.norm_beta, LAYER_NORM_EPS)
    expanded = T.silu(T.conv1x1(normed, weights.w_in, weights.b_in))
    gate = T.silu(T.conv1x1(normed, weights.w_gate, weights.b_gate))
    scanned = ss2d(expanded, weights.ss2d)
    return T.add(f, T.conv1x1(T.mul(scanned, gate), weights.w_out, weights.b_out))


def stss_block(pre: Tensor, post: Tensor, weights: STSSWeights) -> Tensor:
    """Fuse a pre/post feature pair: concat channels, scan at doubled width,
    project back to the single-stream width."""
    if pre.shape != post.shape:
        raise ValueError(f"stss_block: shapes differ ({pre.shape} vs {post.shape})")
    paired = T.concat_channels(pre, post)
    fused = vss_block(paired, weights.vss)
    return T.conv1x1(fused, weights.w_proj, weights.b_proj)


def ra_stss_fuse(fused: Tensor, carried: Tensor | None, blast_feat: Tensor) -> Tensor:
    """Residual-attention fusion of one decoder stage.

    out = (fused + up2x(carried)) * (1 + blast_feat), elementwise; at the
    coarsest stage there is nothing to carry and the upsampled term is
    dropped. `carried` must arrive channel-aligned at half the spatial size.
    """
    h, w, c = fused.shape
    if blast_feat.shape != fused.shape:
        raise ValueError(f"blast features {blast_feat.shape} must match fused map {fused.shape}")
    if carried is None:
        base = fused
    else:
        ch, cw, cc = carried.shape
        if (2 * ch, 2 * cw, cc) != (h, w, c):
            raise ValueError(
                f"carried map {carried.shape} must be half the spatial size of {fused.shape}"
            )
        base = T.add(fused, T.bilinear_resize(carried, h, w))
    return T.mul(base, T.add(T.scalar(1.0), blast_feat))


# ---------------------------------------------------------------------------
# initialization

def _linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    std = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)), requires_grad=True)


def _param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def init_vss_weights(rng: np.random.Generator, channels: int, state_dim: int,
                     expand_ratio: float = 2.0) -> VSSWeights:
    expanded = channels * expand_ratio
    if expanded != int(expanded):
        raise ValueError("expanded width must be an integer")
    expanded = int(expanded)
    directions = []
    for _ in range(4):
        directions.append(DirectionWeights(
            a=_param(stable_a_init(state_dim)),
            w_b=_linear(rng, expanded, state_dim),
            w_c=_linear(rng, expanded, state_dim),
            w_delta=_linear(rng, expanded, 1),
            b_delta=_param(0.0),
        ))
    return VSSWeights(
        norm_gamma=_param(np.ones(channels)),
        norm_beta=_param(np.zeros(channels)),
        w_in=_linear(rng, channels, expanded),
        b_in=_param(np.zeros(expanded)),
        w_gate=_linear(rng, channels, expanded),
        b_gate=_param(np.zeros(expanded)),
        ss2d=SS2DWeights(directions=directions),
        w_out=_linear(rng, expanded, channels),
        b_out=_param(np.zeros(channels)),
    )


def init_stss_weights(rng: np.random.Generator, channels: int, state_dim: int,
                      expand_ratio: float = 2.0) -> STSSWeights:
    return STSSWeights(
        vss=init_vss_weights(rng, 2 * channels, state_dim, expand_ratio),
        w_proj=_linear(rng, 2 * channels, channels),
        b_proj=_param(np.zeros(channels)),
    )

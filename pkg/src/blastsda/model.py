"""Multimodal multi-task damage-assessment network.

A shared (siamese) hierarchical encoder runs over the pre- and post-event
images; a UNet-style decoder reconstructs the building-segmentation logits
from the pre-event pyramid alone; a lightweight blast encoder resizes and
projects the physical blast-loading raster to every pyramid level; the
damage decoder fuses pre/post features stage by stage under the blast gate
and emits per-pixel damage logits.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .vss import (
    LAYER_NORM_EPS,
    STSSWeights,
    VSSWeights,
    init_stss_weights,
    init_vss_weights,
    ra_stss_fuse,
    stss_block,
    vss_block,
)

__all__ = [
    "ModelConfig",
    "ModelWeights",
    "init_weights",
    "named_parameters",
    "parameters",
    "zero_grads",
    "patch_partition",
    "encoder_forward",
    "mask_decoder_forward",
    "blast_encoder_forward",
    "damage_decoder_forward",
    "model_forward",
    "classify",
    "swap_head",
    "PRETRAIN_CLASSES",
    "FINETUNE_CLASSES",
]

PATCH_SIZE = 4
PRETRAIN_CLASSES = 5   # background + four damage grades (broad multi-hazard taxonomy)
FINETUNE_CLASSES = 4   # background, intact, damaged, destroyed


@dataclass(frozen=True)
class ModelConfig:
    height: int = 64
    width: int = 64
    channels: tuple[int, ...] = (8, 16, 32, 64)
    blocks_per_level: tuple[int, ...] = (1, 1, 1, 1)
    state_dim: int = 8
    expand_ratio: float = 2.0
    mask_classes: int = 2
    damage_classes: int = FINETUNE_CLASSES
    # "decoder" carries the previous decoder output between stages;
    # "fused" carries the previous stage's fusion output instead.
    carry_mode: str = "decoder"

    def __post_init__(self):
        if self.height % 32 or self.width % 32:
            raise ValueError("input size must be divisible by 32")
        if len(self.channels) != 4 or len(self.blocks_per_level) != 4:
            raise ValueError("exactly four pyramid levels are supported")
        if any(b < a for a, b in zip(self.channels, self.channels[1:])) or \
                any(a == b for a, b in zip(self.channels, self.channels[1:])):
            raise ValueError("channel plan must be strictly increasing")
        if self.damage_classes < 2 or self.mask_classes != 2:
            raise ValueError("need >= 2 damage classes and exactly 2 mask classes")
        if self.carry_mode not in ("decoder", "fused"):
            raise ValueError("carry_mode must be 'decoder' or 'fused'")

    def level_shape(self, level: int) -> tuple[int, int]:
        """Spatial size of pyramid level 0..3 (stride 4, 8, 16, 32)."""
        stride = PATCH_SIZE * (2 ** level)
        return self.height // stride, self.width // stride


@dataclass
class PatchEmbedWeights:
    w: Tensor
    b: Tensor
    gamma: Tensor
    beta: Tensor


@dataclass
class DownWeights:
    w: Tensor
    b: Tensor


@dataclass
class EncoderLevel:
    down: DownWeights | None
    blocks: list[VSSWeights]


@dataclass
class MaskStage:
    w_up: Tensor
    b_up: Tensor
    w_skip: Tensor
    b_skip: Tensor
    block: VSSWeights


@dataclass
class BlastProj:
    w: Tensor
    b: Tensor


@dataclass
class DamageStage:
    stss: STSSWeights
    w_carry: Tensor | None
    b_carry: Tensor | None


@dataclass
class Head:
    w: Tensor
    b: Tensor


@dataclass
class ModelWeights:
    config: ModelConfig
    patch_embed: PatchEmbedWeights
    levels: list[EncoderLevel]
    mask_stages: list[MaskStage]      # decoded coarse-to-fine: levels 2, 1, 0
    mask_head: Head
    blast_projs: list[BlastProj]      # one per pyramid level
    damage_stages: list[DamageStage]  # decoded coarse-to-fine: levels 3, 2, 1, 0
    damage_head: Head


def _linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    std = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)), requires_grad=True)


def _param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def init_weights(config: ModelConfig, seed: int = 0) -> ModelWeights:
    """Deterministic initialization: one generator, fixed construction order."""
    rng = np.random.default_rng(seed)
    ch = config.channels
    patch_dim = PATCH_SIZE * PATCH_SIZE * 3
    patch_embed = PatchEmbedWeights(
        w=_linear(rng, patch_dim, ch[0]),
        b=_param(np.zeros(ch[0])),
        gamma=_param(np.ones(ch[0])),
        beta=_param(np.zeros(ch[0])),
    )
    levels = []
    for level in range(4):
        down = None
        if level > 0:
            down = DownWeights(w=_linear(rng, 4 * ch[level - 1], ch[level]),
                               b=_param(np.zeros(ch[level])))
        blocks = [init_vss_weights(rng, ch[level], config.state_dim, config.expand_ratio)
                  for _ in range(config.blocks_per_level[level])]
        levels.append(EncoderLevel(down=down, blocks=blocks))

    mask_stages = []
    for level in (2, 1, 0):
        mask_stages.append(MaskStage(
            w_up=_linear(rng, ch[level + 1], ch[level]),
            b_up=_param(np.zeros(ch[level])),
            w_skip=_linear(rng, ch[level], ch[level]),
            b_skip=_param(np.zeros(ch[level])),
            block=init_vss_weights(rng, ch[level], config.state_dim, config.expand_ratio),
        ))
    mask_head = Head(w=_linear(rng, ch[0], config.mask_classes),
                     b=_param(np.zeros(config.mask_classes)))

    # near-zero init keeps the (1 + blast) fusion gate at identity until
    # training opens it
    blast_projs = [BlastProj(w=_param(rng.normal(0.0, 0.02, size=(3, ch[level]))),
                             b=_param(np.zeros(ch[level])))
                   for level in range(4)]

    damage_stages = []
    for level in (3, 2, 1, 0):
        w_carry = b_carry = None
        if level < 3:
            w_carry = _linear(rng, ch[level + 1], ch[level])
            b_carry = _param(np.zeros(ch[level]))
        damage_stages.append(DamageStage(
            stss=init_stss_weights(rng, ch[level], config.state_dim, config.expand_ratio),
            w_carry=w_carry,
            b_carry=b_carry,
        ))
    damage_head = Head(w=_linear(rng, ch[0], config.damage_classes),
                       b=_param(np.zeros(config.damage_classes)))

    return ModelWeights(
        config=config,
        patch_embed=patch_embed,
        levels=levels,
        mask_stages=mask_stages,
        mask_head=mask_head,
        blast_projs=blast_projs,
        damage_stages=damage_stages,
        damage_head=damage_head,
    )


def _walk(obj, prefix: str, out: list):
    if isinstance(obj, Tensor):
        out.append((prefix, obj))
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            if f.name == "config":
                continue
            _walk(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name, out)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            _walk(item, f"{prefix}.{i}", out)
    elif isinstance(obj, dict):
        for k in sorted(obj):
            _walk(obj[k], f"{prefix}.{k}", out)


def named_parameters(weights: ModelWeights) -> list[tuple[str, Tensor]]:
    """All parameter tensors with stable dotted names, in construction order."""
    out: list[tuple[str, Tensor]] = []
    _walk(weights, "", out)
    return out


def parameters(weights: ModelWeights) -> list[Tensor]:
    return [t for _, t in named_parameters(weights)]


def zero_grads(weights: ModelWeights) -> None:
    for _, t in named_parameters(weights):
        t.zero_grad()


# ---------------------------------------------------------------------------
# forward passes

def patch_partition(img: Tensor, pe: PatchEmbedWeights) -> Tensor:
    """Embed non-overlapping 4x4 patches, then layer-normalize."""
    h, w, c = img.shape
    if h % PATCH_SIZE or w % PATCH_SIZE:
        raise ValueError(f"image size {h}x{w} not divisible by patch size {PATCH_SIZE}")
    if c != 3:
        raise ValueError("expected a 3-channel image")
    patches = T.patch_merge(img, PATCH_SIZE)
    embedded = T.conv1x1(patches, pe.w, pe.b)
    return T.layer_norm(embedded, pe.gamma, pe.beta, LAYER_NORM_EPS)


def _downsample(x: Tensor, down: DownWeights) -> Tensor:
    return T.conv1x1(T.patch_merge(x, 2), down.w, down.b)


def encoder_forward(img: Tensor, weights: ModelWeights) -> list[Tensor]:
    """Hierarchical features at strides 4, 8, 16, 32."""
    cfg = weights.config
    if img.shape != (cfg.height, cfg.width, 3):
        raise ValueError(f"expected image of shape {(cfg.height, cfg.width, 3)}, got {img.shape}")
    x = patch_partition(img, weights.patch_embed)
    pyramid = []
    for level in weights.levels:
        if level.down is not None:
            x = _downsample(x, level.down)
        for block in level.blocks:
            x = vss_block(x, block)
        pyramid.append(x)
    return pyramid


def mask_decoder_forward(pre_pyramid: list[Tensor], weights: ModelWeights) -> Tensor:
    """Building-segmentation logits from the pre-event pyramid only."""
    cfg = weights.config
    x = pre_pyramid[3]
    for stage, level in zip(weights.mask_stages, (2, 1, 0)):
        hl, wl = cfg.level_shape(level)
        up = T.conv1x1(T.bilinear_resize(x, hl, wl), stage.w_up, stage.b_up)
        skip = T.conv1x1(pre_pyramid[level], stage.w_skip, stage.b_skip)
        x = vss_block(T.add(up, skip), stage.block)
    full = T.bilinear_resize(x, cfg.height, cfg.width)
    return T.conv1x1(full, weights.mask_head.w, weights.mask_head.b)


def blast_encoder_forward(blast: Tensor, weights: ModelWeights) -> list[Tensor]:
    """Resize the blast raster to each level and project to that level's width."""
    cfg = weights.config
    if blast.shape != (cfg.height, cfg.width, 3):
        raise ValueError(f"expected blast map of shape {(cfg.height, cfg.width, 3)}, got {blast.shape}")
    feats = []
    for level, proj in enumerate(weights.blast_projs):
        hl, wl = cfg.level_shape(level)
        resized = T.bilinear_resize(blast, hl, wl)
        feats.append(T.conv1x1(resized, proj.w, proj.b))
    return feats


def damage_decoder_forward(pre_pyramid: list[Tensor], post_pyramid: list[Tensor],
                           blast_feats: list[Tensor], weights: ModelWeights) -> Tensor:
    """Damage logits from fused pre/post features under the blast gate.

    Stages run coarsest-first. The carried map is channel-projected before
    it is upsampled into the next (finer) stage.
    """
    cfg = weights.config
    decoded = None
    fused_prev = None
    for stage, level in zip(weights.damage_stages, (3, 2, 1, 0)):
        if pre_pyramid[level].shape != post_pyramid[level].shape:
            raise ValueError("pre/post pyramids are misaligned")
        fused = stss_block(pre_pyramid[level], post_pyramid[level], stage.stss)
        if stage.w_carry is None:
            carried = None
        else:
            source = decoded if cfg.carry_mode == "decoder" else fused_prev
            carried = T.conv1x1(source, stage.w_carry, stage.b_carry)
        decoded = ra_stss_fuse(fused, carried, blast_feats[level])
        fused_prev = fused
    full = T.bilinear_resize(decoded, cfg.height, cfg.width)
    return T.conv1x1(full, weights.damage_head.w, weights.damage_head.b)


def model_forward(pre: Tensor, post: Tensor, blast: Tensor,
                  weights: ModelWeights) -> tuple[Tensor, Tensor]:
    """Full forward pass -> (mask logits (H,W,2), damage logits (H,W,T)).

    The encoder weights are shared between the pre and post branches; the
    mask logits depend on the pre-event image alone.
    """
    pre_pyramid = encoder_forward(pre, weights)
    post_pyramid = encoder_forward(post, weights)
    blast_feats = blast_encoder_forward(blast, weights)
    mask_logits = mask_decoder_forward(pre_pyramid, weights)
    damage_logits = damage_decoder_forward(pre_pyramid, post_pyramid, blast_feats, weights)
    return mask_logits, damage_logits


def classify(logits: Tensor) -> np.ndarray:
    """Per-pixel argmax; ties resolve to the lowest class index."""
    if logits.ndim != 3 or logits.shape[2] < 2:
        raise ValueError("classify expects (H, W, T) logits with T >= 2")
    return np.argmax(logits.data, axis=2)


def swap_head(weights: ModelWeights, new_classes: int, seed: int = 0) -> ModelWeights:
    """Reinitialize the damage head for a new class count; everything else is
    carried over by reference, bit-identical."""
    if new_classes < 2:
        raise ValueError("need at least 2 damage classes")
    rng = np.random.default_rng(seed)
    new_config = dataclasses.replace(weights.config, damage_classes=new_classes)
    new_head = Head(w=_linear(rng, weights.config.channels[0], new_classes),
                    b=_param(np.zeros(new_classes)))
    return dataclasses.replace(weights, config=new_config, damage_head=new_head)

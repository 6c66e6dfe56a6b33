"""Rapid structural damage assessment from pre/post-event imagery fused with
a physical blast-loading prior, built on selective state-space blocks."""

from .blast import BlastScenario, overpressure_surrogate, render_blast_map, scaled_distance
from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import MetricsReport, evaluate_dataset, f1_clf, f1_loc, f1_overall
from .model import ModelConfig, ModelWeights, classify, init_weights, model_forward, swap_head
from .scenes import SyntheticScene, generate_scene
from .ssm import (
    ContinuousSSM,
    DiscreteSSM,
    SelectiveParams,
    apply_causal_conv,
    conv_kernel,
    discretize_zoh,
    scan_recurrent,
    selective_scan,
)
from .tensor import Tape, Tensor, backward
from .vss import cross_merge, cross_scan, ra_stss_fuse, ss2d, stss_block, vss_block

__version__ = "0.1.0"

__all__ = [
    "BlastScenario",
    "ContinuousSSM",
    "DiscreteSSM",
    "MetricsReport",
    "ModelConfig",
    "ModelWeights",
    "SelectiveParams",
    "SyntheticScene",
    "Tape",
    "Tensor",
    "apply_causal_conv",
    "backward",
    "classify",
    "conv_kernel",
    "cross_merge",
    "cross_scan",
    "discretize_zoh",
    "evaluate_dataset",
    "f1_clf",
    "f1_loc",
    "f1_overall",
    "generate_scene",
    "init_weights",
    "load_checkpoint",
    "model_forward",
    "overpressure_surrogate",
    "ra_stss_fuse",
    "render_blast_map",
    "save_checkpoint",
    "scaled_distance",
    "scan_recurrent",
    "selective_scan",
    "ss2d",
    "stss_block",
    "swap_head",
    "vss_block",
]

"""Two-stage training workflow: reusable pre-training on broad synthetic
multi-hazard scenes, then fast fine-tuning with blast fusion, plus dataset
generation, evaluation, and single-scene prediction.

Every stage is a pure function of (config, inputs): repeated runs produce
byte-identical datasets, checkpoints, and metric reports.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .blast import BlastScenario
from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import MetricsReport, evaluate_dataset, multitask_loss
from .model import (
    FINETUNE_CLASSES,
    PRETRAIN_CLASSES,
    ModelConfig,
    ModelWeights,
    classify,
    init_weights,
    model_forward,
    parameters,
    swap_head,
    zero_grads,
)
from .optim import adamw_step, init_adamw
from .rasters import (
    RasterError,
    read_bfr,
    read_pgm,
    read_ppm,
    write_bfr,
    write_pgm,
    write_ppm,
)
from .scenes import generate_scene
from .tensor import Tape, Tensor, backward

__all__ = [
    "BLAST_MODES",
    "PRETRAIN_LR",
    "FINETUNE_LR",
    "PALETTE",
    "ConfigError",
    "DataError",
    "TrainingDiverged",
    "RunConfig",
    "SplitManifest",
    "SceneRecord",
    "make_split",
    "apply_blast_mode",
    "load_config_file",
    "write_scene",
    "read_scene",
    "load_split",
    "load_scenes",
    "run_generate",
    "run_pretrain",
    "run_finetune",
    "run_evaluate",
    "run_predict",
    "train_loop",
    "predictor",
]

BLAST_MODES = ("none", "distance_only", "full")

# Desk-scale defaults, sized so a few hundred AdamW steps actually fit the
# tiny synthetic scenes. Full-scale runs would use far smaller rates
# (1e-4 pre-train / 1e-5 fine-tune); set learning_rate explicitly for those.
PRETRAIN_LR = 3e-3
FINETUNE_LR = 1e-3

PALETTE = {
    0: (0, 0, 0),        # background
    1: (0, 255, 0),      # intact
    2: (255, 255, 0),    # damaged
    3: (255, 0, 0),      # destroyed
}


class ConfigError(Exception):
    """Invalid configuration: unknown key, bad value, bad combination."""


class DataError(Exception):
    """Missing or malformed input data."""


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunConfig:
    data_dir: str = ""
    out_dir: str = ""
    checkpoint_in: str = ""
    checkpoint_out: str = ""
    learning_rate: float = 0.0        # 0 -> stage default
    weight_decay: float = 0.01
    steps: int = 300
    batch_size: int = 2
    seed: int = 0
    height: int = 64
    width: int = 64
    channels: tuple[int, ...] = (8, 16, 32, 64)
    blocks_per_level: tuple[int, ...] = (1, 1, 1, 1)
    state_dim: int = 8
    expand_ratio: float = 2.0
    blast_mode: str = "full"
    n_scenes: int = 50
    n_buildings: int = 6
    profile: str = "blast"
    charge_mass_kg: float = 500_000.0
    burst_height_m: float = 10.0
    meters_per_pixel: float = 30.0
    label_noise: float = 0.05

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be positive")
        if self.blast_mode not in BLAST_MODES:
            raise ConfigError(f"blast_mode must be one of {BLAST_MODES}")
        if self.profile not in ("blast", "multihazard"):
            raise ConfigError("profile must be 'blast' or 'multihazard'")
        if self.steps < 0 or self.batch_size < 1 or self.n_scenes < 1:
            raise ConfigError("steps, batch_size, n_scenes must be sensible")
        if self.charge_mass_kg <= 0 or self.meters_per_pixel <= 0 or self.burst_height_m < 0:
            raise ConfigError("blast scenario parameters out of range")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ConfigError("label_noise must lie in [0, 1]")

    def model_config(self, damage_classes: int) -> ModelConfig:
        try:
            return ModelConfig(
                height=self.height,
                width=self.width,
                channels=tuple(self.channels),
                blocks_per_level=tuple(self.blocks_per_level),
                state_dim=self.state_dim,
                expand_ratio=self.expand_ratio,
                damage_classes=damage_classes,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _parse_value(name: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        # tuple-of-int fields are written as comma-separated values
        return tuple(int(p) for p in raw.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse config value {name}={raw!r}") from None


def load_config_file(path, overrides: dict | None = None) -> RunConfig:
    """Read a flat key=value config file; `overrides` win over file values.

    Lines may be blank or start with '#'. Unknown keys are errors.
    """
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values: dict = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(p.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = line.split("=", 1)
            key = key.strip()
            if key not in fields:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            kind = {"channels": tuple, "blocks_per_level": tuple}.get(
                key, type(getattr(RunConfig(), key)))
            values[key] = _parse_value(key, kind, raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    return RunConfig(**values)


@dataclass
class SplitManifest:
    train: list[str] = field(default_factory=list)
    val: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"train": self.train, "val": self.val, "test": self.test},
                          sort_keys=True, indent=0)


def make_split(scene_ids: list[str]) -> SplitManifest:
    """3:1:1 split. Rounding rule: val and test each take n // 5 scenes
    (at least 1 when possible), training keeps the remainder."""
    ids = sorted(scene_ids)
    n = len(ids)
    n_val = max(n // 5, 1) if n >= 3 else 0
    n_test = n_val
    n_train = n - n_val - n_test
    return SplitManifest(
        train=ids[:n_train],
        val=ids[n_train : n_train + n_val],
        test=ids[n_train + n_val :],
    )


@dataclass
class SceneRecord:
    scene_id: str
    pre: np.ndarray
    post: np.ndarray
    mask: np.ndarray
    damage: np.ndarray
    blast: np.ndarray


def write_scene(scene_dir: Path, scene) -> None:
    scene_dir.mkdir(parents=True, exist_ok=True)
    write_ppm(scene_dir / "pre.ppm", scene.pre)
    write_ppm(scene_dir / "post.ppm", scene.post)
    write_pgm(scene_dir / "mask.pgm", scene.mask)
    write_pgm(scene_dir / "damage.pgm", scene.damage)
    write_bfr(scene_dir / "blast.bfr", scene.blast)


def read_scene(scene_dir: Path) -> SceneRecord:
    try:
        return SceneRecord(
            scene_id=scene_dir.name,
            pre=read_ppm(scene_dir / "pre.ppm"),
            post=read_ppm(scene_dir / "post.ppm"),
            mask=read_pgm(scene_dir / "mask.pgm"),
            damage=read_pgm(scene_dir / "damage.pgm"),
            blast=read_bfr(scene_dir / "blast.bfr"),
        )
    except (OSError, RasterError) as exc:
        raise DataError(f"cannot load scene {scene_dir}: {exc}") from None


def load_split(data_dir) -> SplitManifest:
    path = Path(data_dir) / "split.json"
    if not path.is_file():
        raise DataError(f"split manifest not found: {path}")
    d = json.loads(path.read_text())
    return SplitManifest(train=d["train"], val=d["val"], test=d["test"])


def load_scenes(data_dir, scene_ids: list[str]) -> list[SceneRecord]:
    base = Path(data_dir) / "scenes"
    return [read_scene(base / sid) for sid in scene_ids]


def apply_blast_mode(blast: np.ndarray, mode: str) -> np.ndarray:
    """Mode 'none' zeroes the whole raster; 'distance_only' keeps only the
    log-distance channel; 'full' passes all three channels through."""
    if mode not in BLAST_MODES:
        raise ConfigError(f"unknown blast mode {mode!r}")
    out = np.asarray(blast, dtype=np.float64).copy()
    if mode == "none":
        out[:] = 0.0
    elif mode == "distance_only":
        out[..., 0] = 0.0
        out[..., 1] = 0.0
    return out


# ---------------------------------------------------------------------------
# stages

def run_generate(cfg: RunConfig) -> Path:
    """Write n_scenes synthetic scenes plus the split manifest under out_dir."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    master = np.random.default_rng(cfg.seed)
    ids = []
    for i in range(cfg.n_scenes):
        scene_seed = int(master.integers(0, 2**31 - 1))
        # keep the epicenter on-image so every damage ring can intersect it
        epicenter = (
            float(master.uniform(0.05 * cfg.height, 0.95 * cfg.height)),
            float(master.uniform(0.05 * cfg.width, 0.95 * cfg.width)),
        )
        scenario = BlastScenario(
            charge_mass_kg=cfg.charge_mass_kg,
            burst_height_m=cfg.burst_height_m,
            epicenter=epicenter,
            meters_per_pixel=cfg.meters_per_pixel,
        )
        scene = generate_scene(
            scene_seed, cfg.height, cfg.width, scenario,
            n_buildings=cfg.n_buildings, profile=cfg.profile,
            label_noise=cfg.label_noise,
        )
        sid = f"scene_{i:04d}"
        write_scene(out / "scenes" / sid, scene)
        ids.append(sid)
    (out / "split.json").write_text(make_split(ids).to_json())
    return out


def _scene_loss(weights: ModelWeights, rec: SceneRecord, blast_mode: str) -> Tensor:
    pre = Tensor(rec.pre.astype(np.float64) / 255.0)
    post = Tensor(rec.post.astype(np.float64) / 255.0)
    blast = Tensor(apply_blast_mode(rec.blast, blast_mode))
    mask_logits, damage_logits = model_forward(pre, post, blast, weights)
    return multitask_loss(mask_logits, rec.mask, damage_logits, rec.damage)


def train_loop(weights: ModelWeights, scenes: list[SceneRecord], *, steps: int,
               batch_size: int, lr: float, seed: int, blast_mode: str,
               weight_decay: float = 0.01) -> list[float]:
    """Fixed-step AdamW training; returns the per-step loss history."""
    if not scenes:
        raise DataError("no training scenes")
    mc = weights.config
    for s in scenes:
        if s.pre.shape != (mc.height, mc.width, 3):
            raise DataError(
                f"scene {s.scene_id} is {s.pre.shape[0]}x{s.pre.shape[1]} but the "
                f"model expects {mc.height}x{mc.width}; set height/width to match")
    max_label = max(int(s.damage.max()) for s in scenes)
    if max_label >= mc.damage_classes:
        raise DataError(
            f"damage label {max_label} out of range for a "
            f"{mc.damage_classes}-class head")
    params = parameters(weights)
    state = init_adamw(params)
    rng = np.random.default_rng(seed)
    history: list[float] = []
    for step in range(steps):
        idx = rng.integers(0, len(scenes), size=batch_size)
        try:
            with Tape() as tape:
                total = None
                for i in idx:
                    item = _scene_loss(weights, scenes[i], blast_mode)
                    total = item if total is None else T.add(total, item)
                loss = T.mul(total, T.scalar(1.0 / batch_size))
            backward(tape, loss)
        except FloatingPointError as exc:
            raise TrainingDiverged(
                f"non-finite values at step {step} (last finite loss "
                f"{history[-1] if history else 'n/a'}): {exc}") from None
        adamw_step(params, state, lr=lr, weight_decay=weight_decay)
        zero_grads(weights)
        history.append(loss.item())
    return history


def _write_history(path: Path, history: list[float]) -> None:
    lines = ["step,loss"] + [f"{i},{v:.17g}" for i, v in enumerate(history)]
    path.write_text("\n".join(lines) + "\n")


def _checkpoint_out(cfg: RunConfig, stage: str) -> Path:
    if cfg.checkpoint_out:
        return Path(cfg.checkpoint_out)
    return Path(cfg.out_dir) / f"{stage}.ckpt"


def run_pretrain(cfg: RunConfig) -> Path:
    """Stage 1: train from scratch on the broad-taxonomy dataset.

    The pre-training corpus has no blast events, so the blast input is
    forced to zero and the damage head uses the broad five-class taxonomy.
    """
    split = load_split(cfg.data_dir)
    scenes = load_scenes(cfg.data_dir, split.train)
    weights = init_weights(cfg.model_config(PRETRAIN_CLASSES), seed=cfg.seed)
    lr = cfg.learning_rate or PRETRAIN_LR
    history = train_loop(weights, scenes, steps=cfg.steps, batch_size=cfg.batch_size,
                         lr=lr, seed=cfg.seed, blast_mode="none",
                         weight_decay=cfg.weight_decay)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = _checkpoint_out(cfg, "pretrain")
    save_checkpoint(ckpt, weights)
    _write_history(out / "pretrain_loss.csv", history)
    return ckpt


def run_finetune(cfg: RunConfig) -> Path:
    """Stage 2: adapt a pre-trained checkpoint to the blast target task."""
    if not cfg.checkpoint_in or not Path(cfg.checkpoint_in).is_file():
        raise DataError(f"pretrain checkpoint not found: {cfg.checkpoint_in!r}")
    split = load_split(cfg.data_dir)
    scenes = load_scenes(cfg.data_dir, split.train)
    weights = swap_head(load_checkpoint(cfg.checkpoint_in), FINETUNE_CLASSES, seed=cfg.seed)
    lr = cfg.learning_rate or FINETUNE_LR
    started = time.perf_counter()
    history = train_loop(weights, scenes, steps=cfg.steps, batch_size=cfg.batch_size,
                         lr=lr, seed=cfg.seed, blast_mode=cfg.blast_mode,
                         weight_decay=cfg.weight_decay)
    elapsed = time.perf_counter() - started
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = _checkpoint_out(cfg, "finetune")
    save_checkpoint(ckpt, weights)
    _write_history(out / "finetune_loss.csv", history)
    # informational only; wall-clock is machine-dependent
    (out / "finetune_time.txt").write_text(f"{elapsed:.2f} s\n")
    return ckpt


def predictor(weights: ModelWeights, blast_mode: str):
    """Wrap frozen weights as scene -> predicted damage-class map."""

    def predict(rec) -> np.ndarray:
        pre = Tensor(np.asarray(rec.pre, dtype=np.float64) / 255.0)
        post = Tensor(np.asarray(rec.post, dtype=np.float64) / 255.0)
        blast = Tensor(apply_blast_mode(rec.blast, blast_mode))
        _, damage_logits = model_forward(pre, post, blast, weights)
        return classify(damage_logits)

    return predict


def run_evaluate(cfg: RunConfig) -> MetricsReport:
    """Score the test split; writes metrics.json plus per-scene prediction maps."""
    if not cfg.checkpoint_in or not Path(cfg.checkpoint_in).is_file():
        raise DataError(f"checkpoint not found: {cfg.checkpoint_in!r}")
    weights = load_checkpoint(cfg.checkpoint_in)
    split = load_split(cfg.data_dir)
    scenes = load_scenes(cfg.data_dir, split.test)
    if not scenes:
        raise DataError("test split is empty")
    predict = predictor(weights, cfg.blast_mode)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def predict_and_save(rec):
        pred = predict(rec)
        write_pgm(out / f"pred_{rec.scene_id}.pgm", pred.astype(np.uint8))
        return pred

    report = evaluate_dataset(predict_and_save, scenes)
    (out / "metrics.json").write_text(report.to_json() + "\n")
    return report


def colorize(damage_map: np.ndarray) -> np.ndarray:
    """Fixed palette overlay: background black, intact green, damaged yellow,
    destroyed red."""
    out = np.zeros(damage_map.shape + (3,), dtype=np.uint8)
    for cls, color in PALETTE.items():
        out[damage_map == cls] = color
    return out


def run_predict(cfg: RunConfig, pre_path, post_path, blast_path) -> dict[str, Path]:
    """Run one scene through a fine-tuned checkpoint; writes the building
    mask, the damage map, and a color-coded overlay."""
    if not cfg.checkpoint_in or not Path(cfg.checkpoint_in).is_file():
        raise DataError(f"checkpoint not found: {cfg.checkpoint_in!r}")
    weights = load_checkpoint(cfg.checkpoint_in)
    mc = weights.config
    if mc.damage_classes != FINETUNE_CLASSES:
        raise DataError("predict requires a 4-class (fine-tuned) damage head")
    try:
        pre = read_ppm(pre_path)
        post = read_ppm(post_path)
        blast = read_bfr(blast_path)
    except (OSError, RasterError) as exc:
        raise DataError(str(exc)) from None
    expected = (mc.height, mc.width)
    for name, arr, want in (("pre", pre, expected + (3,)),
                            ("post", post, expected + (3,)),
                            ("blast", blast, expected + (3,))):
        if arr.shape != want:
            raise DataError(f"{name} raster has shape {arr.shape}; the model "
                            f"expects {want[0]}x{want[1]}x{want[2]}")
    mask_logits, damage_logits = model_forward(
        Tensor(pre.astype(np.float64) / 255.0),
        Tensor(post.astype(np.float64) / 255.0),
        Tensor(apply_blast_mode(blast, cfg.blast_mode)),
        weights,
    )
    mask_pred = classify(mask_logits).astype(np.uint8)
    damage_pred = classify(damage_logits).astype(np.uint8)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "mask": out / "mask.pgm",
        "damage": out / "damage.pgm",
        "overlay": out / "overlay.ppm",
    }
    write_pgm(paths["mask"], mask_pred)
    write_pgm(paths["damage"], damage_pred)
    write_ppm(paths["overlay"], colorize(damage_pred))
    return paths

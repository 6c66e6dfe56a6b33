"""Multi-task loss and the building-damage evaluation protocol.

Scoring follows the xView2-style split: localization F1 is a pixel-level
binary F1 on the building class over all pixels (predicted buildings are
any nonzero damage class); classification F1 is the harmonic mean of the
per-damage-class F1s computed over pixels inside true building footprints,
with zero scores floored at a small epsilon; the overall score blends the
two as 0.3 * loc + 0.7 * clf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "F1_EPS",
    "LOC_WEIGHT",
    "CLF_WEIGHT",
    "ConfusionMatrix",
    "MetricsReport",
    "multitask_loss",
    "f1_from_counts",
    "f1_loc",
    "per_class_f1",
    "f1_clf",
    "f1_overall",
    "evaluate_dataset",
]

F1_EPS = 1e-6
LOC_WEIGHT = 0.3
CLF_WEIGHT = 0.7


class ConfusionMatrix:
    """Integer count matrix, rows = truth, cols = prediction; class 0 = background."""

    def __init__(self, n_classes: int):
        if n_classes < 2:
            raise ValueError("need at least two classes")
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    def add(self, truth: np.ndarray, pred: np.ndarray) -> None:
        truth = np.asarray(truth).ravel()
        pred = np.asarray(pred).ravel()
        if truth.shape != pred.shape:
            raise ValueError("truth and prediction sizes differ")
        n = self.n_classes
        if truth.size:
            flat = truth.astype(np.int64) * n + pred.astype(np.int64)
            self.counts += np.bincount(flat, minlength=n * n).reshape(n, n)

    def merge(self, other: "ConfusionMatrix") -> None:
        self.counts += other.counts

    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricsReport:
    """All scores are percentages in [0, 100]."""

    f1_loc: float
    f1_clf: float
    f1_overall: float
    per_class_f1: tuple[float, float, float]   # intact, damaged, destroyed

    def to_json(self) -> str:
        """Flat JSON with fixed keys, two decimal places, stable byte layout."""
        intact, damaged, destroyed = self.per_class_f1
        pairs = [
            ("f1_clf", self.f1_clf),
            ("f1_damaged", damaged),
            ("f1_destroyed", destroyed),
            ("f1_intact", intact),
            ("f1_loc", self.f1_loc),
            ("f1_overall", self.f1_overall),
        ]
        body = ", ".join(f'"{k}": {v:.2f}' for k, v in pairs)
        return "{" + body + "}"


def multitask_loss(mask_logits: Tensor, mask_labels: np.ndarray,
                   damage_logits: Tensor, damage_labels: np.ndarray) -> Tensor:
    """Unweighted sum of the two pixel-wise cross-entropies."""
    h, w, n_mask = mask_logits.shape
    t = damage_logits.shape[2]
    mask_labels = np.asarray(mask_labels, dtype=np.int64).reshape(-1)
    damage_labels = np.asarray(damage_labels, dtype=np.int64).reshape(-1)
    loss_mask = T.softmax_cross_entropy(T.reshape(mask_logits, (h * w, n_mask)), mask_labels)
    loss_damage = T.softmax_cross_entropy(
        T.reshape(damage_logits, (h * w, t)), damage_labels)
    return T.add(loss_mask, loss_damage)


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    """100 * 2tp / (2tp + fp + fn); zero when the denominator is zero."""
    if tp < 0 or fp < 0 or fn < 0:
        raise ValueError("counts must be nonnegative")
    denom = 2 * tp + fp + fn
    return 100.0 * 2.0 * tp / denom if denom else 0.0


def f1_loc(pred_building: np.ndarray, true_building: np.ndarray) -> float:
    """Pixel-level binary F1 on the building class."""
    pred_building = np.asarray(pred_building).astype(bool)
    true_building = np.asarray(true_building).astype(bool)
    if pred_building.shape != true_building.shape:
        raise ValueError("prediction and truth shapes differ")
    tp = int(np.sum(pred_building & true_building))
    fp = int(np.sum(pred_building & ~true_building))
    fn = int(np.sum(~pred_building & true_building))
    return f1_from_counts(tp, fp, fn)


def per_class_f1(cm: ConfusionMatrix, cls: int) -> float:
    tp = int(cm.counts[cls, cls])
    fp = int(cm.counts[:, cls].sum() - tp)
    fn = int(cm.counts[cls, :].sum() - tp)
    return f1_from_counts(tp, fp, fn)


def f1_clf(cm: ConfusionMatrix, eps: float = F1_EPS) -> float:
    """Harmonic mean of the damage-class F1s (background excluded).

    Zero per-class scores are floored at `eps` so the mean stays finite.
    """
    n_damage = cm.n_classes - 1
    if n_damage < 1:
        raise ValueError("no damage classes to score")
    scores = [max(per_class_f1(cm, c), eps) for c in range(1, cm.n_classes)]
    return n_damage / sum(1.0 / s for s in scores)


def f1_overall(loc: float, clf: float) -> float:
    if not (0.0 <= loc <= 100.0 and 0.0 <= clf <= 100.0):
        raise ValueError("scores must lie in [0, 100]")
    return LOC_WEIGHT * loc + CLF_WEIGHT * clf


def evaluate_dataset(predict_fn, scenes) -> MetricsReport:
    """Accumulate one global confusion matrix over all scenes, then score.

    `predict_fn(scene)` returns the predicted (H, W) damage-class map; the
    scene provides `.mask` (binary building truth) and `.damage` (class
    truth). Scene order does not affect the result.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no scenes to evaluate")
    predictions = [np.asarray(predict_fn(scene)) for scene in scenes]
    n_classes = 2
    for scene, pred in zip(scenes, predictions):
        if pred.shape != np.asarray(scene.mask).shape:
            raise ValueError("prediction and scene shapes differ")
        n_classes = max(n_classes, int(np.asarray(scene.damage).max()) + 1, int(pred.max()) + 1)
    cm = ConfusionMatrix(n_classes)
    loc_tp = loc_fp = loc_fn = 0
    for scene, pred in zip(scenes, predictions):
        truth_mask = np.asarray(scene.mask).astype(bool)
        truth_damage = np.asarray(scene.damage).astype(np.int64)
        pred_building = pred > 0
        loc_tp += int(np.sum(pred_building & truth_mask))
        loc_fp += int(np.sum(pred_building & ~truth_mask))
        loc_fn += int(np.sum(~pred_building & truth_mask))
        cm.add(truth_damage[truth_mask], pred[truth_mask])

    loc = f1_from_counts(loc_tp, loc_fp, loc_fn)
    clf = f1_clf(cm)
    per_class = tuple(per_class_f1(cm, c) for c in range(1, min(cm.n_classes, 4)))
    while len(per_class) < 3:
        per_class = per_class + (0.0,)
    return MetricsReport(
        f1_loc=loc,
        f1_clf=clf,
        f1_overall=f1_overall(loc, clf),
        per_class_f1=per_class[:3],
    )

"""Repeatable desk-scale experiments.

The transfer study mirrors the two orderings the pipeline is built around:
fine-tuning from a pre-trained checkpoint should beat training from scratch
at equal step budgets, and enabling the full blast input should beat
running with it zeroed. Both are directional claims evaluated as medians
over seeds; no magnitude is asserted.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import evaluate_dataset
from .model import FINETUNE_CLASSES, init_weights, swap_head
from .pipeline import (
    RunConfig,
    load_scenes,
    load_split,
    predictor,
    run_generate,
    train_loop,
)

__all__ = ["TransferResult", "TransferSummary", "transfer_experiment"]


@dataclass
class TransferResult:
    seed: int
    finetuned_full: float
    finetuned_none: float
    scratch_none: float


@dataclass
class TransferSummary:
    results: list[TransferResult]

    def median(self, attr: str) -> float:
        return float(np.median([getattr(r, attr) for r in self.results]))

    def table(self) -> str:
        lines = [f"{'seed':>6} {'ft_full':>9} {'ft_none':>9} {'scratch':>9}"]
        for r in self.results:
            lines.append(f"{r.seed:>6} {r.finetuned_full:>9.2f} "
                         f"{r.finetuned_none:>9.2f} {r.scratch_none:>9.2f}")
        lines.append(f"{'median':>6} {self.median('finetuned_full'):>9.2f} "
                     f"{self.median('finetuned_none'):>9.2f} "
                     f"{self.median('scratch_none'):>9.2f}")
        return "\n".join(lines)


def _evaluate(weights, scenes, blast_mode: str) -> float:
    return evaluate_dataset(predictor(weights, blast_mode), scenes).f1_overall


def _all_scene_ids(data_dir) -> list[str]:
    split = load_split(data_dir)
    return sorted(split.train + split.val + split.test)


def transfer_experiment(
    work_dir,
    seeds=(0, 1, 2, 3, 4),
    *,
    size: int = 32,
    steps: int = 600,
    lr: float = 3e-3,
    train_scenes: int = 10,
    eval_scenes: int = 15,
    pretrain_scenes: int = 80,
    pretrain_steps: int = 800,
    verbose: bool = False,
) -> TransferSummary:
    """Run the transfer study at a small, fast configuration.

    One shared pre-training corpus and checkpoint feed all trials, and all
    arms score against one fixed held-out evaluation pool so that arm
    differences are not drowned by evaluation noise. Per seed, a fresh blast
    training set is generated and three models are trained with the same
    step budget and learning rate -- fine-tuned with the full blast input,
    fine-tuned with it zeroed, and from-scratch with it zeroed. The regime
    is deliberately few-shot and short-budget: that is where a reusable
    foundation and a physical prior are supposed to pay off.
    """
    work = Path(work_dir)
    base = dataclasses.replace(
        RunConfig(),
        height=size,
        width=size,
        channels=(4, 8, 16, 32),
        state_dim=4,
        meters_per_pixel=60.0,
        n_buildings=8,
        steps=steps,
    )

    pre_cfg = dataclasses.replace(
        base, profile="multihazard", seed=999, n_scenes=pretrain_scenes,
        data_dir=str(work / "pretrain_data"), out_dir=str(work / "pretrain_data"),
    )
    run_generate(pre_cfg)
    pre_scenes = load_scenes(pre_cfg.data_dir, _all_scene_ids(pre_cfg.data_dir))
    foundation = init_weights(base.model_config(5), seed=999)
    train_loop(foundation, pre_scenes, steps=pretrain_steps, batch_size=base.batch_size,
               lr=lr, seed=999, blast_mode="none")
    foundation_path = work / "foundation.ckpt"
    save_checkpoint(foundation_path, foundation)

    eval_cfg = dataclasses.replace(
        base, profile="blast", seed=7777, n_scenes=eval_scenes,
        data_dir=str(work / "eval_data"), out_dir=str(work / "eval_data"),
    )
    run_generate(eval_cfg)
    test_scenes = load_scenes(eval_cfg.data_dir, _all_scene_ids(eval_cfg.data_dir))

    results = []
    for seed in seeds:
        data_cfg = dataclasses.replace(
            base, profile="blast", seed=seed, n_scenes=train_scenes,
            data_dir=str(work / f"blast_data_{seed}"),
            out_dir=str(work / f"blast_data_{seed}"),
        )
        run_generate(data_cfg)
        train_pool = load_scenes(data_cfg.data_dir, _all_scene_ids(data_cfg.data_dir))

        def tuned(blast_mode: str):
            w = swap_head(load_checkpoint(foundation_path), FINETUNE_CLASSES, seed=seed)
            train_loop(w, train_pool, steps=steps, batch_size=base.batch_size,
                       lr=lr, seed=seed, blast_mode=blast_mode)
            return w

        scratch = init_weights(base.model_config(FINETUNE_CLASSES), seed=seed)
        train_loop(scratch, train_pool, steps=steps, batch_size=base.batch_size,
                   lr=lr, seed=seed, blast_mode="none")

        result = TransferResult(
            seed=seed,
            finetuned_full=_evaluate(tuned("full"), test_scenes, "full"),
            finetuned_none=_evaluate(tuned("none"), test_scenes, "none"),
            scratch_none=_evaluate(scratch, test_scenes, "none"),
        )
        results.append(result)
        if verbose:
            print(f"seed {seed}: ft_full={result.finetuned_full:.2f} "
                  f"ft_none={result.finetuned_none:.2f} scratch={result.scratch_none:.2f}",
                  flush=True)
    return TransferSummary(results=results)

"""Command-line entry point.

Subcommands: generate | pretrain | finetune | evaluate | predict. Options
come from an optional flat key=value config file (--config); flags override
file values, and the BM_SEED environment variable overrides the seed last.
Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import os
import sys

from .pipeline import (
    BLAST_MODES,
    ConfigError,
    DataError,
    TrainingDiverged,
    load_config_file,
    run_evaluate,
    run_finetune,
    run_generate,
    run_predict,
    run_pretrain,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default="", help="flat key=value config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--height", type=int, default=None)
    parser.add_argument("--width", type=int, default=None)


def _train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", default=None, help="dataset directory")
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--batch-size", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blastsda",
        description="Synthetic blast-damage assessment pipeline",
    )
    sub = parser.add_subparsers(dest="stage", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--n-scenes", type=int, default=None)
    p.add_argument("--profile", choices=("blast", "multihazard"), default=None)

    p = sub.add_parser("pretrain", help="stage-1 training on broad synthetic scenes")
    _common(p)
    _train_flags(p)

    p = sub.add_parser("finetune", help="stage-2 adaptation with blast fusion")
    _common(p)
    _train_flags(p)
    p.add_argument("--ckpt", default=None, help="input (pre-trained) checkpoint")
    p.add_argument("--blast-mode", choices=BLAST_MODES, default=None)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    _common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--blast-mode", choices=BLAST_MODES, default=None)

    p = sub.add_parser("predict", help="run one scene through a checkpoint")
    _common(p)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--blast-mode", choices=BLAST_MODES, default=None)
    p.add_argument("--pre", required=True, help="pre-event image (PPM)")
    p.add_argument("--post", required=True, help="post-event image (PPM)")
    p.add_argument("--blast", required=True, help="blast loading raster (BFR)")

    return parser


_FLAG_TO_KEY = {
    "out": "out_dir",
    "data": "data_dir",
    "ckpt": "checkpoint_in",
    "lr": "learning_rate",
    "steps": "steps",
    "batch_size": "batch_size",
    "seed": "seed",
    "blast_mode": "blast_mode",
    "n_scenes": "n_scenes",
    "profile": "profile",
    "height": "height",
    "width": "width",
}


def _config_from_args(args: argparse.Namespace):
    overrides = {}
    for flag, key in _FLAG_TO_KEY.items():
        if hasattr(args, flag) and getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    cfg = load_config_file(args.config, overrides)
    env_seed = os.environ.get("BM_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"BM_SEED must be an integer, got {env_seed!r}") from None
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.stage == "generate":
            out = run_generate(cfg)
            print(f"wrote {cfg.n_scenes} scenes to {out}")
        elif args.stage == "pretrain":
            ckpt = run_pretrain(cfg)
            print(f"pretrain checkpoint: {ckpt}")
        elif args.stage == "finetune":
            ckpt = run_finetune(cfg)
            print(f"finetune checkpoint: {ckpt}")
        elif args.stage == "evaluate":
            report = run_evaluate(cfg)
            print(report.to_json())
        elif args.stage == "predict":
            paths = run_predict(cfg, args.pre, args.post, args.blast)
            for name, path in paths.items():
                print(f"{name}: {path}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

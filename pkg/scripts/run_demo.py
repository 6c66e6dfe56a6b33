#!/usr/bin/env python3
"""End-to-end demo: generate data, pretrain, fine-tune with blast fusion,
evaluate, and predict one scene, all at a small fast configuration."""

import argparse
import tempfile
from pathlib import Path

from blastsda.cli import main as cli


def run(args: list[str]) -> None:
    print("+ blastsda " + " ".join(args))
    code = cli(args)
    if code != 0:
        raise SystemExit(code)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=None, help="working directory (default: temp)")
    parser.add_argument("--steps", type=int, default=120)
    parser.add_argument("--size", type=int, default=32)
    args = parser.parse_args()

    root = Path(args.out or tempfile.mkdtemp(prefix="blastsda_demo_"))
    size = [f"--height", str(args.size), "--width", str(args.size)]
    steps = str(args.steps)

    run(["generate", "--out", str(root / "pretrain_data"), "--seed", "1",
         "--n-scenes", "20", "--profile", "multihazard", *size])
    run(["generate", "--out", str(root / "blast_data"), "--seed", "2",
         "--n-scenes", "20", "--profile", "blast", *size])
    run(["pretrain", "--out", str(root / "pretrain"), "--data",
         str(root / "pretrain_data"), "--steps", steps, "--seed", "1", *size])
    run(["finetune", "--out", str(root / "finetune"), "--data", str(root / "blast_data"),
         "--ckpt", str(root / "pretrain" / "pretrain.ckpt"), "--steps", steps,
         "--seed", "2", "--blast-mode", "full", *size])
    run(["evaluate", "--out", str(root / "eval"), "--data", str(root / "blast_data"),
         "--ckpt", str(root / "finetune" / "finetune.ckpt"), "--blast-mode", "full", *size])
    scene = root / "blast_data" / "scenes" / "scene_0000"
    run(["predict", "--out", str(root / "prediction"),
         "--ckpt", str(root / "finetune" / "finetune.ckpt"), "--blast-mode", "full",
         "--pre", str(scene / "pre.ppm"), "--post", str(scene / "post.ppm"),
         "--blast", str(scene / "blast.bfr"), *size])
    print(f"\nartifacts under {root}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

#!/usr/bin/env python3
"""Run the pretrain-vs-scratch and blast-vs-no-blast transfer study.

Reports per-seed and median test F1_overall for three arms trained with
equal step budgets: fine-tuned with full blast input, fine-tuned with the
blast input zeroed, and trained from scratch.
"""

import argparse
import tempfile

from blastsda.experiments import transfer_experiment


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--work-dir", default=None,
                        help="where datasets/checkpoints go (default: temp dir)")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--size", type=int, default=32)
    parser.add_argument("--steps", type=int, default=300)
    args = parser.parse_args()

    work = args.work_dir or tempfile.mkdtemp(prefix="blastsda_transfer_")
    print(f"working under {work}")
    summary = transfer_experiment(work, seeds=tuple(args.seeds), size=args.size,
                                  steps=args.steps, verbose=True)
    print(summary.table())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

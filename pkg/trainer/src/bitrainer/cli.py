"""Training entry point.

    bibranch-train --config run.json [--dataset digits] [--out-dir out]

Config keys (JSON object or key=value lines): arch, dataset, data_dir,
out_dir, sigma, tau, lambda, epochs, stage1_frac, teacher_epochs, batch,
lr, seed. Trains the teacher, runs both distillation stages, evaluates,
and exports the weight archive the inference engine loads directly.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import torch

from .config import TrainConfig, load_config
from .data import IngestionError, prepare_dataset
from .distill import distill_stage1, distill_stage2, evaluate, evaluate_teacher, train_plain, train_teacher
from .export import export_weights
from .models import build_student, build_teacher


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="bibranch-train")
    ap.add_argument("--config", default=None, help="JSON or key=value config file")
    ap.add_argument("--arch", default=None)
    ap.add_argument("--dataset", default=None)
    ap.add_argument("--data-dir", default=None)
    ap.add_argument("--out-dir", default=None)
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--teacher-epochs", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--baseline", action="store_true",
                    help="also train a no-distillation student for comparison")
    args = ap.parse_args(argv)

    overrides = {k: v for k, v in (
        ("arch", args.arch), ("dataset", args.dataset), ("data_dir", args.data_dir),
        ("out_dir", args.out_dir), ("epochs", args.epochs),
        ("teacher_epochs", args.teacher_epochs), ("seed", args.seed),
    ) if v is not None}
    cfg = load_config(args.config, **overrides) if args.config else TrainConfig(**overrides)

    torch.manual_seed(cfg.seed)
    try:
        splits = prepare_dataset(cfg.dataset, cfg.data_dir, cfg.sigma, cfg.seed)
    except IngestionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3

    teacher = build_teacher(cfg.arch)
    history = train_teacher(teacher, splits, cfg)
    print(f"teacher: test accuracy {history[-1]:.4f} after {cfg.teacher_epochs} epochs")

    student = build_student(cfg.arch)
    s1 = max(1, math.floor(cfg.epochs * cfg.stage1_frac))
    s2 = max(1, cfg.epochs - s1)
    stage1 = distill_stage1(teacher, student, splits, cfg, s1)
    print(f"stage 1: representation loss {stage1[0]:.4f} -> {stage1[-1]:.4f} ({s1} epochs)")
    stage2 = distill_stage2(teacher, student, splits, cfg, s2)
    acc = evaluate(student, splits)
    print(f"stage 2: student test accuracy {acc:.4f} ({s2} epochs)")

    summary = {"teacher_acc": history[-1], "student_acc": acc,
               "stage1_loss": stage1, "stage2_acc": stage2, "config": cfg.to_dict()}
    if args.baseline:
        torch.manual_seed(cfg.seed)
        plain_student = build_student(cfg.arch)
        base = train_plain(plain_student, splits, cfg, cfg.epochs)
        summary["baseline_acc"] = base[-1]
        print(f"no-distillation baseline: test accuracy {base[-1]:.4f}")

    path = export_weights(student, cfg.out_dir, mean=splits.mean, std=splits.std,
                          teacher_tap=teacher.tap_index,
                          extra_meta={"dataset": cfg.dataset, "sigma": cfg.sigma,
                                      "seed": cfg.seed})
    with open(f"{path}/training.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    print(f"exported weight archive to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

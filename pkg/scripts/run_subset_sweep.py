#!/usr/bin/env python3
"""Sweep several channel subsets over one dataset and emit a combined report.

Runs the full cross-validated experiment once per subset, then writes:
  <out>/sweep.csv      one row per subset (subset, n_channels, fold1..k, mean)
  <out>/sweep.svg      box plot per subset, ordered by descending mean,
                       with the relevance threshold line
  <out>/<subset>.json  full per-subset report

Desk-scale example (synthetic data):
  python scripts/run_subset_sweep.py --data synth.eegp --subsets all,fp,af \
      --out sweep/ --image-size 64 --scales 64 --embed-dim 64 --depth 2 \
      --linformer-k 32 --lr 5e-4 --batch-size 8 --max-epochs 60
"""

import argparse
import os
import sys

from scalevit import model as vit
from scalevit.channels import resolve_subset
from scalevit.dataio import read_portable
from scalevit.reports import box_plot_svg, report_json
from scalevit.trials import FoldMode, make_folds
from scalevit.training import (
    LabelSource,
    PreprocessConfig,
    TrainConfig,
    relevance_threshold,
    run_experiment,
    select_channel_rows,
)
from scalevit.util import atomic_write_text


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", required=True)
    p.add_argument("--subsets", default="all",
                   help="comma-separated registry names")
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=["classify", "regress"], default="classify")
    p.add_argument("--labels", default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fold-mode", choices=[m.value for m in FoldMode],
                   default=FoldMode.RANDOM_TRIAL.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--scales", type=int, default=224)
    p.add_argument("--fmin", type=float, default=4.0)
    p.add_argument("--fmax", type=float, default=45.0)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--linformer-k", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--max-epochs", type=int, default=100)
    return p.parse_args()


def main():
    args = parse_args()
    dataset = read_portable(args.data)
    task = vit.Head.CLASSIFY4 if args.task == "classify" else vit.Head.REGRESS2
    if args.labels is None:
        labels = LabelSource.VAQ if task is vit.Head.CLASSIFY4 else LabelSource.SAM_CONTINUOUS
    else:
        labels = LabelSource(args.labels)
    pre = PreprocessConfig(f_min_hz=args.fmin, f_max_hz=args.fmax,
                           n_scales=args.scales, omega0=6.0,
                           image_height=args.image_size, image_width=args.image_size)
    folds = make_folds(dataset.trials, k=args.folds, seed=args.seed,
                       mode=FoldMode(args.fold_mode))
    os.makedirs(args.out, exist_ok=True)

    reports = []
    for name in args.subsets.split(","):
        subset = resolve_subset(name.strip())
        rows = select_channel_rows(dataset, subset)
        model_config = vit.make_config(
            n_channels=len(rows), image_hw=(args.image_size, args.image_size),
            patch_size=args.patch_size, embed_dim=args.embed_dim, depth=args.depth,
            n_heads=args.heads, linformer_k=args.linformer_k, head=task)
        print(f"== {subset.name} ({len(rows)} channels) ==", flush=True)
        report = run_experiment(
            dataset, subset, labels, task, folds,
            TrainConfig(lr=args.lr, batch_size=args.batch_size,
                        max_epochs=args.max_epochs, seed=args.seed),
            model_config, pre=pre, jobs=args.jobs)
        print(f"   mean {report.mean_metric:.4f} "
              f"(relevant: {'yes' if report.relevant else 'no'})", flush=True)
        atomic_write_text(os.path.join(args.out, f"{subset.name}.json"),
                          report_json(report))
        reports.append(report)

    classify = task is vit.Head.CLASSIFY4
    reports.sort(key=lambda r: -r.mean_metric if classify else r.mean_metric)
    header = (["subset", "n_channels"]
              + [f"fold{i + 1}" for i in range(args.folds)] + ["mean"])
    lines = [",".join(header)]
    for r in reports:
        lines.append(",".join(
            [r.subset_name, str(r.n_channels)]
            + [f"{f.metric:.6f}" for f in r.fold_results]
            + [f"{r.mean_metric:.6f}"]))
    atomic_write_text(os.path.join(args.out, "sweep.csv"), "\n".join(lines) + "\n")
    svg = box_plot_svg(
        [(r.subset_name, [f.metric for f in r.fold_results]) for r in reports],
        threshold=relevance_threshold(task), higher_is_better=classify,
        metric_name="accuracy" if classify else "rmse")
    atomic_write_text(os.path.join(args.out, "sweep.svg"), svg)
    print(f"wrote sweep.csv / sweep.svg to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

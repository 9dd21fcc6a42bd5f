"""Command-line entry point: synth, cwt-preview, pca, train, eval, report, subsets.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
All error text goes to standard error; no subcommand leaves partial output
files behind (writers go through atomic temp-file renames).

If a --data path does not exist, it is also tried relative to the
SCALEVIT_DATA_DIR environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import model as vit
from .channels import pca_rank_channels, registry_as_dict, resolve_subset
from .cwt import cwt_forward, pgm_bytes, rasterize, scale_grid, scaleogram
from .dataio import PortableDataset, SynthConfig, read_portable, synth_generate, write_portable
from .errors import DataError, NumericalError, PipelineError, UsageError
from .reports import report_from_json_dict, write_report_files
from .trials import FoldMode, make_folds, zscore_normalize
from .training import (
    LabelSource,
    PreprocessConfig,
    Scheduler,
    TrainConfig,
    build_inputs,
    classification_targets,
    evaluate_classification,
    evaluate_regression,
    regression_targets,
    run_experiment,
    select_channel_rows,
)
from .util import atomic_write_bytes

DATA_DIR_ENV = "SCALEVIT_DATA_DIR"


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage problems; we reserve 2 for data
    errors, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _resolve_data_path(path: str) -> str:
    if os.path.exists(path):
        return path
    base = os.environ.get(DATA_DIR_ENV)
    if base and not os.path.isabs(path):
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _load_dataset(path: str) -> PortableDataset:
    resolved = _resolve_data_path(path)
    try:
        return read_portable(resolved)
    except FileNotFoundError:
        raise DataError(f"no such data file: {path}")


def _add_pre_flags(p: argparse.ArgumentParser):
    p.add_argument("--scales", type=int, default=224, help="number of CWT scales")
    p.add_argument("--fmin", type=float, default=4.0, help="lowest grid frequency (Hz)")
    p.add_argument("--fmax", type=float, default=45.0, help="highest grid frequency (Hz)")
    p.add_argument("--omega0", type=float, default=6.0, help="Morlet center frequency")
    p.add_argument("--image-size", type=int, default=224,
                   help="square raster edge length fed to the model")


def _pre_from_args(args) -> PreprocessConfig:
    return PreprocessConfig(f_min_hz=args.fmin, f_max_hz=args.fmax,
                            n_scales=args.scales, omega0=args.omega0,
                            image_height=args.image_size, image_width=args.image_size)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scalevit",
                     description="Scaleogram + Linformer-ViT experiment engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--participants", type=int, default=4)
    p.add_argument("--videos", type=int, default=8)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--fs", type=float, default=128.0)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--noise-sigma", type=float, default=0.1)

    p = sub.add_parser("cwt-preview", help="write one scaleogram raster as PGM")
    p.add_argument("--data", required=True)
    p.add_argument("--trial", type=int, default=0, help="0-based trial index")
    p.add_argument("--channel", default="0", help="channel name or 0-based index")
    p.add_argument("--out", required=True)
    _add_pre_flags(p)

    p = sub.add_parser("pca", help="print the PCA channel ranking as CSV")
    p.add_argument("--data", required=True)

    sub.add_parser("subsets", help="dump the channel-subset registry as JSON")

    p = sub.add_parser("train", help="run the cross-validated experiment")
    p.add_argument("--data", required=True)
    p.add_argument("--subset", default="all")
    p.add_argument("--labels", choices=[s.value for s in LabelSource], default=None,
                   help="default: vaq for classify, sam-continuous for regress")
    p.add_argument("--task", choices=["classify", "regress"], default="classify")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fold-mode", choices=[m.value for m in FoldMode],
                   default=FoldMode.RANDOM_TRIAL.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory for the report")
    p.add_argument("--jobs", type=int, default=1, help="parallel fold workers")
    p.add_argument("--permute-labels-seed", type=int, default=None,
                   help="permute labels across trials (control experiment)")
    p.add_argument("--save-checkpoints", action="store_true",
                   help="write fold<i>.ckpt files next to the report")
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--linformer-k", type=int, default=64,
                   help="clamped to the token count when larger")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--scheduler", choices=[s.value for s in Scheduler],
                   default=Scheduler.COSINE.value)
    p.add_argument("--huber-delta", type=float, default=1.0)
    p.add_argument("--validation-fraction", type=float, default=0.0,
                   help="monitor early stopping on an inner split of the "
                        "training trials instead of the test fold")
    _add_pre_flags(p)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", type=int, default=64)

    p = sub.add_parser("report", help="regenerate report.csv/boxplot.svg from report.json")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    return parser


def _cmd_synth(args) -> int:
    config = SynthConfig(n_participants=args.participants, n_videos=args.videos,
                         n_channels=args.channels, fs_hz=args.fs,
                         duration_s=args.duration, noise_sigma=args.noise_sigma,
                         seed=args.seed)
    dataset = synth_generate(config)
    write_portable(dataset, args.out)
    print(f"wrote {len(dataset)} trials x {dataset.n_channels} channels "
          f"x {dataset.n_samples} samples to {args.out}")
    return 0


def _cmd_cwt_preview(args) -> int:
    dataset = _load_dataset(args.data)
    if not 0 <= args.trial < len(dataset):
        raise UsageError(f"trial index {args.trial} outside 0..{len(dataset) - 1}")
    trial = dataset.records[args.trial].trial
    names_lower = [n.lower() for n in trial.channel_names]
    if args.channel.lower() in names_lower:
        row = names_lower.index(args.channel.lower())
    else:
        try:
            row = int(args.channel)
        except ValueError:
            raise UsageError(f"unknown channel {args.channel!r}")
        if not 0 <= row < trial.n_channels:
            raise UsageError(f"channel index {row} outside 0..{trial.n_channels - 1}")
    pre = _pre_from_args(args)
    grid = scale_grid(pre.f_min_hz, pre.f_max_hz, pre.n_scales,
                      trial.sample_rate_hz, pre.omega0)
    coeffs = cwt_forward(zscore_normalize(trial.samples[row]), grid)
    image = rasterize(scaleogram(coeffs, grid, trial.channel_names[row]),
                      pre.image_height, pre.image_width)
    atomic_write_bytes(args.out, pgm_bytes(image))
    print(f"wrote {image.width}x{image.height} PGM to {args.out}")
    return 0


def _cmd_pca(args) -> int:
    dataset = _load_dataset(args.data)
    ranking = pca_rank_channels(dataset.trials)
    print("rank,channel_index,channel_name,score,cumulative")
    for rank, ((idx, score), cum, name) in enumerate(
            zip(ranking.entries, ranking.cumulative, ranking.channel_names), start=1):
        print(f"{rank},{idx},{name},{score:.6f},{cum:.6f}")
    return 0


def _cmd_subsets(_args) -> int:
    print(json.dumps(registry_as_dict(), indent=2))
    return 0


def _permuted_records(dataset: PortableDataset, seed: int) -> PortableDataset:
    """Shuffle label assignments across trials (signals stay in place)."""
    from .dataio import TrialRecord

    perm = np.random.default_rng(seed).permutation(len(dataset))
    records = tuple(TrialRecord(trial=rec.trial, labels=dataset.records[j].labels)
                    for rec, j in zip(dataset.records, perm))
    return PortableDataset(records=records, source=dataset.source)


def _cmd_train(args) -> int:
    dataset = _load_dataset(args.data)
    if args.permute_labels_seed is not None:
        dataset = _permuted_records(dataset, args.permute_labels_seed)
    subset = resolve_subset(args.subset)
    task = vit.Head.CLASSIFY4 if args.task == "classify" else vit.Head.REGRESS2
    if args.labels is None:
        label_source = (LabelSource.VAQ if task is vit.Head.CLASSIFY4
                        else LabelSource.SAM_CONTINUOUS)
    else:
        label_source = LabelSource(args.labels)
    pre = _pre_from_args(args)
    rows = select_channel_rows(dataset, subset)
    model_config = vit.make_config(
        n_channels=len(rows), image_hw=(pre.image_height, pre.image_width),
        patch_size=args.patch_size, embed_dim=args.embed_dim, depth=args.depth,
        n_heads=args.heads, linformer_k=args.linformer_k, head=task,
        dropout_rate=args.dropout)
    train_config = TrainConfig(
        lr=args.lr, scheduler=Scheduler(args.scheduler), batch_size=args.batch_size,
        max_epochs=args.max_epochs, patience=args.patience, seed=args.seed,
        huber_delta=args.huber_delta, validation_fraction=args.validation_fraction)
    folds = make_folds(dataset.trials, k=args.folds, seed=args.seed,
                       mode=FoldMode(args.fold_mode))
    print(f"model: {vit.n_parameters(model_config)} parameters "
          f"({model_config.seq_len} tokens, k={model_config.linformer_k})",
          file=sys.stderr)

    hooks = None
    if args.save_checkpoints:
        os.makedirs(args.out, exist_ok=True)
        meta = {"pipeline": pre.to_json_dict(),
                "subset": subset.name, "labels": label_source.value}

        def hooks(fold_index, params):
            vit.save_checkpoint(os.path.join(args.out, f"fold{fold_index}.ckpt"),
                                params, extra_meta=meta)

    report = run_experiment(dataset, subset, label_source, task, folds,
                            train_config, model_config, pre=pre, jobs=args.jobs,
                            checkpoint_hook=hooks)
    write_report_files(args.out, report)
    metric = "accuracy" if task is vit.Head.CLASSIFY4 else "rmse"
    print(f"mean {metric}: {report.mean_metric:.4f} "
          f"(relevant: {'yes' if report.relevant else 'no'}); report in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    params, meta = vit.load_checkpoint(_resolve_data_path(args.model))
    dataset = _load_dataset(args.data)
    pre = PreprocessConfig.from_json_dict(meta["pipeline"])
    subset = resolve_subset(meta["subset"])
    label_source = LabelSource(meta["labels"])
    rows = select_channel_rows(dataset, subset)
    inputs = build_inputs(dataset.records, rows, pre)
    task = params.config.head
    if task is vit.Head.CLASSIFY4:
        targets = classification_targets(dataset.records, label_source)
        value = evaluate_classification(params, inputs, targets, args.batch_size)
        metric = "accuracy"
    else:
        targets = regression_targets(dataset.records)
        value = evaluate_regression(params, inputs, targets, args.batch_size)
        metric = "rmse"
    print(json.dumps({"metric": metric, "value": value, "n_trials": len(dataset),
                      "subset": subset.name, "labels": label_source.value,
                      "n_parameters": params.n_parameters()}, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    try:
        with open(_resolve_data_path(args.in_path), "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise DataError(f"no such report: {args.in_path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"not a report.json: {exc}")
    report = report_from_json_dict(payload)
    write_report_files(args.out, report)
    print(f"regenerated report files in {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "cwt-preview": _cmd_cwt_preview,
    "pca": _cmd_pca,
    "subsets": _cmd_subsets,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"scalevit {args.command}: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"scalevit {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"scalevit {args.command}: data error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"scalevit {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

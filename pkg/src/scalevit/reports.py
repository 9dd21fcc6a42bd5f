"""Experiment report serialization: JSON, table-style CSV, and box-plot SVG."""

from __future__ import annotations

import json
import os

import numpy as np

from . import model as vit
from .training import ExperimentReport, relevance_threshold
from .util import atomic_write_text


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"


def report_csv(report: ExperimentReport) -> str:
    """One row per experiment: subset, n_channels, fold1..foldk, mean."""
    header = ["subset", "n_channels"] + [f"fold{i + 1}" for i in range(report.k)] + ["mean"]
    row = [report.subset_name, str(report.n_channels)]
    row += [f"{f.metric:.6f}" for f in report.fold_results]
    row += [f"{report.mean_metric:.6f}"]
    return ",".join(header) + "\n" + ",".join(row) + "\n"


def _quartiles(values: np.ndarray):
    return (float(values.min()),
            float(np.percentile(values, 25)),
            float(np.percentile(values, 50)),
            float(np.percentile(values, 75)),
            float(values.max()))


def box_plot_svg(groups, threshold: float, higher_is_better: bool = True,
                 metric_name: str = "accuracy") -> str:
    """Box plot (whiskers, quartile box, median, mean dot) per group with a
    dashed line at the relevance threshold. Groups are drawn in the given
    order; labels carry the mean.
    """
    groups = [(label, np.asarray(vals, dtype=np.float64)) for label, vals in groups]
    if not groups:
        raise ValueError("no groups to plot")
    lo = min(min(v.min() for _, v in groups), threshold)
    hi = max(max(v.max() for _, v in groups), threshold)
    pad = 0.08 * (hi - lo) if hi > lo else max(0.1, 0.1 * abs(hi))
    lo, hi = lo - pad, hi + pad

    box_w, gap, left, top, plot_h = 46, 34, 64, 20, 300
    width = left + len(groups) * (box_w + gap) + 20
    height = top + plot_h + 64

    def y(v: float) -> float:
        return top + plot_h * (hi - v) / (hi - lo)

    def line(x1, y1, x2, y2, style: str) -> str:
        return (f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                f'{style}/>')

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    axis = 'stroke="#333" stroke-width="1"'
    out.append(line(left - 10, top, left - 10, top + plot_h, axis))
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = lo + frac * (hi - lo)
        yy = y(v)
        out.append(line(left - 14, yy, left - 10, yy, axis))
        out.append(f'<text x="{left - 18:.2f}" y="{yy + 4:.2f}" font-size="11" '
                   f'text-anchor="end" font-family="sans-serif">{v:.2f}</text>')
    ty = y(threshold)
    out.append(line(left - 10, ty, width - 10, ty,
                    'stroke="#cc2222" stroke-width="1" stroke-dasharray="6,4"'))
    thin = 'stroke="#222" stroke-width="1"'
    for i, (label, vals) in enumerate(groups):
        vmin, q1, med, q3, vmax = _quartiles(vals)
        mean = float(vals.mean())
        cx = left + i * (box_w + gap) + box_w / 2
        x0, x1 = cx - box_w / 2, cx + box_w / 2
        out.append(line(cx, y(vmin), cx, y(q1), thin))
        out.append(line(cx, y(q3), cx, y(vmax), thin))
        out.append(line(cx - box_w / 4, y(vmin), cx + box_w / 4, y(vmin), thin))
        out.append(line(cx - box_w / 4, y(vmax), cx + box_w / 4, y(vmax), thin))
        out.append(f'<rect x="{x0:.2f}" y="{y(q3):.2f}" width="{box_w:.2f}" '
                   f'height="{max(y(q1) - y(q3), 0.5):.2f}" fill="#9ecae1" '
                   f'stroke="#222" stroke-width="1"/>')
        out.append(line(x0, y(med), x1, y(med), 'stroke="#08306b" stroke-width="2"'))
        out.append(f'<circle cx="{cx:.2f}" cy="{y(mean):.2f}" r="3" fill="#cc2222"/>')
        out.append(f'<text x="{cx:.2f}" y="{top + plot_h + 18:.2f}" font-size="11" '
                   f'text-anchor="middle" font-family="sans-serif">{label}</text>')
        out.append(f'<text x="{cx:.2f}" y="{top + plot_h + 34:.2f}" font-size="11" '
                   f'text-anchor="middle" font-family="sans-serif">'
                   f'&#216; {mean:.4f}</text>')
    arrow = "higher is better" if higher_is_better else "lower is better"
    out.append(f'<text x="{left - 10}" y="{top + plot_h + 54}" font-size="11" '
               f'font-family="sans-serif">{metric_name} ({arrow}); dashed line = '
               f'relevance threshold {threshold:g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report_boxplot_svg(report: ExperimentReport) -> str:
    values = [f.metric for f in report.fold_results]
    classify = report.task is vit.Head.CLASSIFY4
    return box_plot_svg([(report.subset_name, values)],
                        threshold=relevance_threshold(report.task),
                        higher_is_better=classify,
                        metric_name="accuracy" if classify else "rmse")


def write_report_files(out_dir, report: ExperimentReport):
    """Write report.json, report.csv, and boxplot.svg (each atomically)."""
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(os.path.join(out_dir, "report.json"), report_json(report))
    atomic_write_text(os.path.join(out_dir, "report.csv"), report_csv(report))
    atomic_write_text(os.path.join(out_dir, "boxplot.svg"), report_boxplot_svg(report))


def report_from_json_dict(d: dict) -> ExperimentReport:
    from .training import FoldResult, LabelSource

    folds = tuple(FoldResult(fold_index=f["fold_index"], metric=f["metric"],
                             history=tuple(tuple(h) for h in f["history"]),
                             stopped_epoch=f["stopped_epoch"], best_epoch=f["best_epoch"])
                  for f in d["folds"])
    return ExperimentReport(
        subset_name=d["subset"], n_channels=int(d["n_channels"]),
        label_source=LabelSource(d["labels"]), task=vit.Head(d["task"]),
        k=int(d["k"]), seed=int(d["seed"]), fold_mode=d["fold_mode"],
        fold_of=tuple(int(x) for x in d["fold_of"]), fold_results=folds,
        mean_metric=float(d["mean_metric"]), relevant=bool(d["relevant"]),
        n_parameters=int(d["n_parameters"]))

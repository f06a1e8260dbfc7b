"""Render a cross-validation report to CSV and figures.

The CLI writes these next to the JSON report: a delimited per-fold metrics
table, a bar chart of per-fold metrics with the mean +- std panel, and the
training-loss curves.
"""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiment import CVReport

METRIC_NAMES = ("accuracy", "sensitivity", "specificity")
METRIC_COLORS = {"accuracy": "#6FA3D3", "sensitivity": "#EB8673", "specificity": "#95C78E"}


def write_report_csv(path, report: CVReport) -> None:
    """Per-fold metric rows plus a mean/std summary row."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["fold", "test_subjects", "tp", "fp", "tn", "fn",
                         "accuracy", "sensitivity", "specificity"])
        for fold in report.folds:
            m = fold.metrics
            writer.writerow([
                fold.fold, " ".join(fold.test_subjects),
                m.tp, m.fp, m.tn, m.fn,
                f"{m.accuracy:.6f}",
                "" if m.sensitivity is None else f"{m.sensitivity:.6f}",
                "" if m.specificity is None else f"{m.specificity:.6f}",
            ])
        mean_row, std_row = ["mean", "", "", "", "", ""], ["std", "", "", "", "", ""]
        for name in METRIC_NAMES:
            stats = report.summary[name]
            mean_row.append("" if stats["mean"] is None else f"{stats['mean']:.6f}")
            std_row.append("" if stats["std"] is None else f"{stats['std']:.6f}")
        writer.writerow(mean_row)
        writer.writerow(std_row)


def render_report_figures(report: CVReport, out_prefix) -> list:
    """Write ``<prefix>_metrics.png`` and ``<prefix>_loss.png``."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, (ax_folds, ax_mean) = plt.subplots(1, 2, figsize=(12, 4.5))
    x = np.arange(len(report.folds))
    width = 0.25
    for offset, name in enumerate(METRIC_NAMES):
        values = [getattr(f.metrics, name) for f in report.folds]
        values = [np.nan if v is None else 100.0 * v for v in values]
        ax_folds.bar(x + offset * width, values, width,
                     label=name, color=METRIC_COLORS[name], alpha=0.9)
    ax_folds.set_xlabel("fold")
    ax_folds.set_ylabel("value (%)")
    ax_folds.set_title("epoch-level metrics per fold")
    ax_folds.set_xticks(x + width)
    ax_folds.set_xticklabels([str(f.fold) for f in report.folds])
    ax_folds.set_ylim(0, 105)
    ax_folds.legend(loc="lower right", fontsize=9)
    ax_folds.grid(True, axis="y", alpha=0.3)

    means, stds = [], []
    for name in METRIC_NAMES:
        stats = report.summary[name]
        means.append(np.nan if stats["mean"] is None else 100.0 * stats["mean"])
        stds.append(0.0 if stats["std"] is None else 100.0 * stats["std"])
    pos = np.arange(len(METRIC_NAMES))
    bars = ax_mean.bar(pos, means, yerr=stds, capsize=5,
                       color=[METRIC_COLORS[n] for n in METRIC_NAMES], alpha=0.9)
    for bar, mean, std in zip(bars, means, stds):
        if not np.isnan(mean):
            ax_mean.text(bar.get_x() + bar.get_width() / 2, mean + std + 1.5,
                         f"{mean:.1f}±{std:.1f}", ha="center", fontsize=9)
    ax_mean.set_xticks(pos)
    ax_mean.set_xticklabels(METRIC_NAMES)
    ax_mean.set_ylabel("value (%)")
    ax_mean.set_title(f"mean ± std over {report.k} folds")
    ax_mean.set_ylim(0, 115)
    ax_mean.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    metrics_path = out_prefix.with_name(out_prefix.name + "_metrics.png")
    fig.savefig(metrics_path, dpi=150)
    plt.close(fig)
    paths.append(metrics_path)

    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for fold in report.folds:
        ax.plot(range(1, len(fold.loss_history) + 1), fold.loss_history,
                marker="o", markersize=3, label=f"fold {fold.fold}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean margin loss")
    ax.set_title("training loss per fold")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=9)
    fig.tight_layout()
    loss_path = out_prefix.with_name(out_prefix.name + "_loss.png")
    fig.savefig(loss_path, dpi=150)
    plt.close(fig)
    paths.append(loss_path)
    return paths

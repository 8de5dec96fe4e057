"""Delimited result tables and matplotlib figures rendered to files.

Tables mirror the layout used for the label-efficiency benchmarks: one row
per method, one column per label fraction, cells as mean +/- std accuracy.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import ResultsTable
from .datastore import STAGE_NAMES
from .trainer import MetricsReport

METHOD_DISPLAY = {
    "supervised": "Supervised",
    "simclr": "SimCLR",
    "byol": "BYOL",
    "simsiam": "SimSiam",
    "barlow_twins": "Barlow Twins",
    "contrawr": "ContraWR",
    "bendr": "BENDR",
    "maeeg": "MAEEG",
}


def _display(method: str) -> str:
    return METHOD_DISPLAY.get(method, method)


def render_table_text(table: ResultsTable) -> str:
    """Aligned plain-text table: methods down, label fractions across."""
    headers = ["Method"] + [f"{f * 100:g}" for f in table.fractions]
    rows = []
    for method in table.methods:
        row = [_display(method)]
        for f in table.fractions:
            cell = table.cell(method, f)
            if not cell.accuracies:
                row.append("invalid" if cell.errors else "-")
            else:
                mark = "" if cell.valid else "*"
                row.append(f"{cell.mean * 100:.2f}+-{cell.std * 100:.2f}{mark}")
        rows.append(row)
    widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def write_table_csv(table: ResultsTable, path: str | Path) -> None:
    """Machine-readable cells: method, fraction, mean, std, n, errors."""
    lines = ["method,fraction,mean_accuracy,std_accuracy,n_runs,n_errors"]
    for method in table.methods:
        for f in table.fractions:
            cell = table.cell(method, f)
            lines.append(
                f"{method},{f:g},{cell.mean:.6f},{cell.std:.6f},"
                f"{len(cell.accuracies)},{len(cell.errors)}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def plot_label_efficiency(table: ResultsTable, path: str | Path) -> None:
    """Accuracy vs label fraction, one curve per method, std as error bars."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    x = [f * 100 for f in table.fractions]
    for method in table.methods:
        means = [table.cell(method, f).mean * 100 for f in table.fractions]
        stds = [table.cell(method, f).std * 100 for f in table.fractions]
        ax.errorbar(x, means, yerr=stds, marker="o", capsize=3, label=_display(method))
    ax.set_xlabel("Labeled data (%)")
    ax.set_ylabel("Accuracy (%)")
    ax.set_title(f"Label efficiency, scenario {table.scenario}")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_loss_curve(log: list[dict], path: str | Path, title: str = "Pretext loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([row["epoch"] for row in log], [row["loss"] for row in log], marker=".")
    ax.set_xlabel("Training epoch")
    ax.set_ylabel("Loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_confusion(report: MetricsReport, path: str | Path) -> None:
    names = [STAGE_NAMES[i] for i in range(5)]
    cm = report.confusion.astype(float)
    row_sums = cm.sum(axis=1, keepdims=True)
    norm = np.divide(cm, row_sums, out=np.zeros_like(cm), where=row_sums > 0)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(norm, cmap="Blues", vmin=0, vmax=1)
    ax.set_xticks(range(5), names)
    ax.set_yticks(range(5), names)
    ax.set_xlabel("Predicted stage")
    ax.set_ylabel("True stage")
    ax.set_title(f"Confusion (accuracy {report.accuracy * 100:.1f}%)")
    for i in range(5):
        for j in range(5):
            ax.text(j, i, f"{int(cm[i, j])}", ha="center", va="center",
                    color="white" if norm[i, j] > 0.5 else "black", fontsize=8)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_augment_preview(before: np.ndarray, after: np.ndarray, rate_hz: float,
                         path: str | Path, title: str = "Augmentation preview") -> None:
    """Before/after traces, one subplot per channel."""
    c = before.shape[0]
    t = np.arange(before.shape[1]) / rate_hz
    fig, axes = plt.subplots(c, 1, figsize=(8, 2.2 * c), sharex=True, squeeze=False)
    for ch in range(c):
        ax = axes[ch, 0]
        ax.plot(t, before[ch], lw=0.6, label="original")
        ax.plot(t, after[ch], lw=0.6, alpha=0.8, label="augmented")
        ax.set_ylabel(f"ch {ch}")
        if ch == 0:
            ax.legend(fontsize=8)
            ax.set_title(title)
    axes[-1, 0].set_xlabel("Time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

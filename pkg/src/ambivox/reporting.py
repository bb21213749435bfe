"""Tables and figures for evaluation reports.

Emits an aligned text table and CSV with the column order A_w, EER,
eer, GR, gr; privacy-utility scatter plots where the upper-right corner
is better on both axes; and original/transformed spectrogram pair
grids when a report carries example spectrograms.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

TABLE_COLUMNS = ("A_w", "EER", "eer", "GR", "gr")


def _row_values(report):
    return (
        report.word_accuracy,
        report.eer,
        report.eer_normalized,
        report.gender_recognition,
        report.gr_normalized,
    )


def format_table(reports):
    """Aligned text table, one row per report."""
    label_width = max([len("Model")] + [len(r.label) for r in reports])
    header = "Model".ljust(label_width) + "".join(
        f"  {c:>8}" for c in TABLE_COLUMNS
    )
    lines = [header, "-" * len(header)]
    for r in reports:
        cells = "".join(f"  {v:8.2f}" for v in _row_values(r))
        lines.append(r.label.ljust(label_width) + cells)
    return "\n".join(lines)


def write_csv(reports, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("model",) + TABLE_COLUMNS)
        for r in reports:
            writer.writerow((r.label,) + tuple(f"{v:.2f}" for v in _row_values(r)))


def _scatter(reports, x_attr, x_label, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    for r in reports:
        x = getattr(r, x_attr)
        ax.scatter([x], [r.word_accuracy], s=45)
        ax.annotate(r.label, (x, r.word_accuracy),
                    textcoords="offset points", xytext=(6, 4), fontsize=8)
    ax.set_xlabel(x_label)
    ax.set_ylabel("word accuracy (%)")
    ax.set_xlim(-2, 102)
    ax.set_ylim(-2, 102)
    ax.set_title("privacy vs utility (upper right is better)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def spectrogram_grid(report, path):
    """Original (top) vs transformed (bottom) mel pairs of one report."""
    examples = report.spectrogram_examples
    if not examples:
        return False
    n = len(examples)
    fig, axes = plt.subplots(2, n, figsize=(3.2 * n, 5.2), squeeze=False)
    for col, ex in enumerate(examples):
        for row, key in enumerate(("original", "transformed")):
            ax = axes[row][col]
            ax.imshow(np.asarray(ex[key]), origin="lower", aspect="auto",
                      cmap="magma", vmin=0.0, vmax=1.0)
            gender = ex.get("gender", "?")
            ax.set_title(f"{key} ({gender})", fontsize=9)
            ax.set_xlabel("frames", fontsize=8)
            if col == 0:
                ax.set_ylabel("mel band", fontsize=8)
    fig.suptitle(report.label)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def render_report(reports, out_dir=None):
    """Produce the table, and the CSV/plots when ``out_dir`` is given.

    Returns the table string; written artifacts are table.csv,
    tradeoff_gr.png, tradeoff_eer.png and one spectrograms_<label>.png
    per report that carries examples.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("render_report needs at least one report")
    table = format_table(reports)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "table.txt").write_text(table + "\n")
        write_csv(reports, out_dir / "table.csv")
        _scatter(reports, "gr_normalized", "normalized gender recognition",
                 out_dir / "tradeoff_gr.png")
        _scatter(reports, "eer_normalized", "normalized equal error rate",
                 out_dir / "tradeoff_eer.png")
        for r in reports:
            safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in r.label)
            spectrogram_grid(r, out_dir / f"spectrograms_{safe}.png")
    return table

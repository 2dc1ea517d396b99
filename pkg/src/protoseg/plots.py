"""Figure rendering for ablation reports.

Figures are written next to the delimited output, never shown interactively;
the Agg backend keeps rendering headless and deterministic enough for CI.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluate import AblationTable  # noqa: E402


def render_ablation_figure(table: AblationTable, path) -> None:
    """Plot per-class and mean Dice against the swept axis and save to path."""
    labels = [row[0] for row in table.rows]
    x = range(len(labels))
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for ci, cid in enumerate(table.class_ids):
        ax.plot(x, [row[1][ci] for row in table.rows], marker="o", lw=1.2, label=f"class {cid}")
    ax.plot(x, [row[2] for row in table.rows], marker="s", lw=2.2, color="black", label="mean")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_xlabel(table.axis)
    ax.set_ylabel("Dice")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

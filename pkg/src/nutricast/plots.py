"""Static report figures rendered to files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .chemval import ComparisonRow
from .errors import DomainError
from .evaluation import BUCKETS, EvalReport


def plot_loss_curve(history: Sequence[tuple[int, int, float]], path: str | Path) -> None:
    """Per-epoch mean training loss."""
    if not history:
        raise DomainError("empty loss history")
    epochs = sorted({e for e, _, _ in history})
    means = [
        float(np.mean([loss for e, _, loss in history if e == epoch])) for epoch in epochs
    ]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, means, marker="o", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title("Training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_auc_bars(report: EvalReport, path: str | Path) -> None:
    """Macro and weighted one-vs-one AUC per nutrient channel."""
    channels = sorted(report.channels)
    if not channels:
        raise DomainError("report has no channels")
    macro = [report.channels[c].macro_auc for c in channels]
    weighted = [report.channels[c].weighted_auc for c in channels]
    x = np.arange(len(channels))
    fig, ax = plt.subplots(figsize=(max(6, 1.3 * len(channels)), 4))
    ax.bar(x - 0.2, macro, width=0.4, label="macro")
    ax.bar(x + 0.2, weighted, width=0.4, label="weighted")
    ax.axhline(0.5, color="gray", linestyle=":", linewidth=1, label="chance")
    ax.set_xticks(x, channels, rotation=20)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("one-vs-one AUCROC")
    ax.set_title(f"AUCROC by nutrient ({report.split})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_error_buckets(report: EvalReport, path: str | Path) -> None:
    """Stacked relative-error bucket fractions per channel."""
    channels = sorted(report.channels)
    if not channels:
        raise DomainError("report has no channels")
    fractions = np.array(
        [[report.channels[c].error_buckets[b] for b in BUCKETS] for c in channels]
    )
    x = np.arange(len(channels))
    fig, ax = plt.subplots(figsize=(max(6, 1.3 * len(channels)), 4))
    bottom = np.zeros(len(channels))
    colors = ("#2ca02c", "#ffbf00", "#d62728", "#7f7f7f")
    for bi, bucket in enumerate(BUCKETS):
        ax.bar(x, fractions[:, bi], bottom=bottom, label=bucket, color=colors[bi])
        bottom += fractions[:, bi]
    ax.set_xticks(x, channels, rotation=20)
    ax.set_ylim(0, 1.0)
    ax.set_ylabel("fraction of items")
    ax.set_title(f"Relative-error distribution ({report.split})")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_three_source(rows: Sequence[ComparisonRow], path: str | Path) -> None:
    """3-D scatter of database vs. model vs. chemistry values; marker
    area scales with the chemistry standard deviation."""
    if not rows:
        raise DomainError("no comparison rows to plot")
    bfpd = np.array([r.bfpd_value for r in rows])
    model = np.array([r.model_value for r in rows])
    chem = np.array([r.chem_mean for r in rows])
    sd = np.array([r.chem_sd for r in rows])
    max_sd = sd.max()
    sizes = 30 + 170 * (sd / max_sd if max_sd > 0 else np.zeros_like(sd))
    fig = plt.figure(figsize=(6.5, 5.5))
    ax = fig.add_subplot(projection="3d")
    ax.scatter(bfpd, model, chem, s=sizes, alpha=0.6, c=chem, cmap="viridis")
    lim = float(max(bfpd.max(), model.max(), chem.max(), 1e-9))
    ax.plot([0, lim], [0, lim], [0, lim], color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("database value")
    ax.set_ylabel("model estimate")
    ax.set_zlabel("chemical analysis")
    ax.set_title("Three-source comparison")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

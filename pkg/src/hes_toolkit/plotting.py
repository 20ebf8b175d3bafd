"""Figure rendering for the report path.

The analysis module emits plain data; these helpers turn reports into
PNG files next to the delimited outputs. Used by the CLI when a plot
directory is requested.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import DistributionReport, rank_auc
from .errors import MissingCorrectLabel, SingleClassInput
from .metrics import SampleScore


def distribution_figure(report: DistributionReport, path: str | Path) -> Path:
    """Token-entropy histogram with percentile markers, log-scaled counts."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    edges = np.asarray(report.bin_edges)
    widths = np.diff(edges)
    ax.bar(edges[:-1], report.counts, width=widths, align="edge", color="#4878cf", alpha=0.85)
    ax.set_yscale("symlog")
    for q, value in sorted(report.percentiles.items()):
        ax.axvline(value, color="#d65f5f", linestyle="--", linewidth=1)
        ax.annotate(
            f"p{q:g} = {value:.3f}",
            xy=(value, ax.get_ylim()[1]),
            xytext=(2, -10),
            textcoords="offset points",
            rotation=90,
            va="top",
            fontsize=8,
        )
    ax.set_xlabel("token entropy (nats)")
    ax.set_ylabel("tokens")
    ax.set_title(f"token entropy distribution (n={report.token_count:,})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def separation_figure(
    scores: Sequence[SampleScore],
    correct: Mapping[str, bool | None],
    metrics: Sequence[str],
    path: str | Path,
    bins: int = 40,
) -> Path:
    """One panel per metric: overlaid correct/incorrect histograms + AUC."""
    path = Path(path)
    ncols = 2 if len(metrics) > 1 else 1
    nrows = (len(metrics) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(6 * ncols, 3.5 * nrows), squeeze=False)
    for k, metric in enumerate(metrics):
        ax = axes[k // ncols][k % ncols]
        good, bad = [], []
        for s in scores:
            label = correct.get(s.sample_id)
            if label is None:
                raise MissingCorrectLabel(s.sample_id)
            (good if label else bad).append(s.metric(metric))
        if not good or not bad:
            raise SingleClassInput("need both label groups to plot separation")
        auc = rank_auc(np.asarray(good), np.asarray(bad))
        lo = min(min(good), min(bad))
        hi = max(max(good), max(bad))
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
        ax.hist(good, bins=edges, alpha=0.55, label="correct", color="#4878cf", density=True)
        ax.hist(bad, bins=edges, alpha=0.55, label="incorrect", color="#d65f5f", density=True)
        ax.set_title(f"{metric}  (AUC={auc:.3f})", fontsize=10)
        ax.legend(fontsize=8)
    for k in range(len(metrics), nrows * ncols):
        axes[k // ncols][k % ncols].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def frequency_figure(
    frequencies: Iterable[tuple[str, int]], path: str | Path, top_n: int = 30
) -> Path:
    """Horizontal bar chart of the most frequent high-entropy token texts."""
    path = Path(path)
    rows = list(frequencies)[:top_n]
    fig, ax = plt.subplots(figsize=(7, max(2.5, 0.28 * len(rows))))
    if rows:
        texts = [t for t, _ in rows][::-1]
        counts = [c for _, c in rows][::-1]
        ax.barh(range(len(rows)), counts, color="#4878cf")
        ax.set_yticks(range(len(rows)), texts, fontsize=8)
    ax.set_xlabel("occurrences in high-entropy sets")
    ax.set_title("high-entropy token frequency")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

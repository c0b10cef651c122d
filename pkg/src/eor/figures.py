"""Matplotlib renderings for the report path: heatmaps, upper-bound boxplots,
accuracy bars, and the trained-weight map. All figures render to files via
the Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KWARGS = {"dpi": 120, "bbox_inches": "tight", "metadata": {"Software": "eor"}}


def save_heatmap(
    path: str | Path,
    names: Sequence[str],
    cells: Sequence[Sequence[float | None]],
    title: str,
) -> Path:
    """Pairwise-ratio heatmap; undefined cells are greyed out and annotated -1."""
    m = len(names)
    values = np.array(
        [[cell if cell is not None else np.nan for cell in row] for row in cells], dtype=float
    )
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * m, 0.8 + 0.6 * m))
    masked = np.ma.masked_invalid(values)
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad(color="#d0d0d0")
    image = ax.imshow(masked, vmin=0.0, vmax=1.0, cmap=cmap)
    ax.set_xticks(range(m), labels=names, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(m), labels=names, fontsize=7)
    for i in range(m):
        for j in range(m):
            text = "-1" if np.isnan(values[i, j]) else f"{values[i, j]:.2f}"
            ax.text(j, i, text, ha="center", va="center", fontsize=6)
    ax.set_title(title, fontsize=9)
    fig.colorbar(image, ax=ax, fraction=0.046)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return Path(path)


def save_upper_bound_boxplot(
    path: str | Path,
    bounds_by_size: Mapping[int, Sequence[float]],
    best_single: float,
    title: str = "Perfect-selection upper bound by pool size",
) -> Path:
    sizes = sorted(bounds_by_size)
    data = [list(bounds_by_size[s]) for s in sizes]
    fig, ax = plt.subplots(figsize=(1.5 + 0.8 * len(sizes), 4.0))
    ax.boxplot(data, positions=sizes, widths=0.5)
    ax.axhline(best_single, linestyle="--", color="tab:red", linewidth=1,
               label=f"best single retriever ({best_single:.3f})")
    ax.set_xlabel("retriever pool size")
    ax.set_ylabel("upper-bound accuracy")
    ax.set_title(title, fontsize=10)
    ax.legend(fontsize=8)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return Path(path)


def save_accuracy_bars(
    path: str | Path,
    names: Sequence[str],
    accuracies: Sequence[float],
    title: str = "Per-retriever accuracy",
) -> Path:
    fig, ax = plt.subplots(figsize=(1.5 + 0.5 * len(names), 3.5))
    ax.bar(range(len(names)), accuracies, color="tab:blue")
    ax.set_xticks(range(len(names)), labels=names, rotation=45, ha="right", fontsize=7)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("accuracy")
    ax.set_title(title, fontsize=10)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return Path(path)


def save_weight_map(
    path: str | Path,
    names: Sequence[str],
    weights: Sequence[float],
    threshold: float,
    title: str = "Trained retriever weights",
) -> Path:
    """One row of circles, sized and colored by weight; retrievers at or below
    the filtering threshold are drawn hollow."""
    weights = list(weights)
    fig, ax = plt.subplots(figsize=(1.5 + 0.6 * len(names), 2.2))
    xs = np.arange(len(names))
    active = [w > threshold for w in weights]
    sizes = [80 + 1200 * w for w in weights]
    colors = [w if keep else 0.0 for w, keep in zip(weights, active)]
    ax.scatter(
        xs,
        np.zeros_like(xs),
        s=sizes,
        c=colors,
        cmap="Blues",
        vmin=0.0,
        vmax=0.6,
        edgecolors=["black" if keep else "#999999" for keep in active],
        linewidths=1.0,
    )
    for x, w, keep in zip(xs, weights, active):
        ax.annotate(f"{w:.2f}", (x, 0.0), textcoords="offset points", xytext=(0, 16),
                    ha="center", fontsize=7, color="black" if keep else "#999999")
    ax.set_xticks(xs, labels=names, rotation=45, ha="right", fontsize=7)
    ax.set_yticks([])
    ax.set_ylim(-1.0, 1.2)
    ax.set_title(f"{title} (threshold {threshold})", fontsize=10)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return Path(path)

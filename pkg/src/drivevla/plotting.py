"""Figures written next to the CSV reports: sampling histograms, corpus stats, path overlays."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .ingest import IMAGE_HEIGHT, IMAGE_WIDTH  # noqa: E402

# no timestamps in the PNG so reruns give identical files
_PNG_META = {"Software": None}


def _save(fig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp.png")
    fig.savefig(tmp, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    os.replace(tmp, path)
    return path


def plot_distribution(hists: Sequence, path: str | os.PathLike) -> Path:
    """Before/after sampling histograms, one panel per feature."""
    fig, axes = plt.subplots(1, len(hists), figsize=(6 * len(hists), 4), squeeze=False)
    for ax, h in zip(axes[0], hists):
        x = np.arange(len(h.before))
        before = np.asarray(h.before, dtype=float)
        after = np.asarray(h.after, dtype=float)
        ax.bar(x - 0.2, before / max(before.sum(), 1), width=0.4, color="tab:red", label="before")
        ax.bar(x + 0.2, after / max(after.sum(), 1), width=0.4, color="gold", label="after")
        ax.set_xticks(x)
        ax.set_xticklabels(h.labels(), rotation=45, ha="right", fontsize=7)
        ax.set_title(f"{h.feature}  H: {h.entropy_before:.2f} -> {h.entropy_after:.2f} bits")
        ax.set_ylabel("fraction of scenes")
        ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_stats(stats, path: str | os.PathLike) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(11, 4))
    for ax, hist, edges, name in ((a1, stats.speed_histogram, stats.speed_edges_kmh, "speed [km/h]"),
                                  (a2, stats.steering_histogram, stats.steering_edges_deg,
                                   "steering [deg]")):
        x = np.arange(len(hist))
        ax.bar(x, hist, color="tab:blue")
        lo = ["-inf"] + [f"{e:g}" for e in edges]
        hi = [f"{e:g}" for e in edges] + ["inf"]
        ax.set_xticks(x)
        ax.set_xticklabels([f"[{a},{b})" for a, b in zip(lo, hi)], rotation=45, ha="right",
                           fontsize=7)
        ax.set_xlabel(name)
        ax.set_ylabel("frames")
    fig.suptitle(f"{stats.frame_count} frames, {stats.hours:.3f} h; blinker "
                 f"{stats.blinker_fraction:.1%}, traffic light {stats.traffic_light_fraction:.1%}")
    fig.tight_layout()
    return _save(fig, path)


OVERVIEW_PANELS = 6


def _draw_overlay(ax, uv, title: str) -> None:
    if len(uv):
        pts = np.asarray(uv, dtype=float)
        ax.plot(pts[:, 0], pts[:, 1], "-o", color="green", markersize=2, linewidth=2)
    ax.set_xlim(0, IMAGE_WIDTH)
    ax.set_ylim(IMAGE_HEIGHT, 0)
    ax.set_aspect("equal")
    ax.set_title(title, fontsize=8)


def plot_overlay(uv: Sequence[tuple[float, float]], path: str | os.PathLike, title: str = "") -> Path:
    """Projected path drawn on an empty image-sized canvas (image rows grow downward)."""
    fig, ax = plt.subplots(figsize=(IMAGE_WIDTH / 200, IMAGE_HEIGHT / 200))
    _draw_overlay(ax, uv, title)
    fig.tight_layout()
    return _save(fig, path)


def plot_overlays(panels: Sequence[tuple[str, Sequence]], path: str | os.PathLike) -> Path:
    """Several overlays side by side, three per row."""
    n = max(len(panels), 1)
    cols = min(3, n)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 2.6 * rows), squeeze=False)
    for ax in axes.ravel()[len(panels):]:
        ax.axis("off")
    for ax, (title, uv) in zip(axes.ravel(), panels):
        _draw_overlay(ax, uv, title)
    fig.tight_layout()
    return _save(fig, path)

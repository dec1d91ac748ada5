"""File-only matplotlib renderings of training and sampling artifacts."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport, UncertaintyMap
from .sampler import SampleTrace


def save_loss_curves(train_loss, val_loss, path: Path | str) -> None:
    """Per-batch training loss with per-epoch validation loss overlaid."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if len(train_loss):
        ax.plot(
            np.linspace(0, len(val_loss) or 1, num=len(train_loss), endpoint=False),
            train_loss,
            lw=0.8,
            alpha=0.7,
            label="train (batches)",
        )
    if len(val_loss):
        ax.plot(np.arange(1, len(val_loss) + 1), val_loss, "o-", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_trace_strip(trace: SampleTrace, path: Path | str) -> None:
    """One panel per reverse state: the terrain mask, radial axis upward."""
    states = trace.states()
    fig, axes = plt.subplots(1, len(states), figsize=(1.6 * len(states), 2.4))
    if len(states) == 1:
        axes = [axes]
    length = trace.grid.column_length
    for k, (ax, surface) in enumerate(zip(axes, states)):
        ys = np.arange(length)
        heights = np.floor(np.clip(surface.values, 0, length - 1) + 0.5)
        panel = (ys[None, :] < heights[:, None]).astype(float)
        ax.imshow(panel.T, origin="lower", aspect="auto", cmap="gray")
        if k == 0:
            ax.set_title("init", fontsize=8)
        else:
            ax.set_title(f"i={trace.records[k - 1].i}", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_mask_overlay(image: np.ndarray, mask: np.ndarray, path: Path | str) -> None:
    """Predicted mask contoured over the grayscale image."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(image, cmap="gray", vmin=0, vmax=1)
    if mask.any():
        ax.contour(mask.astype(float), levels=[0.5], colors="red", linewidths=1.2)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_mean_overlay(image: np.ndarray, unc: UncertaintyMap, path: Path | str) -> None:
    """Ensemble mean as a translucent heat layer over the image."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(image, cmap="gray", vmin=0, vmax=1)
    ax.imshow(np.ma.masked_less(unc.mean, 0.05), cmap="hot", alpha=0.5, vmin=0, vmax=1)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_sd_heatmap(unc: UncertaintyMap, path: Path | str) -> None:
    """Per-pixel ensemble standard deviation with a colorbar."""
    fig, ax = plt.subplots(figsize=(5.4, 5))
    im = ax.imshow(unc.sd, cmap="magma", vmin=0)
    fig.colorbar(im, ax=ax, label=f"SD over {unc.runs} runs")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_metrics_summary(report: EvalReport, path: Path | str) -> None:
    """Box plots of the per-image metric distributions."""
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    names = ("dsc", "iou", "hd95")
    for ax, name in zip(axes, names):
        values = [getattr(r, name) for r in report.records]
        ax.boxplot(values)
        ax.set_title(name.upper())
        ax.set_xticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)

"""Report figures (Agg backend, no timestamps so output bytes are stable)."""

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    os.replace(tmp, path)
    return path


def plot_metrics(report, path):
    """One bar panel per metric, one bar per cube, with the mean as a dashed line."""
    rows = list(report.rows())
    ids = [r[0] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(max(6.0, 1.2 + 0.5 * len(ids)) * 1.5, 3.2))
    for ax, col, label in zip(axes, (1, 2, 3), ("PSNR (dB)", "SSIM", "SAM (deg)")):
        vals = np.array([r[col] for r in rows], dtype=float)
        ax.bar(np.arange(len(ids)), vals, color="tab:blue")
        if len(vals):
            ax.axhline(vals.mean(), color="tab:red", ls="--", lw=1)
        ax.set_xticks(np.arange(len(ids)))
        ax.set_xticklabels(ids, rotation=60, ha="right", fontsize=7)
        ax.set_title(label)
    fig.tight_layout()
    return _save(fig, path)


def plot_history(history, path, noisy_psnr=None):
    """Training loss (log scale) and validation PSNR per epoch."""
    ep = [h["epoch"] for h in history]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.2))
    a1.semilogy(ep, [h["loss"] for h in history], marker="o", ms=3)
    a1.set_xlabel("epoch")
    a1.set_ylabel("training loss")
    val = [h["val_psnr"] for h in history]
    if np.isfinite(val).any():
        a2.plot(ep, val, marker="o", ms=3, label="denoised")
        if noisy_psnr is not None:
            a2.axhline(noisy_psnr, color="gray", ls="--", lw=1, label="noisy input")
        a2.legend(fontsize=8)
    a2.set_xlabel("epoch")
    a2.set_ylabel("validation PSNR (dB)")
    fig.tight_layout()
    return _save(fig, path)

"""Report figures rendered to PNG files (headless backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def loss_curves(rows, path) -> Path:
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    steps = [r["step"] for r in rows]
    for key in ("total", "seg", "dis", "kg"):
        ax.plot(steps, [r[key] for r in rows], label=key, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    lam = [r["lambda_mean"] for r in rows]
    ax2.plot(steps, lam, color="tab:purple", lw=1)
    ax2.set_xlabel("step")
    ax2.set_ylabel("batch mean lambda")
    ax2.set_ylim(0, 1)
    return _save(fig, path)


def per_class_iou(iou, names, path, title="per-class IoU") -> Path:
    iou = np.asarray(iou, dtype=float)
    fig, ax = plt.subplots(figsize=(8, 3.4))
    x = np.arange(len(iou))
    ax.bar(x, np.nan_to_num(iou), color=["0.7" if np.isnan(v) else "tab:blue" for v in iou])
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax.set_ylim(0, 1)
    ax.set_title(title)
    return _save(fig, path)


def prior_heatmaps(mats: dict, path) -> Path:
    fig, axes = plt.subplots(1, len(mats), figsize=(3.3 * len(mats), 3.0))
    axes = np.atleast_1d(axes)
    for ax, (name, m) in zip(axes, mats.items()):
        im = ax.imshow(m, cmap="viridis")
        ax.set_title(name)
        fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def ablation_bars(table, path, metric="miou") -> Path:
    names = [r["arm"] for r in table]
    mean = [r[f"{metric}_mean"] for r in table]
    spread = [r[f"{metric}_spread"] for r in table]
    fig, ax = plt.subplots(figsize=(max(4, 1.3 * len(names)), 3.4))
    ax.bar(np.arange(len(names)), mean, yerr=spread, capsize=4, color="tab:green")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(metric)
    lo = min(m - s for m, s in zip(mean, spread)) if mean else 0
    ax.set_ylim(max(0.0, lo - 0.05), 1.0)
    return _save(fig, path)

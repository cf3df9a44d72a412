"""Matplotlib figures written next to the CSV reports.

Every function renders to a file with the non-interactive Agg backend and
strips the software/date metadata, so reruns produce byte-identical PNGs.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_curve(curve, path, title: str = "") -> Path:
    """Attack-set fooling rate and loss against epoch."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = [c.epoch for c in curve]
    ax.plot(epochs, [c.fooling_rate for c in curve], marker="o", ms=3, label="fooling rate")
    ax.plot(epochs, [c.best_fooling_rate for c in curve], ls="--", label="best so far")
    ax.set_xlabel("epoch")
    ax.set_ylabel("fooling rate")
    ax.set_ylim(-0.02, 1.02)
    ax2 = ax.twinx()
    ax2.plot(epochs, [c.loss for c in curve], color="gray", lw=1, label="loss")
    ax2.set_ylabel("loss")
    ax.legend(loc="lower right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_thresholds(t, path, title: str = "per-band threshold") -> Path:
    """Heatmap of an 8x8 threshold matrix with the values printed in each cell."""
    t = np.asarray(t, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(4.6, 4))
    im = ax.imshow(t, cmap="viridis")
    for (i, j), v in np.ndenumerate(t):
        ax.text(j, i, f"{v:.1f}", ha="center", va="center", fontsize=6, color="w" if v < t.max() / 2 else "k")
    ax.set_xlabel("k2")
    ax.set_ylabel("k1")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    return _save(fig, path)


def _to_display(img: np.ndarray) -> np.ndarray:
    a = np.clip(np.asarray(img), 0, 255) / 255.0
    return a[0] if a.shape[0] == 1 else a.transpose(1, 2, 0)


def plot_perturbation(spatial: np.ndarray, path, examples: np.ndarray | None = None) -> Path:
    """The perturbation (rescaled to the full grey range) and, optionally, clean/perturbed pairs."""
    spatial = np.asarray(spatial)
    peak = float(np.max(np.abs(spatial))) or 1.0
    shown = 127.5 + 127.5 * spatial / peak
    n = 0 if examples is None else min(len(examples), 3)
    fig, axes = plt.subplots(1, 1 + 2 * n, figsize=(2.2 * (1 + 2 * n), 2.4), squeeze=False)
    axes = axes[0]
    axes[0].imshow(_to_display(shown), cmap="gray", vmin=0, vmax=1)
    axes[0].set_title(f"delta (linf {peak:.1f})", fontsize=8)
    for i in range(n):
        axes[1 + 2 * i].imshow(_to_display(examples[i]), cmap="gray", vmin=0, vmax=1)
        axes[1 + 2 * i].set_title("clean", fontsize=8)
        axes[2 + 2 * i].imshow(_to_display(examples[i] + spatial), cmap="gray", vmin=0, vmax=1)
        axes[2 + 2 * i].set_title("perturbed", fontsize=8)
    for ax in axes:
        ax.axis("off")
    fig.tight_layout()
    return _save(fig, path)


def plot_report(reports, path) -> Path:
    """Bar chart of fooling rate with PSNR annotated, one bar per report row."""
    fig, ax = plt.subplots(figsize=(max(4, 1.1 * len(reports)), 3.2))
    labels = [f"{r.variant}\nseed {r.seed}" for r in reports]
    xs = np.arange(len(reports))
    ax.bar(xs, [r.fr for r in reports], color="tab:blue")
    for x, r in zip(xs, reports):
        ax.text(x, r.fr + 0.02, "inf dB" if math.isinf(r.psnr_db) else f"{r.psnr_db:.1f} dB", ha="center", fontsize=7)
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylim(0, 1.1)
    ax.set_ylabel("fooling rate")
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(rows, path) -> Path:
    """Fooling rate against attack-set fraction, one line per augmentation setting."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for aug in sorted({r.augment for r in rows}):
        sel = sorted((r for r in rows if r.augment == aug), key=lambda r: r.fraction)
        ax.plot([r.fraction for r in sel], [r.fr for r in sel], marker="o", label="augmented" if aug else "plain")
    ax.set_xscale("log")
    ax.set_xlabel("attack-set fraction")
    ax.set_ylabel("test fooling rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_ablation(rows, path) -> Path:
    """Fooling rate and PSNR against lambda_h, one line per (lambda_l, f_c) pair."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    for ll, fc in sorted({(r.lambda_l, r.f_c) for r in rows}):
        sel = sorted((r for r in rows if (r.lambda_l, r.f_c) == (ll, fc)), key=lambda r: r.lambda_h)
        xs = [r.lambda_h for r in sel]
        lab = f"lambda_l={ll:g}, f_c={fc:g}"
        a1.plot(xs, [r.fr for r in sel], marker="o", label=lab)
        a2.plot(xs, [min(r.psnr_db, 99.0) for r in sel], marker="o", label=lab)
    a1.set_xlabel("lambda_h")
    a1.set_ylabel("fooling rate")
    a2.set_xlabel("lambda_h")
    a2.set_ylabel("PSNR (dB)")
    a1.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_cross(mat, names_src, names_tgt, path) -> Path:
    mat = np.asarray(mat)
    fig, ax = plt.subplots(figsize=(1.2 * len(names_tgt) + 2, 1.0 * len(names_src) + 1.5))
    im = ax.imshow(mat, vmin=0, vmax=1, cmap="magma")
    for (i, j), v in np.ndenumerate(mat):
        ax.text(j, i, f"{v:.2f}", ha="center", va="center", color="w" if v < 0.5 else "k", fontsize=8)
    ax.set_xticks(range(len(names_tgt)))
    ax.set_xticklabels(names_tgt, fontsize=7, rotation=30)
    ax.set_yticks(range(len(names_src)))
    ax.set_yticklabels(names_src, fontsize=7)
    ax.set_xlabel("target model")
    ax.set_ylabel("perturbation source")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    return _save(fig, path)

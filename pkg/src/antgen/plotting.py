"""Static figures written next to the CSV outputs of the CLI."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: str | Path) -> None:
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def plot_aligner_loss(losses: Sequence[float], smoothed: Sequence[float], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = np.arange(1, len(losses) + 1)
    ax.plot(epochs, losses, lw=1, alpha=0.6, label="epoch loss")
    ax.plot(epochs, smoothed, lw=1.5, label="running min")
    ax.set_xlabel("epoch")
    ax.set_ylabel("reconstruction + KL")
    ax.legend()
    _save(fig, path)


def plot_gan_trace(rows: Sequence[tuple[int, float, float, float]], path: str | Path) -> None:
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    axes[0].plot(arr[:, 0], arr[:, 1], label="critic loss")
    axes[0].plot(arr[:, 0], arr[:, 2], label="generator loss")
    axes[0].set_xlabel("epoch")
    axes[0].legend()
    axes[1].plot(arr[:, 0], arr[:, 3], color="tab:red")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("Lipschitz penalty")
    _save(fig, path)


def plot_temperature_sweep(rows: Sequence[tuple[float, float, float]], path: str | Path) -> None:
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.plot(arr[:, 1], arr[:, 2], marker="o")
    for t, x, y in arr:
        ax.annotate(f"{t:g}", (x, y), textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("negative BLEU")
    ax.set_ylabel("Self-BLEU")
    _save(fig, path)


def plot_theorem_grid(rows, path: str | Path) -> None:
    """Enumerated gap against its closed form, one line per ``m``."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ls = sorted({r.l for r in rows})
    l_top = ls[-1]
    for m in sorted({r.m for r in rows}):
        pts = sorted((r.n, r.gap, r.predicted) for r in rows if r.l == l_top and r.m == m)
        if not pts:
            continue
        n, gap, pred = zip(*pts)
        ax.plot(n, pred, lw=1, color="0.7")
        ax.plot(n, gap, ls="none", marker=".", label=f"m={m}")
    ax.set_xlabel("n")
    ax.set_ylabel(f"C_A - C_B at l={l_top}")
    ax.legend(fontsize=7, ncol=2)
    _save(fig, path)


def plot_position_cosine(sim: np.ndarray, path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(sim, vmin=-1, vmax=1, cmap="coolwarm")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("position")
    ax.set_ylabel("position")
    if title:
        ax.set_title(title)
    _save(fig, path)

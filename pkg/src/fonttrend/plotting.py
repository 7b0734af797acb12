"""Matplotlib figures written to files next to the CSV reports."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .losses import TUKEY_C, LossKind, LossSpec, loss_value  # noqa: E402
from .trainer import History  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the PNG bytes stable across runs
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_confusion(confusion: np.ndarray, labels: Sequence[str], path: str | Path, title: str = "") -> Path:
    """Row-normalized decade confusion heatmap with raw counts annotated."""
    m = np.asarray(confusion, dtype=np.float64)
    rows = m.sum(axis=1, keepdims=True)
    frac = np.divide(m, rows, out=np.zeros_like(m), where=rows > 0)
    fig, ax = plt.subplots(figsize=(7, 6))
    im = ax.imshow(frac, cmap="Blues", vmin=0.0, vmax=1.0)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            if m[i, j]:
                ax.text(j, i, str(int(m[i, j])), ha="center", va="center", fontsize=7,
                        color="white" if frac[i, j] > 0.5 else "black")
    ax.set_xticks(range(len(labels)), labels, rotation=60, ha="right", fontsize=7)
    ax.set_yticks(range(len(labels)), labels, fontsize=7)
    ax.set_xlabel("predicted decade")
    ax.set_ylabel("true decade")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    return _save(fig, path)


def plot_history(history: History, path: str | Path, title: str = "") -> Path:
    """Train/val loss and val MAE per epoch; phase changes marked."""
    ep = np.array([r.epoch for r in history.records])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(ep, [r.train_loss for r in history.records], label="train loss", lw=1)
    ax1.plot(ep, [r.val_loss for r in history.records], label="val loss", lw=1)
    ax1.set_yscale("log")
    ax1.legend(fontsize=8)
    ax2.plot(ep, [r.val_mae for r in history.records], color="C2", lw=1)
    ax2.set_ylabel("val MAE (years)")
    ax2.set_xlabel("epoch")
    phases = history.phases
    for i in range(1, len(phases)):
        if phases[i] != phases[i - 1]:
            for ax in (ax1, ax2):
                ax.axvline(ep[i], color="k", ls="--", lw=0.8)
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_loss_shapes(path: str | Path, c: float = TUKEY_C, delta: float = 1.0, limit: float = 8.0) -> Path:
    """Per-sample loss against residual for the four loss kinds (unit scale)."""
    r = np.linspace(-limit, limit, 801)
    fig, ax = plt.subplots(figsize=(6, 4))
    for kind in (LossKind.MSE, LossKind.L1, LossKind.HUBER, LossKind.TUKEY):
        spec = LossSpec(kind, tukey_c=c, huber_delta=delta, mad_scaling=False)
        ys = [loss_value(spec, np.array([x]), np.array([0.0])) for x in r]
        ax.plot(r, ys, label=kind.value, lw=1.2)
    ax.set_ylim(0, c * c / 6 * 2.5)
    ax.set_xlabel("residual")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_grid(rows: Sequence[dict], path: str | Path) -> Path:
    """Test MAE per grid row; failed (non-finite) rows drawn as empty slots."""
    names = [f"{r['method']}\n{r['loss']}" for r in rows]
    maes = [r["mae"] if math.isfinite(r["mae"]) else 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(rows)), 4))
    ax.bar(range(len(rows)), maes, color=[f"C{i // 4}" for i in range(len(rows))])
    ax.set_xticks(range(len(rows)), names, fontsize=6)
    ax.set_ylabel("test MAE (years)")
    fig.tight_layout()
    return _save(fig, path)

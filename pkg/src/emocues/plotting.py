"""Report figures written next to the JSON/CSV outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_confusion(counts: np.ndarray, labels: Sequence[str], path: str | Path,
                   title: str = "Confusion matrix") -> Path:
    """Row-normalised heatmap (per-class recall on the diagonal) annotated with raw counts."""
    counts = np.asarray(counts)
    support = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, support, out=np.zeros(counts.shape), where=support > 0)
    with plt.rc_context(STYLE):
        size = 1.2 + 0.6 * len(labels)
        fig, ax = plt.subplots(figsize=(size + 1.0, size))
        im = ax.imshow(frac, cmap="Blues", vmin=0.0, vmax=1.0)
        ax.set_xticks(range(len(labels)), labels)
        ax.set_yticks(range(len(labels)), labels)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(title)
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                ax.text(j, i, f"{frac[i, j]:.2f}\n({counts[i, j]})", ha="center", va="center",
                        fontsize=8, color="white" if frac[i, j] > 0.5 else "black")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        return _save(fig, path)


def plot_training_trace(trace: Sequence[dict], path: str | Path) -> Path:
    epochs = [r["epoch"] for r in trace]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.2))
        ax.plot(epochs, [r["loss"] for r in trace], color="C0", label="loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy", color="C0")
        ax2 = ax.twinx()
        ax2.plot(epochs, [r["accuracy"] for r in trace], color="C1", label="train accuracy")
        ax2.set_ylabel("accuracy", color="C1")
        ax2.set_ylim(0, 1.05)
        ax2.spines["right"].set_visible(True)
        return _save(fig, path)


def plot_ablation(rows, path: str | Path) -> Path:
    """Grouped bars of UAR / M-F1 change versus the full model (percentage points)."""
    variants = [r.variant for r in rows if r.delta is not None]
    d_uar = [100 * r.delta["uar"] for r in rows if r.delta is not None]
    d_f1 = [100 * r.delta["macro_f1"] for r in rows if r.delta is not None]
    x = np.arange(len(variants))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.bar(x - 0.18, d_uar, width=0.36, label="UAR")
        ax.bar(x + 0.18, d_f1, width=0.36, label="M-F1")
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_xticks(x, variants)
        ax.set_ylabel("change vs full (pp)")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_features(mel: np.ndarray, f0: np.ndarray, energy: np.ndarray, hop: float,
                  path: str | Path) -> Path:
    t = np.arange(len(f0)) * hop
    with plt.rc_context(STYLE):
        fig, (a0, a1) = plt.subplots(2, 1, figsize=(6, 4), sharex=True,
                                     gridspec_kw={"height_ratios": [2, 1]})
        a0.imshow(mel.T, origin="lower", aspect="auto", cmap="magma",
                  extent=(0, t[-1] + hop if len(t) else hop, 0, mel.shape[1]))
        a0.set_ylabel("mel bin")
        voiced = f0 > 0
        a1.plot(t[voiced], f0[voiced], ".", color="C0", markersize=3)
        a1.set_ylabel("F0 (Hz)")
        a1.set_xlabel("time (s)")
        a1b = a1.twinx()
        a1b.plot(t, energy, color="C1", linewidth=1)
        a1b.set_ylabel("RMS", color="C1")
        return _save(fig, path)

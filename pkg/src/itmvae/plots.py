"""Figure rendering for the report path. Headless: Agg backend, files only."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["coverage_figure", "sparsity_figure"]


def coverage_figure(curves, path, level=0.9):
    """Cumulative topic-coverage curves. `curves` maps label -> curve."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for label, curve in curves.items():
        curve = np.asarray(curve)
        ax.plot(np.arange(1, len(curve) + 1), curve, lw=1.4, label=str(label))
    if level is not None:
        ax.axhline(level, color="gray", lw=0.8, ls="--")
    ax.set_xlabel("topic rank")
    ax.set_ylabel("cumulative coverage")
    ax.set_ylim(0.0, 1.02)
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sparsity_figure(curves, path):
    """Log average sorted topic-weight curves (already in log space)."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for label, curve in curves.items():
        curve = np.asarray(curve)
        ax.plot(np.arange(1, len(curve) + 1), curve, lw=1.4, label=str(label))
    ax.set_xlabel("sorted topic rank")
    ax.set_ylabel("log average weight")
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

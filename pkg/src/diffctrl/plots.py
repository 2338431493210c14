"""Figure rendering for run reports; every plot lands next to its CSV/JSON source."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "save_history_plot",
    "save_ensemble_scatter",
    "save_marginal_hist",
    "save_tracking_error_plot",
]


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def save_history_plot(epochs, cost, final_kl, path) -> Path:
    """Training curves: tracking cost and final-snapshot KL per epoch."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(epochs, cost, color="tab:blue", lw=1.2)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("tracking cost")
    ax1.set_yscale("log")
    ax1.grid(True, alpha=0.4)
    ax2.plot(epochs, final_kl, color="tab:red", lw=1.2)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("final KL estimate")
    ax2.grid(True, alpha=0.4)
    fig.tight_layout()
    return _finish(fig, path)


def save_ensemble_scatter(final_states, target_states, path, coords=(0, 1)) -> Path:
    """Controlled final cloud against the target cloud on two coordinates."""
    i, j = coords
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    ax.scatter(target_states[:, i], target_states[:, j], s=6, alpha=0.45,
               color="tab:gray", label="target samples")
    ax.scatter(final_states[:, i], final_states[:, j], s=6, alpha=0.45,
               color="tab:blue", label="controlled final")
    ax.set_xlabel(f"x{i + 1}")
    ax.set_ylabel(f"x{j + 1}")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def save_marginal_hist(states, path, bins=40) -> Path:
    """Per-coordinate marginal histograms of a snapshot."""
    d = states.shape[1]
    ncols = min(d, 5)
    nrows = (d + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(2.6 * ncols, 2.3 * nrows), squeeze=False)
    for k in range(d):
        ax = axes[k // ncols][k % ncols]
        ax.hist(states[:, k], bins=bins, density=True, color="tab:blue", alpha=0.8)
        ax.set_xlabel(f"x{k + 1}")
    for k in range(d, nrows * ncols):
        axes[k // ncols][k % ncols].axis("off")
    fig.tight_layout()
    return _finish(fig, path)


def save_tracking_error_plot(times, rel_l2_error, path) -> Path:
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(times, rel_l2_error, color="tab:blue", lw=1.2)
    ax.set_xlabel("reverse time")
    ax.set_ylabel("relative L2 tracking error")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.4)
    return _finish(fig, path)

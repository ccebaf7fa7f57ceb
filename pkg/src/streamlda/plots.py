"""Figure rendering for run, evaluation, and sweep outputs.

Figures are written next to the delimited tables the CLI emits; everything
here consumes already-computed results, so the core pipeline never imports
matplotlib.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .engine import Mutation, StreamOutcome
from .metrics import AccuracyResult, SweepRow

__all__ = ["save_accuracy_figure", "save_run_figure", "save_sweep_figure"]


def save_run_figure(
    outcomes: list[StreamOutcome],
    path,
    task_boundaries: tuple[int, ...] = (),
) -> Path:
    """Cumulative oracle queries and discovered classes over the stream."""
    asks = np.cumsum([1 if o.asked else 0 for o in outcomes])
    created = np.cumsum([1 if o.mutation is Mutation.CREATED else 0 for o in outcomes])
    pos = np.arange(1, len(outcomes) + 1)

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(pos, asks, color="tab:blue")
    ax1.set_ylabel("cumulative oracle queries")
    ax2.plot(pos, created, color="tab:orange")
    ax2.set_ylabel("classes discovered")
    ax2.set_xlabel("stream position")
    for ax in (ax1, ax2):
        for b in task_boundaries[:-1]:
            ax.axvline(b, color="gray", linestyle=":", linewidth=0.8)
        ax.grid(True, alpha=0.3)
    fig.suptitle("Stream run")
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def save_sweep_figure(rows: list[SweepRow], path) -> Path:
    """Accuracy and query cost against the promotion threshold."""
    th = [r.th for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(th, [100 * r.total_accuracy for r in rows], "o-", label="total")
    ax1.plot(th, [100 * r.id_accuracy for r in rows], "s-", label="initial classes")
    ax1.plot(th, [100 * r.ood_accuracy for r in rows], "^-", label="new classes")
    ax1.set_xlabel("promotion threshold")
    ax1.set_ylabel("accuracy (%)")
    ax1.legend()
    ax1.grid(True, alpha=0.3)
    ax2.plot(th, [r.asks for r in rows], "o-", color="tab:red", label="oracle queries")
    ax2.plot(
        th,
        [r.asks_yielding_new for r in rows],
        "s-",
        color="tab:purple",
        label="queries that taught",
    )
    ax2.set_xlabel("promotion threshold")
    ax2.set_ylabel("count")
    ax2.legend()
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def save_accuracy_figure(acc: AccuracyResult, path) -> Path:
    """Bar chart of total / initial-class / new-class accuracy."""
    fig, ax = plt.subplots(figsize=(5, 4))
    names = ["total", "initial classes", "new classes"]
    values = [100 * acc.total, 100 * acc.id_accuracy, 100 * acc.ood_accuracy]
    bars = ax.bar(names, values, color=["tab:blue", "tab:green", "tab:orange"])
    ax.bar_label(bars, fmt="%.1f")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 105)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out

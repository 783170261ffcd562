"""Figure rendering for CLI reports.

Every report path writes plot-ready CSV as the normative artifact; these
helpers additionally render the same data as PNG files for quick inspection.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EpisodeReport
from .score import PianoRoll


def save_roll_figure(roll: PianoRoll, path: str | Path, title: str = "") -> None:
    """Raster view of the goal roll: time on x, key index on y."""
    fig, ax = plt.subplots(figsize=(10, 4))
    if roll.num_frames:
        extent = (0.0, roll.num_frames * roll.dt, -0.5, 87.5)
        ax.imshow(
            roll.frames.T,
            aspect="auto",
            origin="lower",
            interpolation="nearest",
            cmap="Greys",
            extent=extent,
        )
    ax.set_xlabel("time [s]")
    ax.set_ylabel("key index")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_episode_figure(
    report: EpisodeReport,
    rewards: list[dict[str, float]],
    dt: float,
    path: str | Path,
    title: str = "",
) -> None:
    """Per-frame F1 plus reward terms over the episode."""
    fig, (ax_f1, ax_rew) = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    if report.frames:
        times = np.array([s.frame for s in report.frames]) * dt
        ax_f1.plot(times, [s.f1 for s in report.frames], ".-", label="F1", lw=0.8)
        ax_f1.plot(times, [s.precision for s in report.frames], alpha=0.4, label="precision")
        ax_f1.plot(times, [s.recall for s in report.frames], alpha=0.4, label="recall")
    ax_f1.set_ylabel("framewise score")
    ax_f1.set_ylim(-0.05, 1.05)
    ax_f1.legend(loc="lower right", fontsize=8)
    ax_f1.set_title(title or f"episode F1 = {report.f1:.3f}")
    if rewards:
        times = np.arange(len(rewards)) * dt
        for term in ("key", "finger", "total"):
            ax_rew.plot(times, [r[term] for r in rewards], label=term, lw=0.8)
    ax_rew.set_xlabel("time [s]")
    ax_rew.set_ylabel("reward")
    ax_rew.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(
    rows: list[dict],
    axis_name: str,
    path: str | Path,
) -> None:
    """F1 per sweep cell: one marker per seed, a line through per-value means."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    values = sorted({row["value"] for row in rows})
    means = []
    for v in values:
        cell = [row["f1"] for row in rows if row["value"] == v]
        ax.plot([v] * len(cell), cell, "o", color="tab:blue", alpha=0.5, ms=5)
        means.append(sum(cell) / len(cell))
    ax.plot(values, means, "-", color="tab:blue", label="mean F1")
    ax.set_xlabel(axis_name)
    ax.set_ylabel("episode F1")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

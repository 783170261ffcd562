"""Framewise precision/recall/F1 between played and goal key activations.

Frames where both the goal and the played set are empty carry no information
and are skipped; every other frame contributes its own precision, recall, and
F1, and the episode score is the unweighted mean over the evaluated frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrameScore:
    frame: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EpisodeReport:
    """Episode-level musical score plus the per-frame breakdown."""

    precision: float
    recall: float
    f1: float
    f1_from_means: float  # harmonic mean of the averaged P and R, for cross-benchmark comparison
    frames: tuple[FrameScore, ...]
    frames_evaluated: int
    frames_skipped: int
    reward_totals: dict[str, float] = field(default_factory=dict)

    def counting_silence(self) -> tuple[float, float, float]:
        """Alternative aggregate where skipped silent frames count as perfect."""
        total = self.frames_evaluated + self.frames_skipped
        if total == 0:
            return 1.0, 1.0, 1.0
        n = self.frames_evaluated
        p = (self.precision * n + self.frames_skipped) / total
        r = (self.recall * n + self.frames_skipped) / total
        f1 = (self.f1 * n + self.frames_skipped) / total
        return p, r, f1

    def to_kv(self) -> str:
        """Flat key=value record, one field per line, keys sorted."""
        silence_p, silence_r, silence_f1 = self.counting_silence()
        fields = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "f1_from_means": self.f1_from_means,
            "f1_counting_silence": silence_f1,
            "precision_counting_silence": silence_p,
            "recall_counting_silence": silence_r,
            "frames_evaluated": self.frames_evaluated,
            "frames_skipped": self.frames_skipped,
        }
        for name, value in self.reward_totals.items():
            fields[f"reward_{name}"] = value
        return "\n".join(f"{k}={fields[k]!r}" for k in sorted(fields)) + "\n"

    def frame_csv_rows(self) -> list[str]:
        """One CSV row per scored frame: frame,precision,recall,f1."""
        return [f"{s.frame},{s.precision!r},{s.recall!r},{s.f1!r}" for s in self.frames]


def frame_prf(goal: np.ndarray, played: np.ndarray) -> tuple[float, float, float] | None:
    """Precision/recall/F1 of one frame, or None when the frame is skipped.

    Empty-goal, empty-played frames are skipped.  When there are no positives
    to precision (or recall) over, that term is vacuously 1; F1 is 0 when both
    precision and recall are 0.
    """
    goal = np.asarray(goal, dtype=bool)
    played = np.asarray(played, dtype=bool)
    tp = int(np.sum(goal & played))
    fp = int(np.sum(~goal & played))
    fn = int(np.sum(goal & ~played))
    if tp + fp + fn == 0:
        return None
    p = tp / (tp + fp) if tp + fp else 1.0
    r = tp / (tp + fn) if tp + fn else 1.0
    f1 = 0.0 if p == 0.0 and r == 0.0 else 2.0 * p * r / (p + r)
    return p, r, f1


class RunningPrf:
    """Streaming accumulator of the framewise score."""

    def __init__(self):
        self.sum_p = 0.0
        self.sum_r = 0.0
        self.sum_f1 = 0.0
        self.evaluated = 0
        self.skipped = 0
        self.frames: list[FrameScore] = []

    def update(self, frame: int, goal: np.ndarray, played: np.ndarray) -> None:
        scored = frame_prf(goal, played)
        if scored is None:
            self.skipped += 1
            return
        p, r, f1 = scored
        self.sum_p += p
        self.sum_r += r
        self.sum_f1 += f1
        self.evaluated += 1
        self.frames.append(FrameScore(frame=frame, precision=p, recall=r, f1=f1))

    def means(self) -> tuple[float, float, float]:
        """(precision, recall, f1) so far; (1, 1, 1) when nothing was evaluated."""
        if self.evaluated == 0:
            return 1.0, 1.0, 1.0
        n = self.evaluated
        return self.sum_p / n, self.sum_r / n, self.sum_f1 / n

    def report(self, reward_totals: dict[str, float] | None = None) -> EpisodeReport:
        p, r, f1 = self.means()
        if self.evaluated == 0:
            log.warning("all %d frames were silent and skipped; reporting perfect scores", self.skipped)
        f1m = 0.0 if p == 0.0 and r == 0.0 else 2.0 * p * r / (p + r)
        return EpisodeReport(
            precision=p,
            recall=r,
            f1=f1,
            f1_from_means=f1m,
            frames=tuple(self.frames),
            frames_evaluated=self.evaluated,
            frames_skipped=self.skipped,
            reward_totals=dict(reward_totals or {}),
        )


def episode_prf(goal_roll: np.ndarray, played_roll: np.ndarray) -> EpisodeReport:
    """Score a whole episode of aligned (F, 88) goal and played activations."""
    goal_roll = np.asarray(goal_roll, dtype=bool)
    played_roll = np.asarray(played_roll, dtype=bool)
    if goal_roll.shape != played_roll.shape:
        raise ValueError(f"goal shape {goal_roll.shape} != played shape {played_roll.shape}")
    running = RunningPrf()
    for f in range(goal_roll.shape[0]):
        running.update(f, goal_roll[f], played_roll[f])
    return running.report()

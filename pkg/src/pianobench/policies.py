"""Reference policies: trivial baselines and an open-loop monophonic tracker.

A policy is a callable ``(observation, frame_index, rng) -> action``; the rng
argument lets stochastic policies stay reproducible under per-episode seeding.
"""

from __future__ import annotations

import math

import numpy as np

from ._sim import ACTION_DIM, finger_dofs
from .env import Observation, PianoEnv


def zero_policy(obs: Observation, t: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """All-zero raw action: hands hover mid-range, no key ever activates."""
    return np.zeros(ACTION_DIM)


def random_policy(obs: Observation, t: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, ACTION_DIM)


class ScriptedTracker:
    """Open-loop script for (mostly) monophonic songs.

    For each note the hand base moves so the note's finger rests over the key
    center, the press starts ``press_lead`` control frames before the note's
    first goal frame (to absorb the PD rise time), and releases on the frame
    after its last goal frame.  Chords work when their fingering matches the
    rest spread of the hand; truly polyphonic scores are out of scope.
    """

    def __init__(
        self,
        env: PianoEnv,
        press_lead: int = 3,
        base_lead: int = 8,
        default_finger: int = 2,
    ):
        plant = env.plant
        dt = env.config.dt_control
        frames = env.num_frames
        actions = np.zeros((max(frames, 1), ACTION_DIM))
        # Default pose: bases hold their reset positions, presses released.
        reset_raw = plant.encode(plant.reset_q, False)
        base_dofs = {finger_dofs(0)[0], finger_dofs(5)[0]}
        for dof in base_dofs:
            actions[:, dof] = reset_raw[dof]
        for f in range(10):
            actions[:, finger_dofs(f)[2]] = -1.0  # press 0

        last_stop: dict[int, int] = {}
        for note in env.score.notes:
            finger = note.finger if note.finger is not None else default_finger
            base_dof, offset_dof, press_dof = finger_dofs(finger)
            first = int(math.ceil(note.onset / dt - 0.5 - 1e-9))
            stop = int(math.ceil(note.offset / dt - 0.5 - 1e-9))
            first = max(first, 0)
            stop = min(stop, frames)
            if stop <= first:
                continue
            base_x = plant.layout.centers[note.key] - plant.reset_q[offset_dof]
            base_raw = 2.0 * (base_x - plant.lo[base_dof]) / plant.span[base_dof] - 1.0
            base_raw = float(np.clip(base_raw, -1.0, 1.0))
            move_from = max(first - base_lead, 0)
            actions[move_from:, base_dof] = base_raw
            # Leave at least one released frame between repeats on the same finger.
            press_from = max(first - press_lead, 0, last_stop.get(press_dof, -1) + 1)
            actions[press_from:stop, press_dof] = 1.0
            last_stop[press_dof] = stop
        if frames:
            actions[:, ACTION_DIM - 1] = np.where(env.roll.sustain, 1.0, 0.0)
        self._actions = actions
        self._frames = frames

    def __call__(self, obs: Observation, t: int, rng: np.random.Generator | None = None) -> np.ndarray:
        idx = min(max(t, 0), self._actions.shape[0] - 1)
        return self._actions[idx].copy()

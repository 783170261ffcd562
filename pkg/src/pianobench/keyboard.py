"""Spring-loaded keyboard: 88 keys with first-order return, sustain latch, geometry.

Each key carries a normalized depression in [0, 1] that relaxes exponentially
toward a commanded penetration.  A key is *active* once its depression reaches
the activation threshold (by default within 0.5 degrees of a 5-degree full
travel, i.e. 0.9 normalized); active keys sound, and the sustain latch keeps
previously active keys sounding after release.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

NUM_KEYS = 88

# Pitch classes (mod 12) of the black keys: C#, D#, F#, G#, A#.
_BLACK_PCS = frozenset({1, 3, 6, 8, 10})


@dataclass(frozen=True)
class KeyboardConfig:
    """Key dynamics and horizontal geometry."""

    key_tau: float = 0.01  # seconds; first-order return time constant
    travel_deg: float = 5.0  # full key travel
    activation_margin_deg: float = 0.5  # active within this margin of full travel
    white_key_pitch: float = 0.0235  # meters between adjacent white-key centers
    black_key_width: float = 0.011  # meters

    def __post_init__(self):
        if self.key_tau <= 0:
            raise ValueError("key_tau must be positive")
        if not 0 < self.activation_margin_deg < self.travel_deg:
            raise ValueError("activation margin must lie inside the key travel")
        if not 0 < self.black_key_width < self.white_key_pitch:
            raise ValueError("black keys must be narrower than the white-key pitch")

    @property
    def activation_threshold(self) -> float:
        """Normalized depression at which a key activates."""
        return (self.travel_deg - self.activation_margin_deg) / self.travel_deg


@dataclass(frozen=True)
class KeyboardState:
    """Value-typed keyboard snapshot."""

    depression: np.ndarray  # (88,) float64 in [0, 1], read-only
    sustained: bool = False
    sounding: frozenset[int] = frozenset()
    just_struck: frozenset[int] = frozenset()

    @staticmethod
    def rest() -> "KeyboardState":
        d = np.zeros(NUM_KEYS)
        d.setflags(write=False)
        return KeyboardState(depression=d)


def decay_depression(depression: np.ndarray, load: np.ndarray, decay: float) -> np.ndarray:
    """One first-order step toward ``load``: d' = load + (d - load) * decay."""
    return load + (depression - load) * decay


def sounding_mask(sounding: np.ndarray, active: np.ndarray, latched) -> np.ndarray:
    """Next sounding set: active keys plus latched holdovers."""
    return active | (sounding & latched)


def step_keys(
    state: KeyboardState,
    load: np.ndarray,
    sustain_cmd: float,
    dt_physics: float,
    *,
    tau: float = 0.01,
    threshold: float = 0.9,
) -> KeyboardState:
    """Advance all keys by one physics step under commanded penetrations.

    Loads are clamped to [0, 1] and never rejected.  The sustain latch engages
    at ``sustain_cmd >= 0.5``; while latched, keys that deactivate stay in the
    sounding set, and releasing the latch drops all non-active sounding keys
    immediately.
    """
    if dt_physics <= 0:
        raise ValueError("dt_physics must be positive")
    load = np.clip(np.asarray(load, dtype=np.float64), 0.0, 1.0)
    decay = math.exp(-dt_physics / tau)
    prev_active = state.depression >= threshold
    depression = decay_depression(state.depression, load, decay)
    active = depression >= threshold
    latched = bool(sustain_cmd >= 0.5)
    prev_sounding = np.zeros(NUM_KEYS, dtype=bool)
    if state.sounding:
        prev_sounding[list(state.sounding)] = True
    sounding = sounding_mask(prev_sounding, active, latched)
    struck = active & ~prev_active
    depression.setflags(write=False)
    return KeyboardState(
        depression=depression,
        sustained=latched,
        sounding=frozenset(np.nonzero(sounding)[0].tolist()),
        just_struck=frozenset(np.nonzero(struck)[0].tolist()),
    )


def active_keys(state: KeyboardState, threshold: float = 0.9) -> set[int]:
    """Keys whose depression has reached the activation threshold (closed)."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return set(np.nonzero(state.depression >= threshold)[0].tolist())


def synth_events(
    sounding_sets: Iterable[frozenset[int] | set[int]], times: Sequence[float]
) -> list[str]:
    """Render sounding-set transitions as ``event,key,time`` records.

    One record per key entering (``note_on``) or leaving (``note_off``) the
    sounding set, suitable for newline-delimited audition/debug dumps.
    """
    lines: list[str] = []
    previous: frozenset[int] = frozenset()
    for current, t in zip(sounding_sets, times):
        current = frozenset(current)
        for key in sorted(current - previous):
            lines.append(f"note_on,{key},{t!r}")
        for key in sorted(previous - current):
            lines.append(f"note_off,{key},{t!r}")
        previous = current
    return lines


class KeyLayout:
    """Horizontal 88-key geometry.

    White keys sit on a uniform pitch; each black key is centered on the
    boundary between its neighboring white keys at the standard skip
    positions.  Key extents are disjoint: white extents shrink where a black
    key overlaps the boundary, and a point exactly on a shared edge resolves
    to the black key (the nearer center).
    """

    def __init__(self, white_pitch: float = 0.0235, black_width: float = 0.011):
        if not 0 < black_width < white_pitch:
            raise ValueError("black keys must be narrower than the white-key pitch")
        self.white_pitch = white_pitch
        self.black_width = black_width

        n_white = sum(1 for p in range(21, 109) if p % 12 not in _BLACK_PCS)
        self.num_white = n_white

        centers = np.zeros(NUM_KEYS)
        lo = np.zeros(NUM_KEYS)
        hi = np.zeros(NUM_KEYS)
        is_black = np.zeros(NUM_KEYS, dtype=bool)
        white_of_slot = np.full(n_white, -1, dtype=np.intp)
        black_left = np.full(n_white, -1, dtype=np.intp)  # black key at slot's left edge
        black_right = np.full(n_white, -1, dtype=np.intp)

        white_count = 0
        half = black_width / 2
        for k in range(NUM_KEYS):
            pitch_class = (k + 21) % 12
            if pitch_class in _BLACK_PCS:
                boundary = white_count * white_pitch
                centers[k] = boundary
                lo[k] = boundary - half
                hi[k] = boundary + half
                is_black[k] = True
                black_right[white_count - 1] = k
                black_left[white_count] = k
            else:
                slot = white_count
                centers[k] = (slot + 0.5) * white_pitch
                lo[k] = slot * white_pitch
                hi[k] = (slot + 1) * white_pitch
                white_of_slot[slot] = k
                white_count += 1
        # Trim white extents where a black key claims the boundary.
        for slot in range(n_white):
            k = white_of_slot[slot]
            if black_left[slot] >= 0:
                lo[k] = slot * white_pitch + half
            if black_right[slot] >= 0:
                hi[k] = (slot + 1) * white_pitch - half

        for arr in (centers, lo, hi, is_black, white_of_slot, black_left, black_right):
            arr.setflags(write=False)
        self.centers = centers
        self.lo = lo
        self.hi = hi
        self.is_black = is_black
        self._white_of_slot = white_of_slot
        self._black_left = black_left
        self._black_right = black_right

    @property
    def extent(self) -> tuple[float, float]:
        return 0.0, self.num_white * self.white_pitch

    def key_at(self, x) -> np.ndarray:
        """Key index under each position ``x`` (meters); -1 where no key.

        Vectorized; points on a shared black/white edge resolve to the black
        key, whose center is nearer.
        """
        x = np.asarray(x, dtype=np.float64)
        slot = np.floor_divide(x, self.white_pitch).astype(np.intp)
        valid = (slot >= 0) & (slot < self.num_white)
        slot_c = np.clip(slot, 0, self.num_white - 1)
        within = x - slot_c * self.white_pitch
        half = self.black_width / 2
        left = self._black_left[slot_c]
        right = self._black_right[slot_c]
        key = self._white_of_slot[slot_c].copy()
        take_left = (left >= 0) & (within <= half)
        take_right = (right >= 0) & (within >= self.white_pitch - half)
        key = np.where(take_right, right, key)
        key = np.where(take_left, left, key)
        return np.where(valid, key, -1)

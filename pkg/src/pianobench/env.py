"""Finite-horizon piano-playing MDP.

One episode walks a piano roll frame by frame: each control step tracks one
action for ``dt_control`` seconds, scores the keyboard against the goal frame
just attempted, and exposes the next frame plus ``lookahead`` future frames in
the observation.  The episode ends when the roll is exhausted.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from ._sim import ACTION_DIM, LEFT_BASE_DOF, N_HAND_DOFS, RIGHT_BASE_DOF, Plant, SimState
from .hands import ActionMask, HandConfig, substep_count
from .keyboard import KeyboardConfig
from .metrics import EpisodeReport, RunningPrf
from .score import NUM_FINGERS, NUM_KEYS, PianoRoll, Score, to_piano_roll

_TOLERANCE_SCALE = math.sqrt(-2.0 * math.log(0.1))

FALSE_POSITIVE_SOURCES = ("sounding", "active")


class EpisodeStateError(RuntimeError):
    """Raised when step() is used before reset() or after the episode ends."""


@dataclass(frozen=True)
class EnvConfig:
    """Everything that parameterizes one environment instance."""

    dt_control: float = 0.05
    dt_physics: float = 0.005
    lookahead: int = 10
    w_key: float = 1.0
    w_finger: float = 1.0
    w_energy: float = 0.005
    key_bounds: float = 0.05
    key_margin: float = 0.5
    finger_bounds: float = 0.01
    finger_margin: float = 0.1
    discount: float = 0.99  # carried for external agents; the env never uses it
    action_mask: str | tuple[int, ...] = "full"  # preset name or frozen dims
    false_positive_source: str = "sounding"
    hands: HandConfig = field(default_factory=HandConfig)
    keyboard: KeyboardConfig = field(default_factory=KeyboardConfig)

    def __post_init__(self):
        substep_count(self.dt_control, self.dt_physics)  # validates the ratio
        if self.lookahead < 0:
            raise ValueError("lookahead must be >= 0")
        if min(self.w_key, self.w_finger, self.w_energy) < 0:
            raise ValueError("reward weights must be >= 0")
        if self.key_margin <= 0 or self.finger_margin <= 0:
            raise ValueError("tolerance margins must be positive")
        if self.key_bounds < 0 or self.finger_bounds < 0:
            raise ValueError("tolerance bounds must be >= 0")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.false_positive_source not in FALSE_POSITIVE_SOURCES:
            raise ValueError(f"false_positive_source must be one of {FALSE_POSITIVE_SOURCES}")
        if not isinstance(self.action_mask, str):
            object.__setattr__(self, "action_mask", tuple(int(d) for d in self.action_mask))
        ActionMask.from_spec(self.action_mask)

    @property
    def substeps(self) -> int:
        return substep_count(self.dt_control, self.dt_physics)


def env_config_to_dict(cfg: EnvConfig) -> dict:
    return asdict(cfg)


def env_config_from_dict(data: dict) -> EnvConfig:
    data = dict(data)
    hands = HandConfig(**data.pop("hands", {}))
    keyboard = KeyboardConfig(**data.pop("keyboard", {}))
    return EnvConfig(hands=hands, keyboard=keyboard, **data)


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-step reward terms and their weighted total."""

    key: float
    finger: float
    energy: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {"key": self.key, "finger": self.finger, "energy": self.energy, "total": self.total}


@dataclass(frozen=True)
class Observation:
    """Proprioception plus the goal block for the current and future frames."""

    hand_positions: np.ndarray  # (22,)
    hand_velocities: np.ndarray  # (22,)
    forearm: np.ndarray  # (6,) left (x, y, z), right (x, y, z); y and z are fixed
    key_depression: np.ndarray  # (88,)
    goal: np.ndarray  # (L+1, 88) bool, rows t..t+L, zero-padded past the end
    goal_fingers: np.ndarray  # (L+1, 10) bool
    goal_sustain: np.ndarray  # (L+1,) bool

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.hand_positions,
                self.hand_velocities,
                self.forearm,
                self.key_depression,
                self.goal.astype(np.float64).ravel(),
                self.goal_fingers.astype(np.float64).ravel(),
                self.goal_sustain.astype(np.float64),
            ]
        )

    @staticmethod
    def dim(lookahead: int) -> int:
        return 2 * N_HAND_DOFS + 6 + NUM_KEYS + (lookahead + 1) * (NUM_KEYS + NUM_FINGERS + 1)


# ---------------------------------------------------------------------------
# Reward primitives
# ---------------------------------------------------------------------------


def tolerance(d: float, bounds: float, margin: float) -> float:
    """Distance-to-reward shaping: 1 inside ``bounds``, Gaussian tail outside.

    The tail is scaled so the value at ``bounds + margin`` is exactly 0.1.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    if bounds < 0:
        raise ValueError("bounds must be >= 0")
    if d < 0:
        raise ValueError("distance must be >= 0")
    if d <= bounds:
        return 1.0
    z = _TOLERANCE_SCALE * (d - bounds) / margin
    return math.exp(-0.5 * z * z)


def reward_key(
    depressions: np.ndarray,
    goal_keys: np.ndarray,
    false_positive: bool,
    bounds: float = 0.05,
    margin: float = 0.5,
) -> float:
    """Key-press reward: shaped depression of goal keys, flat wrong-key penalty.

    The depression term is the mean of ``tolerance(|d - 1|)`` over the goal
    keys, vacuously 1 when the goal frame is empty.  The penalty term is a
    constant 0.5 whenever any key outside the goal sounds, regardless of how
    many keys are wrong.
    """
    if len(goal_keys) == 0:
        pressed = 1.0
    else:
        total = 0.0
        for k in goal_keys:
            total += tolerance(abs(float(depressions[k]) - 1.0), bounds, margin)
        pressed = total / len(goal_keys)
    return 0.5 * pressed + 0.5 * (0.0 if false_positive else 1.0)


def reward_finger(
    labeled: tuple[tuple[int, int], ...],
    fingertip_x: np.ndarray,
    key_centers: np.ndarray,
    bounds: float = 0.01,
    margin: float = 0.1,
) -> float:
    """Fingering reward: mean shaped fingertip-to-key distance over labeled notes.

    Vacuously 1 when the frame carries no finger labels, which disables the
    prior on unannotated songs.
    """
    if not labeled:
        return 1.0
    total = 0.0
    for key, finger in labeled:
        d = abs(float(fingertip_x[finger]) - float(key_centers[key]))
        total += tolerance(d, bounds, margin)
    return total / len(labeled)


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


@dataclass
class EnvSnapshot:
    """Cloneable dynamic state: cheap value copy for planner rollouts."""

    sim: SimState
    frame: int

    def copy(self) -> "EnvSnapshot":
        return EnvSnapshot(sim=self.sim.copy(), frame=self.frame)


class PianoEnv:
    """One song, one plant, one episode at a time."""

    def __init__(self, score: Score, config: EnvConfig | None = None, capture_events: bool = False):
        self.config = config or EnvConfig()
        self.score = score
        self.roll: PianoRoll = to_piano_roll(score, self.config.dt_control)
        mask = ActionMask.from_spec(self.config.action_mask)
        self.plant = Plant(
            self.config.hands, self.config.keyboard, self.config.dt_physics,
            frozen_action=mask.as_array(),
        )
        self._goal_idx = [np.nonzero(row)[0] for row in self.roll.frames]
        self._capture_events = capture_events
        self._sim: SimState | None = None
        self._frame = 0
        self._done = True
        self._seed: int | None = None
        self._running = RunningPrf()
        self._reward_sums = {"key": 0.0, "finger": 0.0, "energy": 0.0, "total": 0.0}
        self._breakdowns: list[RewardBreakdown] = []
        self._trace: list[dict] = []
        self._events: list[str] = []
        self._prev_sounding: frozenset[int] = frozenset()

    # -- episode bookkeeping --------------------------------------------

    @property
    def num_frames(self) -> int:
        return self.roll.num_frames

    @property
    def frame(self) -> int:
        return self._frame

    @property
    def done(self) -> bool:
        return self._done

    @property
    def action_dim(self) -> int:
        return ACTION_DIM

    @property
    def observation_dim(self) -> int:
        return Observation.dim(self.config.lookahead)

    @property
    def key_centers(self) -> np.ndarray:
        return self.plant.layout.centers

    def goal_indices(self, frame: int) -> np.ndarray:
        if 0 <= frame < self.num_frames:
            return self._goal_idx[frame]
        return np.empty(0, dtype=np.intp)

    def labeled_pairs(self, frame: int) -> tuple[tuple[int, int], ...]:
        if 0 <= frame < self.num_frames:
            return self.roll.labeled[frame]
        return ()

    def reset(self, seed: int | None = None) -> Observation:
        """Start a fresh episode; the initial state is deterministic.

        The seed is recorded for reproducibility metadata only.
        """
        self._seed = seed
        self._sim = self.plant.make_state(1)
        self._frame = 0
        self._done = self.num_frames == 0
        self._running = RunningPrf()
        self._reward_sums = {"key": 0.0, "finger": 0.0, "energy": 0.0, "total": 0.0}
        self._breakdowns = []
        self._trace = []
        self._events = []
        self._prev_sounding = frozenset()
        return self._observation()

    def step(self, action: np.ndarray) -> tuple[Observation, RewardBreakdown, bool, dict]:
        """Track one action for a control step and score the attempted frame."""
        if self._sim is None:
            raise EpisodeStateError("reset() must be called before step()")
        if self._done:
            raise EpisodeStateError("episode is done; call reset()")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (ACTION_DIM,):
            raise ValueError(f"action shape {action.shape} != ({ACTION_DIM},)")

        cfg = self.config
        t = self._frame
        energy_arr, rec = self.plant.advance(
            self._sim, action, cfg.substeps, record=self._capture_events
        )
        r_energy = float(energy_arr[0])

        depressions = self._sim.key_d[0]
        goal_mask = self.roll.frames[t]
        goal_keys = self._goal_idx[t]
        active = depressions >= self.plant.threshold
        sounding = self._sim.sounding[0]
        fp_from = sounding if cfg.false_positive_source == "sounding" else active
        false_positive = bool(np.any(fp_from & ~goal_mask))

        r_key = reward_key(depressions, goal_keys, false_positive, cfg.key_bounds, cfg.key_margin)
        tips = self.plant.fingertips(self._sim.q)[0]
        r_finger = reward_finger(
            self.roll.labeled[t], tips, self.key_centers, cfg.finger_bounds, cfg.finger_margin
        )
        r_total = cfg.w_key * r_key + cfg.w_finger * r_finger - cfg.w_energy * r_energy
        breakdown = RewardBreakdown(key=r_key, finger=r_finger, energy=r_energy, total=r_total)

        self._running.update(t, goal_mask, active)
        self._reward_sums["key"] += r_key
        self._reward_sums["finger"] += r_finger
        self._reward_sums["energy"] += r_energy
        self._reward_sums["total"] += r_total
        self._breakdowns.append(breakdown)

        if self._capture_events and rec is not None:
            base_time = t * cfg.dt_control
            for k in range(rec["sounding"].shape[0]):
                now = frozenset(np.nonzero(rec["sounding"][k, 0])[0].tolist())
                time = base_time + (k + 1) * cfg.dt_physics
                for key in sorted(now - self._prev_sounding):
                    self._events.append(f"note_on,{key},{time!r}")
                for key in sorted(self._prev_sounding - now):
                    self._events.append(f"note_off,{key},{time!r}")
                self._prev_sounding = now

        self._frame = t + 1
        self._done = self._frame >= self.num_frames
        obs = self._observation()

        p, r, f1 = self._running.means()
        info = {
            "frame": t,
            "precision": p,
            "recall": r,
            "f1": f1,
            "frames_evaluated": self._running.evaluated,
            "frames_skipped": self._running.skipped,
            "reward_sums": dict(self._reward_sums),
        }
        self._trace.append(
            {
                "step": t,
                "obs_hash": _hash_vector(obs.vector()),
                "action": [float(a) for a in action],
                "reward": breakdown.as_dict(),
            }
        )
        return obs, breakdown, self._done, info

    # -- state access ------------------------------------------------------

    def snapshot(self) -> EnvSnapshot:
        if self._sim is None:
            raise EpisodeStateError("reset() must be called before snapshot()")
        return EnvSnapshot(sim=self._sim.copy(), frame=self._frame)

    def restore(self, snap: EnvSnapshot) -> None:
        self._sim = snap.sim.copy()
        self._frame = snap.frame
        self._done = self._frame >= self.num_frames if self.num_frames else True

    def state_hash(self) -> str:
        """Digest of the dynamic state, for no-mutation checks."""
        if self._sim is None:
            return "unset"
        h = hashlib.sha256()
        for arr in (self._sim.q, self._sim.v, self._sim.key_d):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(np.ascontiguousarray(self._sim.sounding).tobytes())
        h.update(np.ascontiguousarray(self._sim.latched).tobytes())
        h.update(self._frame.to_bytes(8, "little"))
        return h.hexdigest()

    def keyboard_view(self) -> tuple[np.ndarray, set[int], bool]:
        """(depressions, sounding keys, latch) of the live state."""
        if self._sim is None:
            raise EpisodeStateError("reset() must be called first")
        sounding = set(np.nonzero(self._sim.sounding[0])[0].tolist())
        return self._sim.key_d[0].copy(), sounding, bool(self._sim.latched[0])

    def episode_report(self) -> EpisodeReport:
        return self._running.report(reward_totals=dict(self._reward_sums))

    def reward_breakdowns(self) -> tuple[RewardBreakdown, ...]:
        return tuple(self._breakdowns)

    def trace_lines(self) -> list[str]:
        """Per-step trace records (observation hash, action, reward) as JSON lines."""
        return [json.dumps(rec, sort_keys=True, separators=(",", ":")) for rec in self._trace]

    def synth_event_lines(self) -> list[str]:
        """note_on/note_off records captured when capture_events is set."""
        return list(self._events)

    # -- observation ---------------------------------------------------------

    def _observation(self) -> Observation:
        cfg = self.config
        window = cfg.lookahead + 1
        t = self._frame
        goal = np.zeros((window, NUM_KEYS), dtype=bool)
        fingers = np.zeros((window, NUM_FINGERS), dtype=bool)
        sustain = np.zeros(window, dtype=bool)
        if self.num_frames:
            n = max(0, min(window, self.num_frames - t))
            if n > 0:
                goal[:n] = self.roll.frames[t : t + n]
                fingers[:n] = self.roll.fingers[t : t + n]
                sustain[:n] = self.roll.sustain[t : t + n]
        sim = self._sim if self._sim is not None else self.plant.make_state(1)
        q = sim.q[0].copy()
        v = sim.v[0].copy()
        forearm = np.array(
            [
                q[LEFT_BASE_DOF], cfg.hands.forearm_y, cfg.hands.forearm_z,
                q[RIGHT_BASE_DOF], cfg.hands.forearm_y, cfg.hands.forearm_z,
            ]
        )
        return Observation(
            hand_positions=q,
            hand_velocities=v,
            forearm=forearm,
            key_depression=sim.key_d[0].copy(),
            goal=goal,
            goal_fingers=fingers,
            goal_sustain=sustain,
        )


def _hash_vector(vec: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(vec, dtype=np.float64).tobytes()).hexdigest()

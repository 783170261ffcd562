"""Bimanual piano-playing control benchmark.

Parse musical scores into timed key-press goals, simulate a spring-keyed
piano played by a simplified two-hand plant, score performances framewise,
plan with sampling-based MPC, and serve environments to external agents.
"""

from .env import (
    EnvConfig,
    EpisodeStateError,
    Observation,
    PianoEnv,
    RewardBreakdown,
    reward_finger,
    reward_key,
    tolerance,
)
from .hands import ActionMask, HandConfig, HandState, apply_action, energy, make_plant
from .keyboard import KeyboardConfig, KeyboardState, KeyLayout, active_keys, step_keys
from .metrics import EpisodeReport, episode_prf, frame_prf
from .planner import (
    CostBreakdown,
    NominalPlan,
    PlannerConfig,
    control_loop,
    improve,
    rollout_cost,
)
from .score import (
    MidiParseError,
    NoteEvent,
    PianoRoll,
    Score,
    attach_fingering,
    parse_fingering,
    parse_midi,
    score_from_text,
    score_to_text,
    to_piano_roll,
)
from .service import PianoServer, Session, TrajectoryWriter, log_trajectories, read_trajectory
from .songs import get_song, song_names

__version__ = "0.1.0"

__all__ = [
    "ActionMask",
    "CostBreakdown",
    "EnvConfig",
    "EpisodeReport",
    "EpisodeStateError",
    "HandConfig",
    "HandState",
    "KeyboardConfig",
    "KeyboardState",
    "KeyLayout",
    "MidiParseError",
    "NominalPlan",
    "NoteEvent",
    "Observation",
    "PianoEnv",
    "PianoRoll",
    "PianoServer",
    "PlannerConfig",
    "RewardBreakdown",
    "Score",
    "Session",
    "TrajectoryWriter",
    "active_keys",
    "apply_action",
    "attach_fingering",
    "control_loop",
    "energy",
    "episode_prf",
    "frame_prf",
    "get_song",
    "improve",
    "log_trajectories",
    "make_plant",
    "parse_fingering",
    "parse_midi",
    "read_trajectory",
    "reward_finger",
    "reward_key",
    "rollout_cost",
    "score_from_text",
    "score_to_text",
    "song_names",
    "step_keys",
    "to_piano_roll",
    "tolerance",
]

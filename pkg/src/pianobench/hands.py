"""Simplified bimanual plant: per-hand base translation, finger offsets, presses.

Each hand contributes 11 degrees of freedom (base position along the keyboard
plus a lateral offset and a press depth per finger); one extra scalar drives
the sustain pedal, for 23 action dimensions total.  Targets decoded from the
action are tracked by critically damped PD at the physics rate, and a
fingertip loads whichever key lies under its world position with its press
depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._sim import (
    ACTION_DIM,
    N_FINGERS,
    N_HAND_DOFS,
    LEFT_BASE_DOF,
    RIGHT_BASE_DOF,
    Plant,
    SimState,
    finger_dofs,
)
from .keyboard import KeyboardConfig

FINGER_NAMES = (
    "right_thumb", "right_index", "right_middle", "right_ring", "right_little",
    "left_thumb", "left_index", "left_middle", "left_ring", "left_little",
)


@dataclass(frozen=True)
class HandConfig:
    """Gains, geometry, and limits of the simplified hand plant."""

    kp: float = 400.0  # PD stiffness, 1/s^2
    kd: float | None = None  # defaults to 2*sqrt(kp), critical damping
    finger_spacing: float = 0.0235  # rest gap between adjacent fingertips, meters
    finger_reach: float = 0.047  # lateral travel around each finger's rest offset
    left_base_start: float = 0.388  # reset base positions, meters along the keys
    right_base_start: float = 0.717
    forearm_y: float = 0.15  # fixed forearm coordinates reported in observations
    forearm_z: float = 0.13
    overlap_tol: float = 0.0  # how far adjacent fingers may cross, meters

    def __post_init__(self):
        if self.kp <= 0:
            raise ValueError("kp must be positive")
        if self.kd is not None and self.kd < 0:
            raise ValueError("kd must be >= 0")
        if self.finger_reach <= 0 or self.finger_spacing <= 0:
            raise ValueError("finger geometry must be positive")
        if self.overlap_tol < 0:
            raise ValueError("overlap_tol must be >= 0")

    @property
    def kd_value(self) -> float:
        return self.kd if self.kd is not None else 2.0 * math.sqrt(self.kp)


@dataclass(frozen=True)
class ActionMask:
    """Subset of action dimensions frozen at their reset-pose defaults."""

    frozen: tuple[bool, ...] = (False,) * ACTION_DIM
    name: str = "full"

    def __post_init__(self):
        if len(self.frozen) != ACTION_DIM:
            raise ValueError(f"mask must cover {ACTION_DIM} dimensions")

    @staticmethod
    def full() -> "ActionMask":
        return ActionMask()

    @staticmethod
    def reduced() -> "ActionMask":
        """Freeze the ten lateral finger offsets; fingers ride the hand base."""
        frozen = [False] * ACTION_DIM
        for f in range(N_FINGERS):
            _, offset_dof, _ = finger_dofs(f)
            frozen[offset_dof] = True
        return ActionMask(frozen=tuple(frozen), name="reduced")

    @staticmethod
    def preset(name: str) -> "ActionMask":
        presets = {"full": ActionMask.full, "reduced": ActionMask.reduced}
        if name not in presets:
            raise ValueError(f"unknown mask preset {name!r}; choose from {sorted(presets)}")
        return presets[name]()

    @staticmethod
    def from_spec(spec: "str | Sequence[int]") -> "ActionMask":
        """Build a mask from a preset name or an explicit list of frozen dims."""
        if isinstance(spec, str):
            return ActionMask.preset(spec)
        frozen = [False] * ACTION_DIM
        for dim in spec:
            if not 0 <= int(dim) < ACTION_DIM:
                raise ValueError(f"mask dimension {dim} outside 0..{ACTION_DIM - 1}")
            frozen[int(dim)] = True
        return ActionMask(frozen=tuple(frozen), name="custom")

    def as_array(self) -> np.ndarray:
        return np.array(self.frozen, dtype=bool)


def action_labels() -> list[str]:
    """Human-readable names of the 23 action dimensions, in wire order."""
    labels = [""] * ACTION_DIM
    labels[LEFT_BASE_DOF] = "left_base"
    labels[RIGHT_BASE_DOF] = "right_base"
    for f, name in enumerate(FINGER_NAMES):
        _, offset_dof, press_dof = finger_dofs(f)
        labels[offset_dof] = f"{name}_offset"
        labels[press_dof] = f"{name}_press"
    labels[ACTION_DIM - 1] = "sustain"
    return labels


@dataclass(frozen=True)
class HandState:
    """Value-typed snapshot of all hand DOFs and their velocities."""

    positions: np.ndarray  # (22,) read-only
    velocities: np.ndarray  # (22,) read-only

    def fingertip_x(self) -> np.ndarray:
        """World x of the ten fingertips, ordered by finger index."""
        out = np.empty(N_FINGERS)
        for f in range(N_FINGERS):
            base, offset, _ = finger_dofs(f)
            out[f] = self.positions[base] + self.positions[offset]
        return out

    def press(self, finger: int) -> float:
        return float(self.positions[finger_dofs(finger)[2]])


@dataclass(frozen=True)
class StepTrajectory:
    """Per-substep record of one control step, as produced by apply_action."""

    positions: np.ndarray  # (n, 22)
    velocities: np.ndarray  # (n, 22)
    forces: np.ndarray  # (n, 22) PD outputs (zero on frozen DOFs)
    loads: np.ndarray  # (n, 88) commanded key penetrations
    dt_physics: float

    @property
    def final(self) -> HandState:
        p = self.positions[-1].copy()
        v = self.velocities[-1].copy()
        p.setflags(write=False)
        v.setflags(write=False)
        return HandState(positions=p, velocities=v)


def make_plant(
    hands: HandConfig | None = None,
    keyboard: KeyboardConfig | None = None,
    dt_physics: float = 0.005,
    mask: ActionMask | None = None,
) -> Plant:
    """Build the stepping kernel for a configuration."""
    hands = hands or HandConfig()
    keyboard = keyboard or KeyboardConfig()
    mask = mask or ActionMask.full()
    return Plant(hands, keyboard, dt_physics, frozen_action=mask.as_array())


def rest_state(plant: Plant) -> HandState:
    q = plant.reset_q.copy()
    v = np.zeros(N_HAND_DOFS)
    q.setflags(write=False)
    v.setflags(write=False)
    return HandState(positions=q, velocities=v)


def apply_action(
    state: HandState,
    action: np.ndarray,
    dt_control: float,
    dt_physics: float,
    plant: Plant,
) -> tuple[StepTrajectory, np.ndarray]:
    """Track one action for a full control step.

    Returns the substep trajectory and the per-substep key loads the
    fingertips commanded, ready for the keyboard integrator.  ``dt_control``
    must be an integer multiple of ``dt_physics``.
    """
    n = substep_count(dt_control, dt_physics)
    if abs(plant.dt - dt_physics) > 1e-12:
        raise ValueError("plant was built for a different physics timestep")
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (ACTION_DIM,):
        raise ValueError(f"action shape {action.shape} != ({ACTION_DIM},)")
    sim = plant.make_state(1)
    sim.q[0] = state.positions
    sim.v[0] = state.velocities
    _, rec = plant.advance(sim, action, n, record=True)
    assert rec is not None
    traj = StepTrajectory(
        positions=rec["q"][:, 0],
        velocities=rec["v"][:, 0],
        forces=rec["force"][:, 0],
        loads=rec["loads"][:, 0],
        dt_physics=dt_physics,
    )
    return traj, rec["loads"][:, 0]


def energy(trajectory: StepTrajectory) -> float:
    """Work-rate integral sum(|pd force| * |velocity|) * dt over the step."""
    total = 0.0
    for k in range(trajectory.forces.shape[0]):
        total += float(
            np.sum(np.abs(trajectory.forces[k]) * np.abs(trajectory.velocities[k]))
        ) * trajectory.dt_physics
    return total


def substep_count(dt_control: float, dt_physics: float) -> int:
    """Number of physics substeps per control step; must divide evenly."""
    if dt_control <= 0 or dt_physics <= 0:
        raise ValueError("timesteps must be positive")
    ratio = dt_control / dt_physics
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9:
        raise ValueError(f"dt_control {dt_control} is not an integer multiple of dt_physics {dt_physics}")
    return n

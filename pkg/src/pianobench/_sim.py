"""Lockstep batched stepping of the bimanual plant and the keyboard.

The planner evaluates many candidate action sequences against clones of the
same environment state, so the integrator works on arrays with a leading
batch dimension: row ``i`` is one independent plant.  Elementwise IEEE
arithmetic makes row results identical regardless of how rows are grouped
into batches, which is what keeps candidate evaluation order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .keyboard import NUM_KEYS, KeyLayout, KeyboardConfig, decay_depression, sounding_mask

N_HAND_DOFS = 22
ACTION_DIM = 23  # 22 joint targets + 1 sustain scalar
N_FINGERS = 10

LEFT_BASE_DOF = 0
RIGHT_BASE_DOF = 11

# Per-hand DOF block: [base, offset thumb..little, press thumb..little].
_OFFSET0 = 1
_PRESS0 = 6


def finger_dofs(finger: int) -> tuple[int, int, int]:
    """(base, offset, press) DOF indices for finger 0..9."""
    if not 0 <= finger < N_FINGERS:
        raise ValueError(f"finger {finger} outside 0..9")
    block = RIGHT_BASE_DOF if finger < 5 else LEFT_BASE_DOF
    local = finger % 5
    return block, block + _OFFSET0 + local, block + _PRESS0 + local


@dataclass
class SimState:
    """Mutable batched plant state; one row per independent simulation."""

    q: np.ndarray  # (M, 22) DOF positions
    v: np.ndarray  # (M, 22) DOF velocities
    key_d: np.ndarray  # (M, 88) key depressions
    sounding: np.ndarray  # (M, 88) bool
    latched: np.ndarray  # (M,) bool
    struck: np.ndarray  # (M, 88) bool; activations gained on the last substep

    @property
    def batch(self) -> int:
        return self.q.shape[0]

    def copy(self) -> "SimState":
        return SimState(
            q=self.q.copy(),
            v=self.v.copy(),
            key_d=self.key_d.copy(),
            sounding=self.sounding.copy(),
            latched=self.latched.copy(),
            struck=self.struck.copy(),
        )

    def tile(self, m: int) -> "SimState":
        """Replicate a single-row state into an ``m``-row batch."""
        if self.batch != 1:
            raise ValueError("tile expects a single-row state")
        return SimState(
            q=np.repeat(self.q, m, axis=0),
            v=np.repeat(self.v, m, axis=0),
            key_d=np.repeat(self.key_d, m, axis=0),
            sounding=np.repeat(self.sounding, m, axis=0),
            latched=np.repeat(self.latched, m),
            struck=np.repeat(self.struck, m, axis=0),
        )


class Plant:
    """Precomputed constants for stepping hands plus keyboard as one unit."""

    def __init__(
        self,
        hands_cfg,
        keyboard_cfg: KeyboardConfig,
        dt_physics: float,
        frozen_action: np.ndarray | None = None,
    ):
        if dt_physics <= 0:
            raise ValueError("dt_physics must be positive")
        self.dt = dt_physics
        self.kp = hands_cfg.kp
        self.kd = hands_cfg.kd if hands_cfg.kd is not None else 2.0 * math.sqrt(hands_cfg.kp)
        self.layout = KeyLayout(keyboard_cfg.white_key_pitch, keyboard_cfg.black_key_width)
        self.decay = math.exp(-dt_physics / keyboard_cfg.key_tau)
        self.threshold = keyboard_cfg.activation_threshold
        self.overlap_tol = hands_cfg.overlap_tol

        spacing = hands_cfg.finger_spacing
        reach = hands_cfg.finger_reach
        lo = np.zeros(N_HAND_DOFS)
        hi = np.zeros(N_HAND_DOFS)
        rest = np.zeros(N_HAND_DOFS)
        x_min, x_max = self.layout.extent
        for base, start in ((LEFT_BASE_DOF, hands_cfg.left_base_start), (RIGHT_BASE_DOF, hands_cfg.right_base_start)):
            lo[base], hi[base] = x_min, x_max
            rest[base] = start
            sign = 1.0 if base == RIGHT_BASE_DOF else -1.0  # thumb toward low x on the right hand
            for local in range(5):
                r = sign * (local - 2) * spacing
                d = base + _OFFSET0 + local
                rest[d] = r
                lo[d], hi[d] = r - reach, r + reach
                p = base + _PRESS0 + local
                lo[p], hi[p] = 0.0, 1.0
                rest[p] = 0.0
        self.lo = lo
        self.hi = hi
        self.span = hi - lo
        self.reset_q = rest

        # Fingers 0..4 right thumb..little, 5..9 left thumb..little.
        dofs = np.array([finger_dofs(f) for f in range(N_FINGERS)], dtype=np.intp)
        self.finger_base = dofs[:, 0].copy()
        self.finger_offset = dofs[:, 1].copy()
        self.finger_press = dofs[:, 2].copy()

        # Offset DOFs per hand in ascending world-x order; a running max along
        # each row enforces the no-crossing constraint.
        left_ascending = [LEFT_BASE_DOF + _OFFSET0 + local for local in (4, 3, 2, 1, 0)]
        right_ascending = [RIGHT_BASE_DOF + _OFFSET0 + local for local in (0, 1, 2, 3, 4)]
        self.order_cols = np.array([left_ascending, right_ascending], dtype=np.intp)
        self._order_flat = self.order_cols.reshape(-1)
        ordered_lo = lo[self.order_cols]
        if not (np.diff(ordered_lo, axis=1) >= 0).all():
            raise ValueError("offset ranges must ascend along each hand's finger order")

        if frozen_action is None:
            frozen_action = np.zeros(ACTION_DIM, dtype=bool)
        self.frozen_action = np.asarray(frozen_action, dtype=bool).copy()
        if self.frozen_action.shape != (ACTION_DIM,):
            raise ValueError(f"action mask must have {ACTION_DIM} entries")
        self.frozen_dof = self.frozen_action[:N_HAND_DOFS].copy()
        self.default_raw = self.encode(self.reset_q, False)
        for arr in (self.lo, self.hi, self.span, self.reset_q, self.finger_base,
                    self.finger_offset, self.finger_press, self.order_cols,
                    self._order_flat, self.frozen_action, self.frozen_dof,
                    self.default_raw):
            arr.setflags(write=False)

    # -- state construction -------------------------------------------------

    def make_state(self, m: int = 1) -> SimState:
        return SimState(
            q=np.tile(self.reset_q, (m, 1)),
            v=np.zeros((m, N_HAND_DOFS)),
            key_d=np.zeros((m, NUM_KEYS)),
            sounding=np.zeros((m, NUM_KEYS), dtype=bool),
            latched=np.zeros(m, dtype=bool),
            struck=np.zeros((m, NUM_KEYS), dtype=bool),
        )

    # -- action coding ------------------------------------------------------

    def decode(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map raw actions in [-1, 1] to joint targets and a sustain command.

        Masked dimensions are replaced by their frozen defaults.  The sustain
        scalar clips to [0, 1], so non-positive raw values release the pedal.
        """
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        if raw.shape[1] != ACTION_DIM:
            raise ValueError(f"action has {raw.shape[1]} dims, expected {ACTION_DIM}")
        raw = np.clip(raw, -1.0, 1.0)
        raw = np.where(self.frozen_action, self.default_raw, raw)
        targets = self.lo + (raw[:, :N_HAND_DOFS] + 1.0) * 0.5 * self.span
        sustain = np.clip(raw[:, N_HAND_DOFS], 0.0, 1.0)
        return targets, sustain

    def encode(self, q: np.ndarray, latched: bool) -> np.ndarray:
        """Raw action whose targets reproduce ``q`` and the latch state."""
        raw = np.empty(ACTION_DIM)
        raw[:N_HAND_DOFS] = 2.0 * (q - self.lo) / self.span - 1.0
        raw[N_HAND_DOFS] = 1.0 if latched else 0.0
        return raw

    # -- geometry -----------------------------------------------------------

    def fingertips(self, q: np.ndarray) -> np.ndarray:
        """World x of each fingertip, shape (M, 10)."""
        return q[:, self.finger_base] + q[:, self.finger_offset]

    # -- integration --------------------------------------------------------

    def advance(
        self,
        state: SimState,
        raw: np.ndarray,
        n_substeps: int,
        record: bool = False,
    ) -> tuple[np.ndarray, dict[str, np.ndarray] | None]:
        """Hold one action for ``n_substeps`` physics steps, in place.

        Returns the per-row energy integral sum(|pd force| * |velocity|) * dt
        accumulated over the substeps, plus per-substep arrays when
        ``record`` is set (positions, velocities, forces, key loads, sounding).
        """
        targets, sustain = self.decode(raw)
        latch = sustain >= 0.5
        state.latched = np.broadcast_to(latch, state.latched.shape).copy()

        q, v = state.q, state.v
        m = q.shape[0]
        dt, kp, kd = self.dt, self.kp, self.kd
        rows = np.arange(m)[:, None]
        energy = np.zeros(m)
        tol_ramp = self.overlap_tol * np.arange(5)
        rec: dict[str, list[np.ndarray]] | None = (
            {"q": [], "v": [], "force": [], "loads": [], "sounding": []} if record else None
        )

        for _ in range(n_substeps):
            force = kp * (targets - q) - kd * v
            force[:, self.frozen_dof] = 0.0
            v += dt * force
            v[:, self.frozen_dof] = 0.0
            q += dt * v
            # Hard range limits: clamp and kill the velocity at the stop.
            clamped_lo = q < self.lo
            clamped_hi = q > self.hi
            np.clip(q, self.lo, self.hi, out=q)
            v[clamped_lo | clamped_hi] = 0.0
            # No-crossing constraint: fingers may not reorder past overlap_tol.
            gathered = q[:, self.order_cols] + tol_ramp  # (M, 2, 5)
            pushed = (np.maximum.accumulate(gathered, axis=2) - tol_ramp).reshape(m, -1)
            moved = pushed > q[:, self._order_flat]
            if moved.any():
                q[:, self._order_flat] = pushed
                v_cols = v[:, self._order_flat]
                v_cols[moved] = 0.0
                v[:, self._order_flat] = v_cols
            energy += np.sum(np.abs(force) * np.abs(v), axis=1) * dt

            # Fingertips load the key under them with their press depth.
            tips = q[:, self.finger_base] + q[:, self.finger_offset]
            keys = self.layout.key_at(tips)
            press = q[:, self.finger_press]
            loads = np.zeros((m, NUM_KEYS))
            valid = keys >= 0
            if valid.any():
                r_idx = np.broadcast_to(rows, keys.shape)[valid]
                np.maximum.at(loads, (r_idx, keys[valid]), press[valid])
            prev_active = state.key_d >= self.threshold
            state.key_d = decay_depression(state.key_d, loads, self.decay)
            active = state.key_d >= self.threshold
            state.sounding = sounding_mask(state.sounding, active, state.latched[:, None])
            state.struck = active & ~prev_active
            if rec is not None:
                rec["q"].append(q.copy())
                rec["v"].append(v.copy())
                rec["force"].append(force)
                rec["loads"].append(loads)
                rec["sounding"].append(state.sounding.copy())

        stacked = {k: np.stack(vals) for k, vals in rec.items()} if rec is not None else None
        return energy, stacked

"""Sampling-based model-predictive control.

The planner carries a nominal action sequence parameterized by a small number
of spline control points.  Every planning iteration perturbs the nominal with
Gaussian noise, rolls each candidate out on clones of the environment state,
and keeps the cheapest sequence; every control step the winning spline's first
value is executed and the nominal is shifted one control step into the future.
Rollout costs are raw distances (no reward shaping): the mean shortfall of
goal-key depressions plus a flat false-positive penalty, and the mean
fingertip-to-key distance for labeled notes.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, field, replace

import numpy as np

from ._sim import ACTION_DIM, Plant
from .env import EnvSnapshot, Observation, PianoEnv, RewardBreakdown
from .hands import substep_count
from .metrics import EpisodeReport

SPLINE_KINDS = ("zero", "linear", "cubic")
_NODE_SNAP = 1e-9


def spline_times(horizon: float, n_points: int) -> np.ndarray:
    return np.linspace(0.0, horizon, n_points)


def spline_value(points: np.ndarray, horizon: float, tau: float, kind: str) -> np.ndarray:
    """Evaluate batched splines (M, P, A) at time ``tau``; returns (M, A).

    Control points are interpolated exactly: times within ``1e-9`` segments of
    a node return that node's value bit-for-bit.  Cubic interpolation is
    local Catmull-Rom with clamped end tangents, clipped to action bounds.
    """
    if kind not in SPLINE_KINDS:
        raise ValueError(f"spline kind {kind!r} not in {SPLINE_KINDS}")
    n_points = points.shape[1]
    if n_points < 2:
        raise ValueError("a plan needs at least 2 control points")
    tau = min(max(tau, 0.0), horizon)
    seg = horizon / (n_points - 1)
    k = tau / seg
    nearest = int(round(k))
    if abs(k - nearest) < _NODE_SNAP and 0 <= nearest < n_points:
        return points[:, nearest].copy()
    j = min(max(int(k), 0), n_points - 2)
    s = k - j
    if kind == "zero":
        return points[:, j].copy()
    if kind == "linear":
        return (1.0 - s) * points[:, j] + s * points[:, j + 1]
    p0 = points[:, max(j - 1, 0)]
    p1 = points[:, j]
    p2 = points[:, j + 1]
    p3 = points[:, min(j + 2, n_points - 1)]
    s2 = s * s
    s3 = s2 * s
    value = 0.5 * (
        2.0 * p1
        + (p2 - p0) * s
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * s2
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * s3
    )
    return np.clip(value, -1.0, 1.0)


@dataclass(frozen=True)
class NominalPlan:
    """Incumbent spline-parameterized action sequence over the plan horizon."""

    points: np.ndarray  # (P, A), values within [-1, 1]
    horizon: float
    kind: str = "cubic"

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] < 2:
            raise ValueError("plan needs a (P>=2, A) control-point matrix")
        if self.kind not in SPLINE_KINDS:
            raise ValueError(f"spline kind {self.kind!r} not in {SPLINE_KINDS}")

    def value(self, tau: float) -> np.ndarray:
        return spline_value(self.points[None], self.horizon, tau, self.kind)[0]

    def shifted(self, delta: float) -> "NominalPlan":
        """Warm start: resample ``delta`` seconds later, holding the last point."""
        times = spline_times(self.horizon, self.points.shape[0])
        new_points = np.stack(
            [self.value(min(t + delta, self.horizon)) for t in times]
        )
        return replace(self, points=new_points)

    @staticmethod
    def zeros(horizon: float, n_points: int, kind: str = "cubic") -> "NominalPlan":
        return NominalPlan(points=np.zeros((n_points, ACTION_DIM)), horizon=horizon, kind=kind)


@dataclass(frozen=True)
class PlannerConfig:
    candidates: int = 10  # Gaussian samples per improvement iteration
    sigma: float = 0.05  # sampling standard deviation in raw action units
    plan_horizon: float = 0.2  # seconds simulated per rollout
    dt_plan: float = 0.01  # spline sampling period during rollouts
    dt_physics_plan: float = 0.005  # rollout integrator step
    spline_points: int = 2
    spline_kind: str = "cubic"
    iterations: int = 10  # improvement iterations per control step
    budget_s: float | None = None  # wall-clock cap per control step, if set
    seed: int = 0
    workers: int = 1  # candidate-evaluation batches reduced order-independently

    def __post_init__(self):
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not self.plan_horizon >= self.dt_plan > 0:
            raise ValueError("need plan_horizon >= dt_plan > 0")
        if self.spline_points < 2:
            raise ValueError("spline_points must be >= 2")
        if self.spline_kind not in SPLINE_KINDS:
            raise ValueError(f"spline kind {self.spline_kind!r} not in {SPLINE_KINDS}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        substep_count(self.dt_plan, self.dt_physics_plan)
        substep_count(self.plan_horizon, self.dt_plan)


def planner_config_to_dict(cfg: PlannerConfig) -> dict:
    return asdict(cfg)


def planner_config_from_dict(data: dict) -> PlannerConfig:
    return PlannerConfig(**data)


@dataclass(frozen=True)
class CostBreakdown:
    """Rollout cost: key-press and fingering terms, per step and summed."""

    key: float
    finger: float
    step_key: tuple[float, ...] = ()
    step_finger: tuple[float, ...] = ()

    @property
    def total(self) -> float:
        return self.key + self.finger


class _RolloutContext:
    """Precomputed pieces shared by every rollout of one (env, config) pair."""

    def __init__(self, env: PianoEnv, cfg: PlannerConfig):
        env_cfg = env.config
        if abs(cfg.dt_physics_plan - env_cfg.dt_physics) <= 1e-12:
            self.plant: Plant = env.plant
        else:
            self.plant = Plant(
                env_cfg.hands, env_cfg.keyboard, cfg.dt_physics_plan,
                frozen_action=env.plant.frozen_action,
            )
        self.n_sub_plan = substep_count(cfg.dt_plan, cfg.dt_physics_plan)
        self.subs_per_control = substep_count(env_cfg.dt_control, cfg.dt_physics_plan)
        self.n_plan_steps = substep_count(cfg.plan_horizon, cfg.dt_plan)
        self.centers = env.key_centers
        self.fp_sounding = env_cfg.false_positive_source == "sounding"
        self.env = env


def _rollout(
    ctx: _RolloutContext,
    snapshot: EnvSnapshot,
    points: np.ndarray,
    cfg: PlannerConfig,
    record_steps: bool = False,
) -> tuple[np.ndarray, np.ndarray, list[tuple[float, float]]]:
    """Roll a batch of plans from one snapshot; returns per-plan cost sums."""
    m = points.shape[0]
    sim = snapshot.sim.tile(m)
    base_sub = snapshot.frame * ctx.subs_per_control
    key_cost = np.zeros(m)
    finger_cost = np.zeros(m)
    steps: list[tuple[float, float]] = []
    env = ctx.env
    roll = env.roll
    threshold = ctx.plant.threshold

    for k in range(ctx.n_plan_steps):
        raw = spline_value(points, cfg.plan_horizon, k * cfg.dt_plan, cfg.spline_kind)
        ctx.plant.advance(sim, raw, ctx.n_sub_plan)
        end_sub = base_sub + (k + 1) * ctx.n_sub_plan
        frame = (end_sub - 1) // ctx.subs_per_control

        goal_idx = env.goal_indices(frame)
        if len(goal_idx):
            ck = 0.5 * np.mean(np.abs(sim.key_d[:, goal_idx] - 1.0), axis=1)
            goal_mask = roll.frames[frame]
        else:
            ck = np.zeros(m)
            goal_mask = False
        fp_from = sim.sounding if ctx.fp_sounding else sim.key_d >= threshold
        fp = np.any(fp_from & ~goal_mask, axis=1)
        ck = ck + 0.5 * fp

        labeled = env.labeled_pairs(frame)
        if labeled:
            tips = ctx.plant.fingertips(sim.q)
            dists = np.stack(
                [np.abs(tips[:, finger] - ctx.centers[key]) for key, finger in labeled]
            )
            cf = np.mean(dists, axis=0)
        else:
            cf = np.zeros(m)

        key_cost += ck
        finger_cost += cf
        if record_steps:
            steps.append((float(ck[0]), float(cf[0])))
    return key_cost, finger_cost, steps


def rollout_cost(
    env: PianoEnv,
    plan: NominalPlan,
    config: PlannerConfig,
    snapshot: EnvSnapshot | None = None,
) -> CostBreakdown:
    """Simulate one plan from a snapshot of the live state and sum its cost."""
    if plan.points.shape[1] != ACTION_DIM:
        raise ValueError(f"plan action dim {plan.points.shape[1]} != {ACTION_DIM}")
    ctx = _RolloutContext(env, config)
    snap = snapshot.copy() if snapshot is not None else env.snapshot()
    key, finger, steps = _rollout(ctx, snap, plan.points[None], config, record_steps=True)
    return CostBreakdown(
        key=float(key[0]),
        finger=float(finger[0]),
        step_key=tuple(s[0] for s in steps),
        step_finger=tuple(s[1] for s in steps),
    )


def _evaluate_candidates(
    ctx: _RolloutContext,
    snapshot: EnvSnapshot,
    all_points: np.ndarray,
    cfg: PlannerConfig,
) -> np.ndarray:
    """Total cost of each candidate; chunked evaluation reduces by row index,
    so results are independent of batch splitting and completion order."""
    m = all_points.shape[0]
    costs = np.empty(m)

    def eval_chunk(idx: np.ndarray) -> None:
        key, finger, _ = _rollout(ctx, snapshot, all_points[idx], cfg)
        costs[idx] = key + finger

    if cfg.workers <= 1 or m <= 1:
        eval_chunk(np.arange(m))
    else:
        chunks = [c for c in np.array_split(np.arange(m), cfg.workers) if len(c)]
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(eval_chunk, chunks))
    return costs


def improve(
    nominal: NominalPlan,
    env: PianoEnv,
    config: PlannerConfig,
    rng: np.random.Generator,
    snapshot: EnvSnapshot | None = None,
    _ctx: _RolloutContext | None = None,
) -> NominalPlan:
    """One predictive-sampling iteration: keep the cheapest of nominal + N samples.

    Ties favor the incumbent nominal, then the lowest candidate index, so the
    reduction is deterministic under any evaluation order.
    """
    ctx = _ctx if _ctx is not None else _RolloutContext(env, config)
    snap = snapshot if snapshot is not None else env.snapshot()
    noise = rng.normal(0.0, config.sigma, size=(config.candidates,) + nominal.points.shape)
    candidates = np.clip(nominal.points[None] + noise, -1.0, 1.0)
    all_points = np.concatenate([nominal.points[None], candidates], axis=0)
    costs = _evaluate_candidates(ctx, snap, all_points, config)
    best = 0
    for i in range(1, all_points.shape[0]):
        if costs[i] < costs[best]:
            best = i
    if best == 0:
        return nominal
    return replace(nominal, points=all_points[best])


@dataclass
class ControlLoopResult:
    actions: np.ndarray  # (F, 23) executed actions
    report: EpisodeReport
    observations: list[Observation]  # length F+1, reset observation first
    rewards: list[RewardBreakdown]
    infos: list[dict]
    stats: list[dict]  # per control step: iterations run, incumbent cost


def control_loop(
    env: PianoEnv,
    config: PlannerConfig,
    iterations: int | None = None,
    budget_s: float | None = None,
) -> ControlLoopResult:
    """Re-plan every control step and execute the incumbent's first action.

    In iteration mode the loop is bit-deterministic for a fixed seed.  With a
    wall-clock budget the iteration count per step depends on timing, so only
    the per-iteration outcomes stay deterministic.
    """
    iters = config.iterations if iterations is None else iterations
    budget = config.budget_s if budget_s is None else budget_s
    if budget is None and iters is None:
        raise ValueError("need an iteration cap or a wall-clock budget")
    rng = np.random.default_rng(config.seed)
    ctx = _RolloutContext(env, config)
    nominal = NominalPlan.zeros(config.plan_horizon, config.spline_points, config.spline_kind)

    obs = env.reset(seed=config.seed)
    observations = [obs]
    actions: list[np.ndarray] = []
    rewards: list[RewardBreakdown] = []
    infos: list[dict] = []
    stats: list[dict] = []

    while not env.done:
        snap = env.snapshot()
        ran = 0
        deadline = None if budget is None else time.monotonic() + budget
        while True:
            if iters is not None and ran >= iters:
                break
            nominal = improve(nominal, env, config, rng, snapshot=snap, _ctx=ctx)
            ran += 1
            if deadline is not None and time.monotonic() >= deadline:
                break
        action = nominal.value(0.0)
        obs, reward, done, info = env.step(action)
        observations.append(obs)
        actions.append(action)
        rewards.append(reward)
        infos.append(info)
        stats.append({"frame": info["frame"], "iterations": ran})
        nominal = nominal.shifted(env.config.dt_control)

    trace = np.stack(actions) if actions else np.zeros((0, ACTION_DIM))
    return ControlLoopResult(
        actions=trace,
        report=env.episode_report(),
        observations=observations,
        rewards=rewards,
        infos=infos,
        stats=stats,
    )

"""Environment: tolerance shaping, reward formulas, episode stepping."""

import math

import numpy as np
import pytest

from pianobench.env import (
    EnvConfig,
    EpisodeStateError,
    Observation,
    PianoEnv,
    env_config_from_dict,
    env_config_to_dict,
    reward_finger,
    reward_key,
    tolerance,
)
from pianobench.hands import HandConfig
from pianobench.policies import ScriptedTracker, random_policy, zero_policy
from pianobench.score import NoteEvent, Score
from pianobench.songs import get_song

STIFF = EnvConfig(hands=HandConfig(kp=3600.0))


# ---------------------------------------------------------------------------
# tolerance
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("bounds,margin", [(0.05, 0.5), (0.01, 0.1)])
def test_tolerance_boundary_values(bounds, margin):
    assert tolerance(0.0, bounds, margin) == 1.0
    assert tolerance(bounds, bounds, margin) == 1.0
    assert abs(tolerance(bounds + margin, bounds, margin) - 0.1) < 1e-9


def test_tolerance_rejects_bad_margin():
    with pytest.raises(ValueError):
        tolerance(0.1, 0.05, 0.0)
    with pytest.raises(ValueError):
        tolerance(0.1, 0.05, -1.0)


def test_tolerance_is_continuous_and_non_increasing():
    bounds, margin = 0.05, 0.5
    grid = np.linspace(0.0, bounds + 4 * margin, 10_000)
    values = np.array([tolerance(float(d), bounds, margin) for d in grid])
    jumps = np.diff(values)
    assert jumps.max() < 1e-12  # never increases
    assert np.abs(jumps).max() < 1e-2  # no discontinuities on this grid


# ---------------------------------------------------------------------------
# reward_key / reward_finger
# ---------------------------------------------------------------------------


def test_reward_key_perfect_press():
    depressions = np.zeros(88)
    depressions[[10, 20]] = 1.0
    assert reward_key(depressions, np.array([10, 20]), False) == 1.0


def test_reward_key_untouched_goal_with_false_positive():
    # Goal keys at rest: distance 1.0; one wrong key sounding kills the
    # constant half regardless of how many keys are wrong.
    depressions = np.zeros(88)
    got = reward_key(depressions, np.array([10]), True, bounds=0.05, margin=0.5)
    c = math.sqrt(-2.0 * math.log(0.1))
    z = c * (1.0 - 0.05) / 0.5
    assert got == pytest.approx(0.5 * math.exp(-0.5 * z * z), abs=1e-15)


def test_reward_key_empty_goal_in_silence_is_perfect():
    assert reward_key(np.zeros(88), np.array([], dtype=int), False) == 1.0


def test_reward_finger_on_key_centers():
    tips = np.zeros(10)
    centers = np.zeros(88)
    assert reward_finger(((5, 0), (9, 3)), tips, centers) == 1.0


def test_reward_finger_vacuous_without_labels():
    assert reward_finger((), np.zeros(10), np.zeros(88)) == 1.0


def test_reward_finger_at_bounds_plus_margin():
    tips = np.zeros(10)
    tips[2] = 0.11
    centers = np.zeros(88)
    assert reward_finger(((40, 2),), tips, centers, bounds=0.01, margin=0.1) == pytest.approx(0.1, abs=1e-9)


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(dt_control=0.05, dt_physics=0.004)
    with pytest.raises(ValueError):
        EnvConfig(lookahead=-1)
    with pytest.raises(ValueError):
        EnvConfig(w_key=-1.0)
    with pytest.raises(ValueError):
        EnvConfig(discount=1.0)
    with pytest.raises(ValueError):
        EnvConfig(false_positive_source="loudness")
    with pytest.raises(ValueError):
        EnvConfig(action_mask="nope")


def test_config_dict_round_trip():
    cfg = EnvConfig(lookahead=4, hands=HandConfig(kp=900.0), action_mask="reduced")
    assert env_config_from_dict(env_config_to_dict(cfg)) == cfg


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


def test_zero_length_score_is_done_at_reset():
    env = PianoEnv(Score(duration=0.0))
    obs = env.reset()
    assert env.done
    assert not obs.goal.any()
    with pytest.raises(EpisodeStateError):
        env.step(np.zeros(23))


def test_step_before_reset_raises():
    env = PianoEnv(get_song("onenote"))
    with pytest.raises(EpisodeStateError):
        env.step(np.zeros(23))


def test_episode_length_equals_frame_count():
    env = PianoEnv(get_song("onenote"))
    rng = np.random.default_rng(0)
    obs = env.reset(seed=0)
    steps = 0
    while not env.done:
        obs, _, done, _ = env.step(random_policy(obs, steps, rng))
        steps += 1
    assert steps == env.num_frames == 30
    with pytest.raises(EpisodeStateError):
        env.step(np.zeros(23))


def test_bad_action_shape_rejected():
    env = PianoEnv(get_song("onenote"))
    env.reset()
    with pytest.raises(ValueError):
        env.step(np.zeros(22))


def test_scripted_oracle_reaches_perfect_f1_on_one_note_song():
    env = PianoEnv(get_song("onenote"), STIFF)
    policy = ScriptedTracker(env, press_lead=1, base_lead=6)
    obs = env.reset()
    t = 0
    while not env.done:
        obs, _, _, _ = env.step(policy(obs, t))
        t += 1
    report = env.episode_report()
    assert report.f1 == 1.0
    assert report.precision == 1.0
    assert report.recall == 1.0


def test_reward_identity_and_bounds_on_random_episode():
    cfg = EnvConfig()
    env = PianoEnv(get_song("scale"), cfg)
    rng = np.random.default_rng(1)
    obs = env.reset()
    t = 0
    while not env.done:
        _, rew, _, _ = env.step(random_policy(obs, t, rng))
        t += 1
        assert 0.0 <= rew.key <= 1.0
        assert 0.0 <= rew.finger <= 1.0
        assert rew.energy >= 0.0
        assert rew.total == cfg.w_key * rew.key + cfg.w_finger * rew.finger - cfg.w_energy * rew.energy
        assert rew.total <= cfg.w_key + cfg.w_finger + 1e-12


def test_observation_goal_block_mirrors_roll():
    env = PianoEnv(get_song("scale"))
    obs = env.reset()
    L = env.config.lookahead
    roll = env.roll
    rng = np.random.default_rng(2)
    t = 0
    while not env.done:
        # Goal rows at step t are roll frames t..t+L, zero-padded at the end.
        for row in range(L + 1):
            frame = t + row
            if frame < roll.num_frames:
                assert np.array_equal(obs.goal[row], roll.frames[frame])
                assert np.array_equal(obs.goal_fingers[row], roll.fingers[frame])
                assert obs.goal_sustain[row] == roll.sustain[frame]
            else:
                assert not obs.goal[row].any()
        obs, _, _, _ = env.step(rng.uniform(-1, 1, 23))
        t += 1
    assert not obs.goal.any()  # fully padded once the episode is over


def test_observation_dim_formula():
    for L in (0, 3, 10):
        env = PianoEnv(get_song("onenote"), EnvConfig(lookahead=L))
        obs = env.reset()
        assert obs.vector().shape == (Observation.dim(L),)
        assert env.observation_dim == 138 + (L + 1) * 99


def test_removing_labels_changes_only_finger_reward():
    labeled = get_song("scale")
    unlabeled = Score(
        notes=tuple(NoteEvent(n.pitch, n.onset, n.offset, None, n.velocity) for n in labeled.notes),
        sustain_intervals=labeled.sustain_intervals,
        title=labeled.title,
        duration=labeled.duration,
    )
    env_a = PianoEnv(labeled)
    env_b = PianoEnv(unlabeled)
    rng = np.random.default_rng(3)
    obs_a = env_a.reset()
    env_b.reset()
    t = 0
    while not env_a.done:
        action = rng.uniform(-1, 1, 23)
        _, rew_a, _, _ = env_a.step(action)
        _, rew_b, _, _ = env_b.step(action)
        assert rew_b.key == rew_a.key  # bit-exact: plant ignores labels
        assert rew_b.energy == rew_a.energy
        assert rew_b.finger == 1.0  # prior disabled on unlabeled songs
        t += 1


def test_episode_reward_accounting_is_bit_exact():
    env = PianoEnv(get_song("chord"))
    rng = np.random.default_rng(4)
    obs = env.reset()
    t = 0
    infos = []
    while not env.done:
        obs, _, _, info = env.step(random_policy(obs, t, rng))
        infos.append(info)
        t += 1
    sums = {"key": 0.0, "finger": 0.0, "energy": 0.0, "total": 0.0}
    for b in env.reward_breakdowns():
        sums["key"] += b.key
        sums["finger"] += b.finger
        sums["energy"] += b.energy
        sums["total"] += b.total
    assert infos[-1]["reward_sums"] == sums
    report = env.episode_report()
    assert report.reward_totals == sums


def test_false_positive_source_switch():
    # Sounding mode tolerates a sub-threshold resting finger; active mode too.
    # With the latch on and a key released, only sounding mode keeps penalizing.
    song = Score(notes=(NoteEvent(pitch=60, onset=1.2, offset=1.4),), duration=1.5)
    for source in ("sounding", "active"):
        env = PianoEnv(song, EnvConfig(false_positive_source=source, hands=HandConfig(kp=3600.0)))
        env.reset()
        hold = env.plant.encode(env.plant.reset_q, False)
        press = hold.copy()
        press[env.plant.finger_press[2]] = 1.0  # wrong key pressed hard
        press[22] = 1.0  # pedal down
        env.step(press)
        _, rew_pressed, _, _ = env.step(press)  # second step: press has crossed
        release = hold.copy()
        release[22] = 1.0  # keep the pedal down after letting go
        _, rew_released, _, _ = env.step(release)
        assert rew_pressed.key == pytest.approx(0.5)  # flat penalty while wrong key sounds
        if source == "sounding":
            assert rew_released.key == pytest.approx(0.5)  # latch keeps it sounding
        else:
            assert rew_released.key == pytest.approx(1.0)  # activation already gone


def test_trace_lines_are_deterministic():
    def run():
        env = PianoEnv(get_song("onenote"))
        rng = np.random.default_rng(5)
        obs = env.reset()
        t = 0
        while not env.done:
            obs, _, _, _ = env.step(random_policy(obs, t, rng))
            t += 1
        return env.trace_lines()

    assert run() == run()


def test_snapshot_restore_round_trip():
    env = PianoEnv(get_song("onenote"))
    rng = np.random.default_rng(6)
    obs = env.reset()
    for t in range(5):
        obs, _, _, _ = env.step(random_policy(obs, t, rng))
    snap = env.snapshot()
    h0 = env.state_hash()
    env.step(np.zeros(23))
    assert env.state_hash() != h0
    env.restore(snap)
    assert env.state_hash() == h0

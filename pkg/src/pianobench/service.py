"""Serve environments over a line-delimited JSON protocol; log trajectories.

One session owns one environment and processes messages strictly in order;
every request gets exactly one reply.  Messages are single-line JSON objects
with a ``kind`` field; floats are serialized with round-trip-exact ``repr``
formatting so determinism survives the wire.  The message grammar ships in
``docs/protocol.md``.
"""

from __future__ import annotations

import json
import logging
import socketserver
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, IO, Iterable, Sequence

import numpy as np

from .env import EnvConfig, EpisodeStateError, Observation, PianoEnv, env_config_to_dict
from .songs import get_song, song_names

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
TRAJECTORY_VERSION = 1

# Error codes carried in error replies.
BAD_MESSAGE = "bad_message"
VERSION_MISMATCH = "version_mismatch"
UNKNOWN_SONG = "unknown_song"
NO_EPISODE = "no_episode"
EPISODE_DONE = "episode_done"
BAD_ACTION = "bad_action"


def encode_message(message: dict) -> str:
    return json.dumps(message, sort_keys=True, separators=(",", ":"))


def parse_message(line: str) -> dict:
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(BAD_MESSAGE, f"not valid JSON: {exc}") from None
    if not isinstance(message, dict) or not isinstance(message.get("kind"), str):
        raise ProtocolError(BAD_MESSAGE, "message must be an object with a string 'kind'")
    return message


class ProtocolError(Exception):
    """A request the session rejects; becomes an error reply, session survives."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code

    def reply(self) -> dict:
        return {"kind": "error", "code": self.code, "message": str(self)}


class TrajectoryWriter:
    """Newline-delimited trajectory records with a version header."""

    def __init__(self, fh: IO[str], song: str, config: EnvConfig, seed: int | None = None,
                 extra: dict | None = None):
        self._fh = fh
        self._lock = threading.Lock()
        header = {
            "kind": "header",
            "version": TRAJECTORY_VERSION,
            "song": song,
            "seed": seed,
            "config": env_config_to_dict(config),
        }
        if extra:
            header.update(extra)
        self._write(header)

    def _write(self, record: dict) -> None:
        with self._lock:
            self._fh.write(encode_message(record) + "\n")
            self._fh.flush()

    def write_step(
        self,
        episode: int,
        song: str,
        step: int,
        observation: np.ndarray,
        action: np.ndarray,
        reward: dict[str, float],
        done: bool,
    ) -> None:
        self._write(
            {
                "kind": "step",
                "episode": episode,
                "song": song,
                "step": step,
                "observation": [float(x) for x in observation],
                "action": [float(a) for a in action],
                "reward": reward,
                "done": done,
            }
        )

    def abort(self, reason: str) -> None:
        """Best-effort partial-file marker when the sink fails mid-write."""
        try:
            self._write({"kind": "aborted", "reason": reason})
        except OSError:
            log.error("could not write abort marker: %s", reason)


def read_trajectory(path: str | Path) -> tuple[dict, list[dict]]:
    """Load a trajectory file; returns (header, step records)."""
    header: dict | None = None
    records: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            kind = record.get("kind")
            if kind == "header":
                if record.get("version") != TRAJECTORY_VERSION:
                    raise ValueError(f"unsupported trajectory version {record.get('version')}")
                header = record
            elif kind == "step":
                records.append(record)
            elif kind == "aborted":
                raise ValueError(f"trajectory aborted: {record.get('reason')}")
    if header is None:
        raise ValueError(f"{path}: missing trajectory header")
    return header, records


class Session:
    """One protocol session: owns at most one environment, replies in order."""

    def __init__(
        self,
        config: EnvConfig,
        make_env: Callable[[str], PianoEnv] | None = None,
        songs: Sequence[str] | None = None,
        log_writer_factory: Callable[[str, int | None], TrajectoryWriter] | None = None,
    ):
        self._config = config
        self._make_env = make_env or (lambda name: PianoEnv(get_song(name), config))
        self._songs = list(songs) if songs is not None else song_names()
        self._log_factory = log_writer_factory
        self._writer: TrajectoryWriter | None = None
        self._env: PianoEnv | None = None
        self._song: str | None = None
        self._episode = -1
        self._step = 0
        self._last_obs: np.ndarray | None = None

    def handle_line(self, line: str) -> str:
        try:
            reply = self._dispatch(parse_message(line))
        except ProtocolError as exc:
            reply = exc.reply()
        except EpisodeStateError as exc:
            reply = ProtocolError(EPISODE_DONE, str(exc)).reply()
        return encode_message(reply)

    # -- handlers ---------------------------------------------------------

    def _dispatch(self, message: dict) -> dict:
        kind = message["kind"]
        if kind == "handshake":
            return self._handshake(message)
        if kind == "reset":
            return self._reset(message)
        if kind == "step":
            return self._step_env(message)
        if kind == "close":
            return {"kind": "close"}
        raise ProtocolError(BAD_MESSAGE, f"unknown message kind {kind!r}")

    def _handshake(self, message: dict) -> dict:
        version = message.get("version", PROTOCOL_VERSION)
        if version != PROTOCOL_VERSION:
            raise ProtocolError(
                VERSION_MISMATCH,
                f"server speaks protocol {PROTOCOL_VERSION}, client asked for {version}",
            )
        return {
            "kind": "handshake",
            "version": PROTOCOL_VERSION,
            "action_dim": 23,
            "obs_dim": Observation.dim(self._config.lookahead),
            "dt": self._config.dt_control,
            "lookahead": self._config.lookahead,
            "songs": list(self._songs),
        }

    def _reset(self, message: dict) -> dict:
        song = message.get("song")
        if not isinstance(song, str) or song not in self._songs:
            raise ProtocolError(
                UNKNOWN_SONG,
                f"unknown song {song!r}; available: {', '.join(self._songs)}",
            )
        seed = message.get("seed")
        if seed is not None and not isinstance(seed, int):
            raise ProtocolError(BAD_MESSAGE, "seed must be an integer")
        if self._env is None or song != self._song:
            self._env = self._make_env(song)
            self._song = song
        obs = self._env.reset(seed=seed)
        self._episode += 1
        self._step = 0
        self._last_obs = obs.vector()
        if self._writer is None and self._log_factory is not None:
            self._writer = self._log_factory(song, seed)
        return {
            "kind": "reset",
            "observation": [float(x) for x in self._last_obs],
            "done": self._env.done,
        }

    def _step_env(self, message: dict) -> dict:
        if self._env is None:
            raise ProtocolError(NO_EPISODE, "step before reset; send a reset message first")
        action = message.get("action")
        if not isinstance(action, list) or not all(isinstance(a, (int, float)) for a in action):
            raise ProtocolError(BAD_ACTION, "action must be a list of numbers")
        if len(action) != 23:
            raise ProtocolError(BAD_ACTION, f"action has {len(action)} dims, expected 23")
        action_arr = np.asarray(action, dtype=np.float64)
        obs, reward, done, info = self._env.step(action_arr)
        reward_dict = reward.as_dict()
        if self._writer is not None and self._last_obs is not None:
            self._writer.write_step(
                self._episode, self._song or "", self._step,
                self._last_obs, action_arr, reward_dict, done,
            )
        self._step += 1
        self._last_obs = obs.vector()
        return {
            "kind": "step",
            "observation": [float(x) for x in self._last_obs],
            "reward": reward_dict,
            "done": done,
            "info": info,
        }


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


class _SessionHandler(socketserver.StreamRequestHandler):
    def handle(self):  # one session per connection
        server: PianoServer = self.server  # type: ignore[assignment]
        session = server.new_session()
        for raw in self.rfile:
            try:
                line = raw.decode("utf-8").strip()
            except UnicodeDecodeError:
                line = ""
            if not line:
                continue
            reply = session.handle_line(line)
            try:
                self.wfile.write((reply + "\n").encode("utf-8"))
                self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                break
            if json.loads(reply).get("kind") == "close":
                break


class PianoServer(socketserver.ThreadingTCPServer):
    """TCP server: one thread and one environment per connection."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], config: EnvConfig,
                 make_env: Callable[[str], PianoEnv] | None = None,
                 songs: Sequence[str] | None = None,
                 log_dir: str | Path | None = None):
        super().__init__(address, _SessionHandler)
        self._config = config
        self._make_env = make_env
        self._songs = songs
        self._log_dir = Path(log_dir) if log_dir is not None else None
        self._session_counter = 0
        self._counter_lock = threading.Lock()
        if self._log_dir is not None:
            self._log_dir.mkdir(parents=True, exist_ok=True)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def new_session(self) -> Session:
        with self._counter_lock:
            self._session_counter += 1
            sid = self._session_counter
        factory = None
        if self._log_dir is not None:
            log_dir = self._log_dir

            def factory(song: str, seed: int | None, _sid=sid) -> TrajectoryWriter:
                fh = open(log_dir / f"session-{_sid:04d}.jsonl", "w", encoding="utf-8")
                return TrajectoryWriter(fh, song, self._config, seed=seed)

        return Session(self._config, make_env=self._make_env, songs=self._songs,
                       log_writer_factory=factory)


def serve_stdio(config: EnvConfig, stdin: IO[str], stdout: IO[str],
                make_env: Callable[[str], PianoEnv] | None = None,
                songs: Sequence[str] | None = None) -> None:
    """Run one session over a stdio pair until EOF or a close message."""
    session = Session(config, make_env=make_env, songs=songs)
    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        reply = session.handle_line(line)
        stdout.write(reply + "\n")
        stdout.flush()
        if json.loads(reply).get("kind") == "close":
            break


# ---------------------------------------------------------------------------
# Trajectory collection
# ---------------------------------------------------------------------------


def log_trajectories(
    env: PianoEnv,
    policy: Callable[[Observation, int, np.random.Generator], np.ndarray],
    n: int,
    sink: IO[str],
    seeds: Iterable[int] | None = None,
    song: str = "",
) -> dict:
    """Roll ``n`` episodes of ``policy`` and write them as trajectory records.

    Episodes are seeded individually (defaults to 0..n-1); the same seed
    reproduces the same episode.  Returns a summary with the episode count,
    mean F1, and total steps.  A sink failure aborts with a partial-file
    marker record.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seed_list = list(seeds) if seeds is not None else list(range(n))
    if len(seed_list) != n:
        raise ValueError(f"need {n} seeds, got {len(seed_list)}")
    writer = TrajectoryWriter(sink, song, env.config)
    f1_sum = 0.0
    total_steps = 0
    try:
        for episode, seed in enumerate(seed_list):
            rng = np.random.default_rng(seed)
            obs = env.reset(seed=seed)
            t = 0
            while not env.done:
                action = np.asarray(policy(obs, t, rng), dtype=np.float64)
                next_obs, reward, done, _ = env.step(action)
                writer.write_step(
                    episode, song, t, obs.vector(), action, reward.as_dict(), done
                )
                obs = next_obs
                t += 1
            report = env.episode_report()
            f1_sum += report.f1
            total_steps += t
    except OSError as exc:
        writer.abort(f"sink write failure: {exc}")
        raise
    return {"episodes": n, "mean_f1": f1_sum / n, "total_steps": total_steps}

"""Command-line entry points.

Subcommands: ``roll`` discretizes a score, ``play`` runs the sampling MPC on a
song, ``sweep`` grids a design axis, ``eval`` replays a logged trajectory,
``serve`` exposes environments over TCP or stdio, ``info`` prints the
environment spec.  Every report path writes delimited text (CSV / key=value /
JSON lines) plus matplotlib figures rendered next to it.  Explicit flags beat
config-file values, which beat defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import figures
from .env import EnvConfig, Observation, PianoEnv, env_config_from_dict, env_config_to_dict
from .planner import (
    PlannerConfig,
    control_loop,
    planner_config_from_dict,
    planner_config_to_dict,
)
from .score import (
    MidiParseError,
    Score,
    attach_fingering,
    parse_fingering,
    parse_midi,
    score_from_text,
    score_to_text,
    to_piano_roll,
)
from .service import PianoServer, TrajectoryWriter, read_trajectory, serve_stdio
from .songs import get_song, song_names

ROLL_CSV_HEADER = "# pianobench roll csv v1"
FRAMES_CSV_HEADER = "# pianobench frames csv v1"
SWEEP_CSV_HEADER = "# pianobench sweep csv v1"
EVENTS_CSV_HEADER = "# pianobench events csv v1"


class CliError(Exception):
    """Fatal command error; message goes to stderr, exit status 1."""


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(f"config {path} must be a JSON object")
    return data


def _env_config(args: argparse.Namespace, file_cfg: dict) -> EnvConfig:
    try:
        cfg = env_config_from_dict(file_cfg.get("env", {}))
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad env config: {exc}") from exc
    overrides = {}
    if getattr(args, "dt", None) is not None:
        overrides["dt_control"] = args.dt
    if getattr(args, "lookahead", None) is not None:
        overrides["lookahead"] = args.lookahead
    try:
        return replace(cfg, **overrides) if overrides else cfg
    except ValueError as exc:
        raise CliError(f"bad env config: {exc}") from exc


def _planner_config(args: argparse.Namespace, file_cfg: dict) -> PlannerConfig:
    try:
        cfg = planner_config_from_dict(file_cfg.get("planner", {}))
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad planner config: {exc}") from exc
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "iters", None) is not None:
        overrides["iterations"] = args.iters
    if getattr(args, "budget", None) is not None:
        overrides["budget_s"] = args.budget
    try:
        return replace(cfg, **overrides) if overrides else cfg
    except ValueError as exc:
        raise CliError(f"bad planner config: {exc}") from exc


def _load_score(args: argparse.Namespace) -> tuple[Score, str]:
    if getattr(args, "song", None):
        try:
            return get_song(args.song), args.song
        except KeyError as exc:
            raise CliError(str(exc)) from exc
    if getattr(args, "midi", None):
        try:
            data = Path(args.midi).read_bytes()
        except OSError as exc:
            raise CliError(f"cannot read {args.midi}: {exc}") from exc
        try:
            score = parse_midi(data)
        except MidiParseError as exc:
            raise CliError(f"{args.midi}: {exc}") from exc
        if getattr(args, "fingering", None):
            try:
                text = Path(args.fingering).read_text(encoding="utf-8")
            except OSError as exc:
                raise CliError(f"cannot read {args.fingering}: {exc}") from exc
            score = attach_fingering(score, parse_fingering(text))
        return score, Path(args.midi).stem
    raise CliError("provide --song or --midi")


def _ensure_out_dir(args: argparse.Namespace) -> Path:
    out = Path(getattr(args, "out_dir", ".") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_lines(path: Path, lines: list[str]) -> None:
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# roll
# ---------------------------------------------------------------------------


def cmd_roll(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    score, name = _load_score(args)
    dt = args.dt if args.dt is not None else file_cfg.get("env", {}).get("dt_control", 0.05)
    try:
        roll = to_piano_roll(score, dt)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = _ensure_out_dir(args)

    lines = [ROLL_CSV_HEADER, "frame,keys,fingers,sustain"]
    for f in range(roll.num_frames):
        keys = "+".join(str(k) for k in np.nonzero(roll.frames[f])[0])
        fingers = "+".join(str(j) for j in np.nonzero(roll.fingers[f])[0])
        lines.append(f"{f},{keys},{fingers},{int(roll.sustain[f])}")
    _write_lines(out / "roll.csv", lines)

    summary = {
        "song": name,
        "dt": dt,
        "frames": roll.num_frames,
        "notes": len(score.notes),
        "labeled_fraction": score.labeled_fraction,
        "duration": score.duration,
    }
    _write_lines(out / "roll_summary.txt", [f"{k}={summary[k]!r}" for k in sorted(summary)])
    figures.save_roll_figure(roll, out / "roll.png", title=score.title or name)
    for k in sorted(summary):
        print(f"{k}={summary[k]!r}")
    return 0


# ---------------------------------------------------------------------------
# play
# ---------------------------------------------------------------------------


def _write_frames_csv(path: Path, env: PianoEnv, rewards: list[dict[str, float]]) -> None:
    report = env.episode_report()
    scored = {s.frame: s for s in report.frames}
    lines = [FRAMES_CSV_HEADER, "frame,evaluated,precision,recall,f1,r_key,r_finger,r_energy,r_total"]
    for f, rew in enumerate(rewards):
        s = scored.get(f)
        p = f"{s.precision!r}" if s else ""
        r = f"{s.recall!r}" if s else ""
        f1 = f"{s.f1!r}" if s else ""
        lines.append(
            f"{f},{int(s is not None)},{p},{r},{f1},"
            f"{rew['key']!r},{rew['finger']!r},{rew['energy']!r},{rew['total']!r}"
        )
    _write_lines(path, lines)


def cmd_play(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    env_cfg = _env_config(args, file_cfg)
    planner_cfg = _planner_config(args, file_cfg)
    score, name = _load_score(args)
    env = PianoEnv(score, env_cfg, capture_events=True)
    out = _ensure_out_dir(args)

    start = time.monotonic()
    result = control_loop(env, planner_cfg)
    wall = time.monotonic() - start

    report = result.report
    reward_dicts = [r.as_dict() for r in result.rewards]

    report_lines = [
        f"song={name!r}",
        f"seed={planner_cfg.seed!r}",
        f"frames={env.num_frames!r}",
        f"iterations={planner_cfg.iterations!r}",
    ]
    report_lines += report.to_kv().strip().splitlines()
    _write_lines(out / "report.txt", sorted(report_lines))

    _write_frames_csv(out / "frames.csv", env, reward_dicts)

    with open(out / "trajectory.jsonl", "w", encoding="utf-8") as fh:
        writer = TrajectoryWriter(
            fh, name, env_cfg, seed=planner_cfg.seed,
            extra={
                "planner": planner_config_to_dict(planner_cfg),
                "score_text": score_to_text(score),
            },
        )
        n = result.actions.shape[0]
        for i in range(n):
            writer.write_step(
                0, name, i,
                result.observations[i].vector(),
                result.actions[i],
                reward_dicts[i],
                i == n - 1,
            )

    _write_lines(out / "trace.jsonl", env.trace_lines())
    _write_lines(out / "events.csv", [EVENTS_CSV_HEADER, "event,key,time"] + env.synth_event_lines())
    figures.save_episode_figure(
        report, reward_dicts, env_cfg.dt_control, out / "episode.png",
        title=f"{name}: F1 = {report.f1:.3f}",
    )

    print(f"song={name} frames={env.num_frames} f1={report.f1!r} precision={report.precision!r} "
          f"recall={report.recall!r} wall_time_s={wall:.2f}")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def cmd_sweep(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    env_cfg = _env_config(args, file_cfg)
    planner_cfg = _planner_config(args, file_cfg)
    score, name = _load_score(args)

    values: list[float] = []
    for token in args.values.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            values.append(float(token))
        except ValueError as exc:
            raise CliError(f"bad sweep value {token!r}") from exc
    if not values:
        raise CliError("no sweep values given")
    deduped = list(dict.fromkeys(values))
    if len(deduped) != len(values):
        print("warning: duplicate sweep values removed", file=sys.stderr)
    values = deduped

    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [planner_cfg.seed]
    out = _ensure_out_dir(args)

    rows: list[dict] = []
    for value in values:
        if args.axis == "dt_control":
            cell_env_cfg = replace(env_cfg, dt_control=value)
        else:
            cell_env_cfg = replace(env_cfg, lookahead=int(value))
        for seed in seeds:
            cell_planner = replace(planner_cfg, seed=seed)
            env = PianoEnv(score, cell_env_cfg)
            start = time.monotonic()
            result = control_loop(env, cell_planner)
            wall = time.monotonic() - start
            rows.append(
                {
                    "axis": args.axis,
                    "value": value,
                    "seed": seed,
                    "f1": result.report.f1,
                    "precision": result.report.precision,
                    "recall": result.report.recall,
                    "frames": env.num_frames,
                    "wall_time_s": wall,
                }
            )
            print(f"{args.axis}={value} seed={seed} f1={result.report.f1!r} wall={wall:.2f}s")

    lines = [SWEEP_CSV_HEADER, "axis,value,seed,f1,precision,recall,frames,wall_time_s"]
    for row in sorted(rows, key=lambda r: (r["value"], r["seed"])):
        lines.append(
            f"{row['axis']},{row['value']!r},{row['seed']},{row['f1']!r},"
            f"{row['precision']!r},{row['recall']!r},{row['frames']},{row['wall_time_s']:.3f}"
        )
    _write_lines(out / "sweep.csv", lines)
    figures.save_sweep_figure(rows, args.axis, out / "sweep.png")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        header, records = read_trajectory(args.trajectory)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load {args.trajectory}: {exc}") from exc
    try:
        env_cfg = env_config_from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"bad trajectory header: {exc}") from exc
    if header.get("score_text"):
        score = score_from_text(header["score_text"])
        name = header.get("song", "trajectory")
    else:
        name = header.get("song", "")
        try:
            score = get_song(name)
        except KeyError as exc:
            raise CliError(str(exc)) from exc

    env = PianoEnv(score, env_cfg)
    env.reset(seed=header.get("seed"))
    mismatches = 0
    rewards: list[dict[str, float]] = []
    for record in records:
        if env.done:
            raise CliError("trajectory has more steps than the episode allows")
        _, reward, _, _ = env.step(np.asarray(record["action"], dtype=np.float64))
        rewards.append(reward.as_dict())
        if reward.as_dict() != record["reward"]:
            mismatches += 1
    report = env.episode_report()

    out = _ensure_out_dir(args)
    report_lines = [
        f"song={name!r}",
        f"replayed_steps={len(records)!r}",
        f"reward_mismatches={mismatches!r}",
    ] + report.to_kv().strip().splitlines()
    _write_lines(out / "eval_report.txt", sorted(report_lines))
    _write_frames_csv(out / "eval_frames.csv", env, rewards)
    print(f"song={name} steps={len(records)} f1={report.f1!r} reward_mismatches={mismatches}")
    return 0 if mismatches == 0 else 1


# ---------------------------------------------------------------------------
# serve / info
# ---------------------------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    env_cfg = _env_config(args, file_cfg)
    if args.stdio:
        serve_stdio(env_cfg, sys.stdin, sys.stdout)
        return 0
    server = PianoServer((args.host, args.port), env_cfg, log_dir=args.log_dir)
    print(json.dumps({"kind": "ready", "port": server.port, "host": args.host}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
    return 0


def cmd_info(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    env_cfg = _env_config(args, file_cfg)
    info = {
        "action_dim": 23,
        "obs_dim": Observation.dim(env_cfg.lookahead),
        "dt_control": env_cfg.dt_control,
        "lookahead": env_cfg.lookahead,
        "songs": song_names(),
        "config": env_config_to_dict(env_cfg),
    }
    print(json.dumps(info, sort_keys=True, indent=2))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_score_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--song", help="built-in song name")
    p.add_argument("--midi", help="path to a Standard MIDI File")
    p.add_argument("--fingering", help="path to fingering annotations (tab-separated)")


def _add_common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file with env/planner sections")
    p.add_argument("--out-dir", default=".", help="output directory (default: .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pianobench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("roll", help="discretize a score into a piano roll")
    _add_score_args(p)
    _add_common_args(p)
    p.add_argument("--dt", type=float, help="control timestep in seconds (default 0.05)")
    p.set_defaults(func=cmd_roll)

    p = sub.add_parser("play", help="run the sampling MPC planner on a song")
    _add_score_args(p)
    _add_common_args(p)
    p.add_argument("--dt", type=float, help="control timestep override")
    p.add_argument("--lookahead", type=int, help="goal lookahead override")
    p.add_argument("--seed", type=int, help="planner seed")
    p.add_argument("--iters", type=int, help="planning iterations per control step")
    p.add_argument("--budget", type=float, help="wall-clock seconds per control step")
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("sweep", help="grid a design axis and report F1 per cell")
    _add_score_args(p)
    _add_common_args(p)
    p.add_argument("--axis", choices=("dt_control", "lookahead"), required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--seeds", help="comma-separated seeds (default: planner seed)")
    p.add_argument("--dt", type=float, help="control timestep override")
    p.add_argument("--lookahead", type=int, help="goal lookahead override")
    p.add_argument("--seed", type=int, help="planner seed")
    p.add_argument("--iters", type=int, help="planning iterations per control step")
    p.add_argument("--budget", type=float, help="wall-clock seconds per control step")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="replay a logged trajectory and score it")
    _add_common_args(p)
    p.add_argument("--trajectory", required=True, help="trajectory .jsonl file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve environments over TCP or stdio")
    p.add_argument("--config", help="JSON config file with an env section")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0, help="0 picks an ephemeral port")
    p.add_argument("--log-dir", help="write per-session trajectory logs here")
    p.add_argument("--stdio", action="store_true", help="serve one session over stdio")
    p.add_argument("--dt", type=float, help="control timestep override")
    p.add_argument("--lookahead", type=int, help="goal lookahead override")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("info", help="print the environment spec as JSON")
    p.add_argument("--config", help="JSON config file with an env section")
    p.add_argument("--dt", type=float, help="control timestep override")
    p.add_argument("--lookahead", type=int, help="goal lookahead override")
    p.set_defaults(func=cmd_info)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

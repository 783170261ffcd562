"""Score ingestion: MIDI and fingering-annotation parsers, piano-roll discretization.

A score is an immutable list of pitched, timed note intervals (optionally
carrying a finger label) plus sustain-pedal intervals.  Discretizing a score
at the control timestep yields the goal signal the environment tracks: one
boolean row of 88 key activations per control frame.
"""

from __future__ import annotations

import logging
import math
import re
from bisect import bisect_right
from dataclasses import dataclass, replace
from typing import Iterator, Mapping

import numpy as np

log = logging.getLogger(__name__)

PITCH_MIN = 21  # A0, leftmost key of the 88-key layout
PITCH_MAX = 108  # C8, rightmost key
NUM_KEYS = 88
NUM_FINGERS = 10  # 0..4 right thumb..little, 5..9 left thumb..little
DEFAULT_DT = 0.05  # seconds per control frame

_DEFAULT_TEMPO = 500_000  # microseconds per quarter note (120 bpm)


class MidiParseError(ValueError):
    """Malformed MIDI input; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def key_index(pitch: int) -> int:
    """Map MIDI pitch 21..108 onto key index 0..87."""
    if not PITCH_MIN <= pitch <= PITCH_MAX:
        raise ValueError(f"pitch {pitch} outside playable range {PITCH_MIN}..{PITCH_MAX}")
    return pitch - PITCH_MIN


@dataclass(frozen=True)
class NoteEvent:
    """One note: pitch, a half-open time interval in seconds, optional finger."""

    pitch: int
    onset: float
    offset: float
    finger: int | None = None
    velocity: int = 64  # recorded from note-on, unused by the simulator

    def __post_init__(self):
        if not PITCH_MIN <= self.pitch <= PITCH_MAX:
            raise ValueError(f"pitch {self.pitch} outside {PITCH_MIN}..{PITCH_MAX}")
        if not self.offset > self.onset:
            raise ValueError(f"offset {self.offset} must exceed onset {self.onset}")
        if self.onset < 0:
            raise ValueError("onset must be >= 0")
        if self.finger is not None and not 0 <= self.finger < NUM_FINGERS:
            raise ValueError(f"finger {self.finger} outside 0..{NUM_FINGERS - 1}")

    @property
    def key(self) -> int:
        return self.pitch - PITCH_MIN


@dataclass(frozen=True)
class Score:
    """Immutable parsed piece: notes sorted by onset plus sustain intervals."""

    notes: tuple[NoteEvent, ...] = ()
    sustain_intervals: tuple[tuple[float, float], ...] = ()
    title: str = ""
    duration: float = 0.0

    def __post_init__(self):
        last = -math.inf
        for n in self.notes:
            if n.onset < last:
                raise ValueError("notes must be sorted by onset")
            last = n.onset
            if n.offset > self.duration + 1e-12:
                raise ValueError("duration shorter than a note offset")
        prev_end = -math.inf
        for s, e in self.sustain_intervals:
            if s < prev_end:
                raise ValueError("sustain intervals must be sorted and non-overlapping")
            if e <= s:
                raise ValueError("sustain interval must have positive length")
            if e > self.duration + 1e-12:
                raise ValueError("duration shorter than a sustain interval")
            prev_end = e

    @property
    def labeled_fraction(self) -> float:
        if not self.notes:
            return 0.0
        return sum(1 for n in self.notes if n.finger is not None) / len(self.notes)


@dataclass(frozen=True)
class PianoRoll:
    """Goal trajectory sampled at the control timestep.

    ``frames[f, k]`` is True when key ``k`` must sound during frame ``f``;
    ``fingers[f, j]`` marks finger ``j`` as active; ``labeled[f]`` pairs each
    labeled goal key of the frame with its finger.  A note covers frame ``f``
    iff its interval contains the frame midpoint ``f*dt + dt/2``.
    """

    dt: float
    frames: np.ndarray  # (F, 88) bool, read-only
    fingers: np.ndarray  # (F, 10) bool, read-only
    sustain: np.ndarray  # (F,) bool, read-only
    labeled: tuple[tuple[tuple[int, int], ...], ...]  # per frame: ((key, finger), ...)

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    def goal_keys(self, frame: int) -> np.ndarray:
        """Indices of keys that must sound at ``frame`` (empty past the end)."""
        if 0 <= frame < self.num_frames:
            return np.nonzero(self.frames[frame])[0]
        return np.empty(0, dtype=np.intp)


# ---------------------------------------------------------------------------
# MIDI parsing
# ---------------------------------------------------------------------------


def _read_varlen(data: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise MidiParseError("truncated variable-length quantity", pos)
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity longer than 4 bytes", pos)


class _TempoMap:
    """Piecewise-constant tempo; converts absolute ticks to seconds."""

    def __init__(self, changes: list[tuple[int, int]], ppq: int):
        # changes: (tick, us_per_quarter), sorted; later entries at the same
        # tick override earlier ones.
        ticks = [0]
        tempi = [_DEFAULT_TEMPO]
        for tick, uspq in changes:
            if tick == ticks[-1]:
                tempi[-1] = uspq
            else:
                ticks.append(tick)
                tempi.append(uspq)
        cum = [0.0]
        for i in range(1, len(ticks)):
            span = ticks[i] - ticks[i - 1]
            cum.append(cum[-1] + span * tempi[i - 1] * 1e-6 / ppq)
        self._ticks = ticks
        self._tempi = tempi
        self._cum = cum
        self._ppq = ppq

    def seconds(self, tick: int) -> float:
        i = bisect_right(self._ticks, tick) - 1
        return self._cum[i] + (tick - self._ticks[i]) * self._tempi[i] * 1e-6 / self._ppq


def parse_midi(data: bytes) -> Score:
    """Parse a format-0/1 Standard MIDI File into a Score.

    Note-on/note-off pairs become notes (velocity-0 note-ons count as offs),
    tempo meta events build the tick-to-seconds map, and control change 64
    drives sustain intervals (value >= 64 opens, < 64 closes).  Unknown
    messages are skipped.  Ill-formed notes are dropped with a logged
    diagnostic; structurally malformed bytes raise :class:`MidiParseError`.
    """
    if len(data) < 14 or data[0:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    header_len = int.from_bytes(data[4:8], "big")
    if header_len < 6:
        raise MidiParseError(f"header chunk length {header_len} < 6", 4)
    fmt = int.from_bytes(data[8:10], "big")
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported MIDI format {fmt}", 8)
    ntrks = int.from_bytes(data[10:12], "big")
    division = int.from_bytes(data[12:14], "big")
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiParseError("pulses-per-quarter division must be positive", 12)
    ppq = division

    pos = 8 + header_len
    tracks: list[tuple[int, int]] = []
    while pos < len(data) and len(tracks) < ntrks:
        if pos + 8 > len(data):
            raise MidiParseError("truncated chunk header", pos)
        ctype = data[pos : pos + 4]
        clen = int.from_bytes(data[pos + 4 : pos + 8], "big")
        body_start = pos + 8
        body_end = body_start + clen
        if body_end > len(data):
            raise MidiParseError(f"chunk length {clen} runs past end of file", pos + 4)
        if ctype == b"MTrk":
            tracks.append((body_start, body_end))
        else:
            log.warning("skipping unknown chunk %r at offset %d", ctype, pos)
        pos = body_end
    if len(tracks) < ntrks:
        raise MidiParseError(f"header declares {ntrks} tracks, found {len(tracks)}", pos)

    tempo_changes: list[tuple[int, int, int]] = []  # (tick, order, uspq)
    pedal_events: list[tuple[int, int, int]] = []  # (tick, order, value)
    raw_notes: list[tuple[int, int, int, int]] = []  # (on_tick, off_tick, pitch, velocity)
    title = ""
    order = 0
    end_tick = 0

    for start, end in tracks:
        p = start
        tick = 0
        running_status: int | None = None
        open_notes: dict[tuple[int, int], list[tuple[int, int]]] = {}

        def close_note(ch: int, pitch: int, off_tick: int) -> None:
            stack = open_notes.get((ch, pitch))
            if stack:
                on_tick, vel = stack.pop(0)
                raw_notes.append((on_tick, off_tick, pitch, vel))

        while p < end:
            delta, p = _read_varlen(data, p, end)
            tick += delta
            if p >= end:
                raise MidiParseError("event truncated at end of track", p)
            status = data[p]
            if status & 0x80:
                p += 1
                if status < 0xF0:
                    running_status = status
            else:
                if running_status is None:
                    raise MidiParseError(f"data byte 0x{status:02x} with no running status", p)
                status = running_status

            kind = status & 0xF0
            channel = status & 0x0F
            if kind in (0x80, 0x90, 0xA0, 0xB0, 0xE0):
                if p + 2 > end:
                    raise MidiParseError("channel message truncated", p)
                d1, d2 = data[p], data[p + 1]
                p += 2
                if kind == 0x90 and d2 > 0:
                    open_notes.setdefault((channel, d1), []).append((tick, d2))
                elif kind == 0x80 or (kind == 0x90 and d2 == 0):
                    close_note(channel, d1, tick)
                elif kind == 0xB0 and d1 == 64:
                    pedal_events.append((tick, order, d2))
                    order += 1
            elif kind in (0xC0, 0xD0):
                if p + 1 > end:
                    raise MidiParseError("channel message truncated", p)
                p += 1
            elif status in (0xF0, 0xF7):
                length, p = _read_varlen(data, p, end)
                if p + length > end:
                    raise MidiParseError("sysex event truncated", p)
                p += length
                running_status = None
            elif status == 0xFF:
                if p >= end:
                    raise MidiParseError("meta event truncated", p)
                meta_type = data[p]
                p += 1
                length, p = _read_varlen(data, p, end)
                if p + length > end:
                    raise MidiParseError("meta event truncated", p)
                payload = data[p : p + length]
                p += length
                if meta_type == 0x51:
                    if length != 3:
                        raise MidiParseError(f"tempo event with length {length}", p - length)
                    uspq = int.from_bytes(payload, "big")
                    if uspq <= 0:
                        raise MidiParseError("non-positive tempo", p - length)
                    tempo_changes.append((tick, order, uspq))
                    order += 1
                elif meta_type == 0x03 and not title and payload:
                    title = payload.decode("latin-1")
                elif meta_type == 0x2F:
                    break
                running_status = None
            else:
                raise MidiParseError(f"unexpected status byte 0x{status:02x}", p - 1)

        for (ch, pitch), stack in sorted(open_notes.items()):
            for on_tick, vel in stack:
                log.warning(
                    "note-on pitch %d at tick %d without note-off; closing at end of track",
                    pitch,
                    on_tick,
                )
                if tick > on_tick:
                    raw_notes.append((on_tick, tick, pitch, vel))
                else:
                    log.warning("dropping zero-length unterminated note pitch %d", pitch)
        end_tick = max(end_tick, tick)

    tempo_map = _TempoMap([(t, uspq) for t, _, uspq in sorted(tempo_changes)], ppq)

    notes = []
    for on_tick, off_tick, pitch, velocity in raw_notes:
        if not PITCH_MIN <= pitch <= PITCH_MAX:
            log.warning("dropping note with pitch %d outside %d..%d", pitch, PITCH_MIN, PITCH_MAX)
            continue
        onset = tempo_map.seconds(on_tick)
        offset = tempo_map.seconds(off_tick)
        if not offset > onset:
            log.warning("dropping zero-duration note pitch %d at tick %d", pitch, on_tick)
            continue
        notes.append(NoteEvent(pitch=pitch, onset=onset, offset=offset, velocity=velocity))
    notes.sort(key=lambda n: (n.onset, n.pitch, n.offset))

    intervals: list[tuple[float, float]] = []
    open_since: int | None = None
    for tick, _, value in sorted(pedal_events):
        if value >= 64 and open_since is None:
            open_since = tick
        elif value < 64 and open_since is not None:
            if tick > open_since:
                intervals.append((tempo_map.seconds(open_since), tempo_map.seconds(tick)))
            open_since = None
    if open_since is not None and end_tick > open_since:
        intervals.append((tempo_map.seconds(open_since), tempo_map.seconds(end_tick)))
    intervals = _merge_intervals(intervals)

    duration = 0.0
    if notes:
        duration = max(duration, max(n.offset for n in notes))
    if intervals:
        duration = max(duration, max(e for _, e in intervals))

    return Score(notes=tuple(notes), sustain_intervals=tuple(intervals), title=title, duration=duration)


def _merge_intervals(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[tuple[float, float]] = []
    for s, e in sorted(intervals):
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


# ---------------------------------------------------------------------------
# Fingering annotations
# ---------------------------------------------------------------------------

_PITCH_RE = re.compile(r"^([A-Ga-g])(bb|##|b|#|x)?(-?\d+)$")
_PITCH_BASE = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
_ACCIDENTAL = {None: 0, "#": 1, "##": 2, "x": 2, "b": -1, "bb": -2}


def spelled_pitch_to_midi(text: str) -> int | None:
    """Convert a spelled pitch like ``C4`` or ``F#3`` to a MIDI number (C4 = 60)."""
    m = _PITCH_RE.match(text.strip())
    if not m:
        return None
    letter, accidental, octave = m.groups()
    return 12 * (int(octave) + 1) + _PITCH_BASE[letter.upper()] + _ACCIDENTAL[accidental]


def parse_fingering(text: str) -> dict[tuple[int, float], int]:
    """Parse tab-separated fingering annotations into ``(pitch, onset) -> finger``.

    Expected columns: note id, onset, offset, spelled pitch, two velocities,
    channel, finger.  Positive fingers 1..5 are right-hand thumb..little and
    map to 0..4; negative -1..-5 are left-hand and map to 5..9.  A
    substitution like ``2_1`` keeps the first finger.  Lines starting with
    ``//`` are comments; unusable lines are rejected with a diagnostic.
    """
    table: dict[tuple[int, float], int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("//"):
            continue
        parts = line.split("\t")
        if len(parts) < 8:
            log.warning("fingering line %d: expected 8 columns, got %d", lineno, len(parts))
            continue
        try:
            onset = float(parts[1])
        except ValueError:
            log.warning("fingering line %d: bad onset %r", lineno, parts[1])
            continue
        pitch = spelled_pitch_to_midi(parts[3])
        if pitch is None:
            log.warning("fingering line %d: unparseable pitch %r", lineno, parts[3])
            continue
        finger_text = parts[7].split("_")[0]
        try:
            value = int(finger_text)
        except ValueError:
            log.warning("fingering line %d: bad finger field %r", lineno, parts[7])
            continue
        if value == 0 or abs(value) > 5:
            log.warning("fingering line %d: finger %d outside 1..5 / -1..-5", lineno, value)
            continue
        finger = value - 1 if value > 0 else 4 - value
        entry = (pitch, onset)
        if entry in table:
            log.warning("fingering line %d: duplicate entry for pitch %d at %g", lineno, pitch, onset)
            continue
        table[entry] = finger
    return table


def attach_fingering(
    score: Score, table: Mapping[tuple[int, float], int], tol: float = 0.01
) -> Score:
    """Label notes with fingers from ``table`` by pitch and nearest onset.

    Each table entry is consumed at most once; notes with no entry within
    ``tol`` seconds keep ``finger=None``.  Leftover entries are reported as
    diagnostics.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    by_pitch: dict[int, list[tuple[float, int]]] = {}
    for (pitch, onset), finger in table.items():
        by_pitch.setdefault(pitch, []).append((onset, finger))
    for entries in by_pitch.values():
        entries.sort()

    used: set[tuple[int, float]] = set()
    new_notes = []
    for note in score.notes:
        best: tuple[float, float, int] | None = None
        for onset, finger in by_pitch.get(note.pitch, ()):
            if (note.pitch, onset) in used:
                continue
            gap = abs(onset - note.onset)
            if gap <= tol and (best is None or (gap, onset) < best[:2]):
                best = (gap, onset, finger)
        if best is not None:
            used.add((note.pitch, best[1]))
            new_notes.append(replace(note, finger=best[2]))
        else:
            new_notes.append(note)

    unmatched = len(table) - len(used)
    if unmatched:
        log.warning("%d fingering entries matched no note within %g s", unmatched, tol)
    return replace(score, notes=tuple(new_notes))


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------


def to_piano_roll(score: Score, dt: float = DEFAULT_DT) -> PianoRoll:
    """Discretize a score onto control frames of length ``dt`` seconds.

    Frame ``f`` covers ``[f*dt, (f+1)*dt)``; a note (or sustain interval) is
    active at the frame iff it contains the frame midpoint ``f*dt + dt/2``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if score.duration <= 0:
        num_frames = 0
    else:
        # 1e-9 relative guard so durations that are exact multiples of dt do
        # not gain a trailing empty frame from binary rounding.
        num_frames = int(math.ceil(score.duration / dt - 1e-9))
    midpoints = np.arange(num_frames, dtype=np.float64) * dt + dt / 2

    frames = np.zeros((num_frames, NUM_KEYS), dtype=bool)
    fingers = np.zeros((num_frames, NUM_FINGERS), dtype=bool)
    sustain = np.zeros(num_frames, dtype=bool)
    labeled: list[list[tuple[int, int]]] = [[] for _ in range(num_frames)]

    for note in score.notes:
        mask = (midpoints >= note.onset) & (midpoints < note.offset)
        frames[mask, note.key] = True
        if note.finger is not None:
            fingers[mask, note.finger] = True
            for f in np.nonzero(mask)[0]:
                labeled[f].append((note.key, note.finger))
    for start, end in score.sustain_intervals:
        sustain |= (midpoints >= start) & (midpoints < end)

    for arr in (frames, fingers, sustain):
        arr.setflags(write=False)
    return PianoRoll(
        dt=dt,
        frames=frames,
        fingers=fingers,
        sustain=sustain,
        labeled=tuple(tuple(sorted(pairs)) for pairs in labeled),
    )


# ---------------------------------------------------------------------------
# Canonical text form (golden-file friendly)
# ---------------------------------------------------------------------------


def score_to_text(score: Score) -> str:
    """Serialize a score to a deterministic line-oriented text form."""
    lines = ["score v1", f"title {score.title}", f"duration {score.duration!r}"]
    for n in score.notes:
        finger = "-" if n.finger is None else str(n.finger)
        lines.append(f"note {n.pitch} {n.onset!r} {n.offset!r} {finger} {n.velocity}")
    for s, e in score.sustain_intervals:
        lines.append(f"sustain {s!r} {e!r}")
    return "\n".join(lines) + "\n"


def score_from_text(text: str) -> Score:
    """Inverse of :func:`score_to_text`."""
    lines: Iterator[str] = iter(text.splitlines())
    head = next(lines, "")
    if head.strip() != "score v1":
        raise ValueError(f"unrecognized score header {head!r}")
    title = ""
    duration = 0.0
    notes: list[NoteEvent] = []
    sustain: list[tuple[float, float]] = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        kind, _, rest = line.partition(" ")
        if kind == "title":
            title = rest
        elif kind == "duration":
            duration = float(rest)
        elif kind == "note":
            pitch, onset, offset, finger, velocity = rest.split(" ")
            notes.append(
                NoteEvent(
                    pitch=int(pitch),
                    onset=float(onset),
                    offset=float(offset),
                    finger=None if finger == "-" else int(finger),
                    velocity=int(velocity),
                )
            )
        elif kind == "sustain":
            s, e = rest.split(" ")
            sustain.append((float(s), float(e)))
        else:
            raise ValueError(f"unrecognized score line {line!r}")
    return Score(notes=tuple(notes), sustain_intervals=tuple(sustain), title=title, duration=duration)

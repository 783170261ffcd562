"""Minimal Standard MIDI File byte builder for test fixtures."""

from __future__ import annotations


def varlen(value: int) -> bytes:
    """Encode a MIDI variable-length quantity."""
    if value < 0:
        raise ValueError("varlen values are unsigned")
    chunks = [value & 0x7F]
    value >>= 7
    while value:
        chunks.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(chunks))


def note_on(delta: int, pitch: int, velocity: int = 64, channel: int = 0) -> bytes:
    return varlen(delta) + bytes([0x90 | channel, pitch, velocity])


def note_off(delta: int, pitch: int, velocity: int = 0, channel: int = 0) -> bytes:
    return varlen(delta) + bytes([0x80 | channel, pitch, velocity])


def control_change(delta: int, controller: int, value: int, channel: int = 0) -> bytes:
    return varlen(delta) + bytes([0xB0 | channel, controller, value])


def sustain(delta: int, value: int, channel: int = 0) -> bytes:
    return control_change(delta, 64, value, channel)


def tempo(delta: int, us_per_quarter: int) -> bytes:
    return varlen(delta) + bytes([0xFF, 0x51, 0x03]) + us_per_quarter.to_bytes(3, "big")


def track_name(delta: int, name: str) -> bytes:
    payload = name.encode("latin-1")
    return varlen(delta) + bytes([0xFF, 0x03]) + varlen(len(payload)) + payload


def end_of_track(delta: int = 0) -> bytes:
    return varlen(delta) + bytes([0xFF, 0x2F, 0x00])


def track(*events: bytes, terminate: bool = True) -> bytes:
    body = b"".join(events)
    if terminate:
        body += end_of_track()
    return b"MTrk" + len(body).to_bytes(4, "big") + body


def smf(*tracks: bytes, fmt: int | None = None, ppq: int = 480) -> bytes:
    if fmt is None:
        fmt = 0 if len(tracks) <= 1 else 1
    header = b"MThd" + (6).to_bytes(4, "big") + fmt.to_bytes(2, "big")
    header += len(tracks).to_bytes(2, "big") + ppq.to_bytes(2, "big")
    return header + b"".join(tracks)


def single_note_file(pitch: int = 60, ticks: int = 480, ppq: int = 480,
                     bpm: float = 120.0, velocity: int = 64) -> bytes:
    uspq = round(60_000_000 / bpm)
    return smf(
        track(tempo(0, uspq), note_on(0, pitch, velocity), note_off(ticks, pitch)),
        ppq=ppq,
    )

"""Built-in songs: small fixtures for demos, tests, and served environments."""

from __future__ import annotations

from .score import NoteEvent, Score

_C4, _D4, _E4, _F4, _G4, _A4, _B4, _C5 = 60, 62, 64, 65, 67, 69, 71, 72


def _one_note() -> Score:
    return Score(
        notes=(NoteEvent(pitch=_C4, onset=0.5, offset=1.0, finger=2),),
        title="one-note",
        duration=1.5,
    )


def _scale() -> Score:
    # C-major scale at 60 bpm, one quarter note per beat with a 0.9 gate,
    # standard right-hand fingering 1,2,3,1,2,3,4,5.
    pitches = (_C4, _D4, _E4, _F4, _G4, _A4, _B4, _C5)
    fingers = (0, 1, 2, 0, 1, 2, 3, 4)
    notes = tuple(
        NoteEvent(pitch=p, onset=float(i), offset=i + 0.9, finger=f)
        for i, (p, f) in enumerate(zip(pitches, fingers))
    )
    return Score(notes=notes, title="c-major-scale", duration=8.0)


def _chord() -> Score:
    # C-major triad under right-hand thumb/middle/little, matching the rest
    # spread of the fingers exactly.
    notes = tuple(
        NoteEvent(pitch=p, onset=0.5, offset=2.0, finger=f)
        for p, f in ((_C4, 0), (_E4, 2), (_G4, 4))
    )
    return Score(notes=notes, title="c-major-chord", duration=2.5)


def _twinkle() -> Score:
    # First phrase at 120 bpm with a 0.9 gate.
    beats = [
        (_C4, 0, 1, 0), (_C4, 1, 1, 0), (_G4, 2, 1, 3), (_G4, 3, 1, 3),
        (_A4, 4, 1, 4), (_A4, 5, 1, 4), (_G4, 6, 2, 3),
        (_F4, 8, 1, 2), (_F4, 9, 1, 2), (_E4, 10, 1, 1), (_E4, 11, 1, 1),
        (_D4, 12, 1, 1), (_D4, 13, 1, 1), (_C4, 14, 2, 0),
    ]
    spb = 0.5  # seconds per beat
    notes = tuple(
        NoteEvent(pitch=p, onset=b * spb, offset=(b + 0.9 * n) * spb, finger=f)
        for p, b, n, f in beats
    )
    return Score(notes=notes, title="twinkle", duration=8.0)


def _held() -> Score:
    return Score(
        notes=(NoteEvent(pitch=_C4, onset=0.5, offset=1.0, finger=2),),
        sustain_intervals=((0.5, 1.5),),
        title="held-note",
        duration=2.0,
    )


_BUILTINS = {
    "onenote": _one_note,
    "scale": _scale,
    "chord": _chord,
    "twinkle": _twinkle,
    "held": _held,
}


def song_names() -> list[str]:
    return sorted(_BUILTINS)


def get_song(name: str) -> Score:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown song {name!r}; available: {', '.join(song_names())}") from None

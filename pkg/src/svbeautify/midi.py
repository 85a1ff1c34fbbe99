"""Standard MIDI File parsing/writing and frame-level note rendering.

The parser handles format 0/1 files with tempo maps and running status,
selects the melody track (most note-ons), and converts tick times to
frame indices on the analysis grid. Any byte string either parses or
raises MidiParseError; nothing else escapes.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .audio import DEFAULT_HOP, DEFAULT_SAMPLE_RATE

DEFAULT_TEMPO_US = 500000  # microseconds per quarter note
MIDI_NOTE_MIN = 21
MIDI_NOTE_MAX = 108


class MidiParseError(ValueError):
    """Structured failure for any malformed Standard MIDI File input."""


@dataclass(frozen=True)
class NoteEvent:
    """One monophonic note spanning [onset_frame, offset_frame)."""

    note: int
    onset_frame: int
    offset_frame: int

    def __post_init__(self):
        if not 0 <= self.note <= 127:
            raise ValueError(f"note {self.note} outside 0..127")
        if self.onset_frame >= self.offset_frame:
            raise ValueError("note onset must precede offset")


@dataclass
class MidiSequence:
    """Sorted, non-overlapping monophonic note events."""

    events: list[NoteEvent] = field(default_factory=list)

    def __post_init__(self):
        for prev, cur in zip(self.events, self.events[1:]):
            if cur.onset_frame < prev.offset_frame:
                raise ValueError("note events overlap or are unsorted")

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


def frame_midi(midi: MidiSequence, n_frames: int) -> np.ndarray:
    """Render a note sequence to a per-frame note-number vector.

    0 marks rests; events beyond n_frames are clipped at the boundary.
    """
    out = np.zeros(n_frames, dtype=np.int64)
    for ev in midi:
        lo = max(ev.onset_frame, 0)
        hi = min(ev.offset_frame, n_frames)
        if lo < hi:
            out[lo:hi] = ev.note
    return out


def _read_vlq(data: bytes, pos: int) -> tuple[int, int]:
    """Variable-length quantity; at most 4 bytes per the SMF spec."""
    value = 0
    for i in range(4):
        if pos >= len(data):
            raise MidiParseError("truncated variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity exceeds 4 bytes")


def _parse_track(data: bytes) -> list[tuple[int, int, int, int]]:
    """Parse one MTrk payload into (tick, kind, a, b) events.

    kind: 0 = note-off, 1 = note-on, 2 = tempo (a = microseconds/quarter).
    Raises MidiParseError if the track does not end with end-of-track.
    """
    events = []
    pos = 0
    tick = 0
    running = None
    saw_end = False
    while pos < len(data):
        delta, pos = _read_vlq(data, pos)
        tick += delta
        if pos >= len(data):
            raise MidiParseError("event truncated after delta time")
        status = data[pos]
        if status < 0x80:
            if running is None:
                raise MidiParseError("running status without prior status byte")
            status = running
        else:
            pos += 1
        if status == 0xFF:
            if pos >= len(data):
                raise MidiParseError("truncated meta event")
            meta_type = data[pos]
            pos += 1
            length, pos = _read_vlq(data, pos)
            if pos + length > len(data):
                raise MidiParseError("meta event payload truncated")
            payload = data[pos:pos + length]
            pos += length
            if meta_type == 0x2F:
                saw_end = True
                break
            if meta_type == 0x51:
                if length != 3:
                    raise MidiParseError("tempo meta event must be 3 bytes")
                tempo = (payload[0] << 16) | (payload[1] << 8) | payload[2]
                events.append((tick, 2, tempo, 0))
        elif status in (0xF0, 0xF7):
            length, pos = _read_vlq(data, pos)
            if pos + length > len(data):
                raise MidiParseError("sysex payload truncated")
            pos += length
        else:
            running = status
            kind = status >> 4
            n_data = 1 if kind in (0xC, 0xD) else 2
            if pos + n_data > len(data):
                raise MidiParseError("channel event truncated")
            a = data[pos]
            b = data[pos + 1] if n_data == 2 else 0
            if a > 127 or b > 127:
                raise MidiParseError("data byte out of range")
            pos += n_data
            if kind == 0x9 and b > 0:
                events.append((tick, 1, a, b))
            elif kind == 0x8 or (kind == 0x9 and b == 0):
                events.append((tick, 0, a, b))
    if not saw_end:
        raise MidiParseError("track missing end-of-track meta event")
    return events


def parse_smf(data: bytes, sample_rate: int = DEFAULT_SAMPLE_RATE,
              hop: int = DEFAULT_HOP) -> MidiSequence:
    """Parse a format 0/1 Standard MIDI File to frame-indexed notes.

    The melody track is the one with the most note-on events; tick times
    go through the merged tempo map, and overlapping notes are truncated
    at the next onset.
    """
    try:
        return _parse_smf_inner(bytes(data), sample_rate, hop)
    except MidiParseError:
        raise
    except Exception as exc:
        raise MidiParseError(f"malformed MIDI data: {exc}") from exc


def _parse_smf_inner(data: bytes, sample_rate: int, hop: int) -> MidiSequence:
    if len(data) < 14:
        raise MidiParseError("file shorter than the MThd header")
    if data[:4] != b"MThd":
        raise MidiParseError("bad magic, expected MThd")
    header_len, fmt, n_tracks, division = struct.unpack(">IHHH", data[4:14])
    if header_len < 6:
        raise MidiParseError("MThd header too short")
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}")
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported")
    if division == 0:
        raise MidiParseError("zero ticks per quarter note")
    pos = 8 + header_len
    tracks = []
    for _ in range(n_tracks):
        if pos + 8 > len(data):
            raise MidiParseError("truncated track header")
        if data[pos:pos + 4] != b"MTrk":
            raise MidiParseError("expected MTrk chunk")
        (track_len,) = struct.unpack(">I", data[pos + 4:pos + 8])
        pos += 8
        if pos + track_len > len(data):
            raise MidiParseError("track payload truncated")
        tracks.append(_parse_track(data[pos:pos + track_len]))
        pos += track_len
    if not tracks:
        raise MidiParseError("file contains no tracks")

    tempo_map = sorted(
        [(tick, a) for tr in tracks for (tick, kind, a, _) in tr if kind == 2]
    )
    melody = max(tracks, key=lambda tr: sum(1 for ev in tr if ev[1] == 1))

    def tick_to_seconds(tick: int) -> float:
        seconds = 0.0
        cur_tick = 0
        tempo = DEFAULT_TEMPO_US
        for change_tick, new_tempo in tempo_map:
            if change_tick >= tick:
                break
            seconds += (change_tick - cur_tick) * tempo / (1e6 * division)
            cur_tick = change_tick
            tempo = new_tempo
        return seconds + (tick - cur_tick) * tempo / (1e6 * division)

    def tick_to_frame(tick: int) -> int:
        return int(round(tick_to_seconds(tick) * sample_rate / hop))

    # pair note-ons with the next off (or next onset, truncating overlaps)
    notes = []
    open_note = None  # (note, onset_tick)
    for tick, kind, note, _vel in sorted(
        (ev for ev in melody if ev[1] in (0, 1)), key=lambda e: (e[0], e[1])
    ):
        if kind == 1:
            if open_note is not None:
                notes.append((open_note[0], open_note[1], tick))
            open_note = (note, tick)
        elif open_note is not None and note == open_note[0]:
            notes.append((open_note[0], open_note[1], tick))
            open_note = None
    if open_note is not None:
        raise MidiParseError("note-on without matching note-off")

    events = []
    for note, on_tick, off_tick in notes:
        on_f, off_f = tick_to_frame(on_tick), tick_to_frame(off_tick)
        if off_f > on_f:
            events.append(NoteEvent(note, on_f, off_f))
    events.sort(key=lambda e: e.onset_frame)
    clipped = []
    for i, ev in enumerate(events):
        off = ev.offset_frame
        if i + 1 < len(events):
            off = min(off, events[i + 1].onset_frame)
        if off > ev.onset_frame:
            clipped.append(NoteEvent(ev.note, ev.onset_frame, off))
    return MidiSequence(clipped)


def _vlq_bytes(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def write_smf(notes: list[tuple[int, float, float]], ticks_per_quarter: int = 480,
              tempo_us: int = DEFAULT_TEMPO_US) -> bytes:
    """Assemble a format-0 SMF from (note, onset_sec, offset_sec) triples."""
    ticks_per_sec = ticks_per_quarter * 1e6 / tempo_us
    track = io.BytesIO()
    track.write(b"\x00\xff\x51\x03" + struct.pack(">I", tempo_us)[1:])
    cursor = 0
    for note, onset, offset in sorted(notes, key=lambda n: n[1]):
        on_tick = int(round(onset * ticks_per_sec))
        off_tick = int(round(offset * ticks_per_sec))
        track.write(_vlq_bytes(on_tick - cursor) + bytes([0x90, note, 100]))
        track.write(_vlq_bytes(off_tick - on_tick) + bytes([0x80, note, 0]))
        cursor = off_tick
    track.write(b"\x00\xff\x2f\x00")
    payload = track.getvalue()
    return (b"MThd" + struct.pack(">IHHH", 6, 0, 1, ticks_per_quarter)
            + b"MTrk" + struct.pack(">I", len(payload)) + payload)


def read_frame_midi_csv(path, n_frames: int | None = None) -> np.ndarray:
    """Read frame-level MIDI from a two-column (frame, note) CSV."""
    pairs = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "frame":
                continue
            pairs.append((int(row[0]), int(row[1])))
    if not pairs:
        raise MidiParseError(f"{path}: no frame rows")
    length = n_frames if n_frames is not None else max(f for f, _ in pairs) + 1
    out = np.zeros(length, dtype=np.int64)
    for frame, note in pairs:
        if 0 <= frame < length:
            out[frame] = note
    return out

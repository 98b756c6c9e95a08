"""Standard MIDI File reader/writer with exact byte-level round-trips.

Supports SMF formats 0 and 1 with PPQN time division. Events this toolkit
does not interpret (sysex, unfamiliar meta types) are carried as opaque
payloads, and running-status usage is remembered per event, so that
``write_midi(parse_midi(data)) == data`` for every file in the supported
subset (formats 0/1, MThd/MTrk chunks only, minimally-encoded variable
length quantities).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

DEFAULT_TICKS_PER_QUARTER = 480
DEFAULT_TEMPO_BPM = 120.0
DEFAULT_VELOCITY = 96

META_TRACK_NAME = 0x03
META_END_OF_TRACK = 0x2F
META_TEMPO = 0x51
META_TIME_SIGNATURE = 0x58

_VLQ_MAX = 0x0FFFFFFF
_CHANNEL_DATA_BYTES = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


class MidiParseError(ValueError):
    """Raised when a byte stream is not a supported Standard MIDI File."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MidiWriteError(ValueError):
    """Raised when a document cannot be serialized."""


@dataclass(frozen=True)
class MidiEvent:
    """One track event: delta time plus raw payload.

    ``status`` is the effective status byte (0x80-0xEF channel message,
    0xFF meta, 0xF0/0xF7 sysex). For meta events ``meta_type`` holds the
    meta type byte and ``data`` the payload without the length prefix.
    ``running`` records whether the source omitted the status byte.
    """

    delta: int
    status: int
    data: bytes = b""
    meta_type: int | None = None
    running: bool = False

    def is_meta(self, meta_type: int | None = None) -> bool:
        if self.status != 0xFF:
            return False
        return meta_type is None or self.meta_type == meta_type


@dataclass(frozen=True)
class TimedNote:
    """A matched note-on/note-off pair on an absolute tick timeline."""

    pitch: int
    onset_ticks: int
    duration_ticks: int
    velocity: int = DEFAULT_VELOCITY
    channel: int = 0

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if self.onset_ticks < 0:
            raise ValueError("onset_ticks must be non-negative")
        if self.duration_ticks < 1:
            raise ValueError("duration_ticks must be >= 1")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside 1..127")
        if not 0 <= self.channel <= 15:
            raise ValueError(f"channel {self.channel} outside 0..15")

    @property
    def end_ticks(self) -> int:
        return self.onset_ticks + self.duration_ticks


@dataclass
class MidiDocument:
    format: int
    ticks_per_quarter: int
    tracks: list[list[MidiEvent]] = field(default_factory=list)

    def validate(self) -> None:
        if self.format not in (0, 1):
            raise MidiWriteError(f"unsupported format {self.format}")
        if self.format == 0 and len(self.tracks) != 1:
            raise MidiWriteError("format 0 requires exactly one track")
        if not 1 <= self.ticks_per_quarter <= 0x7FFF:
            raise MidiWriteError(
                f"ticks_per_quarter {self.ticks_per_quarter} outside 1..32767"
            )
        for t, track in enumerate(self.tracks):
            if not track or not track[-1].is_meta(META_END_OF_TRACK):
                raise MidiWriteError(f"track {t} does not end with end-of-track")
            for e, event in enumerate(track):
                if event.delta < 0:
                    raise MidiWriteError(f"track {t} event {e}: negative delta")
                if event.delta > _VLQ_MAX:
                    raise MidiWriteError(
                        f"track {t} event {e}: delta {event.delta} overflows "
                        "the 4-byte variable-length encoding"
                    )


def _encode_vlq(value: int) -> bytes:
    if value < 0 or value > _VLQ_MAX:
        raise MidiWriteError(f"value {value} outside variable-length range")
    chunks = [value & 0x7F]
    value >>= 7
    while value:
        chunks.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int, what: str) -> bytes:
        if self.remaining() < n:
            raise MidiParseError(f"truncated {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def byte(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack(">H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack(">I", self.take(4, what))[0]

    def vlq(self) -> int:
        start = self.pos
        first = self.byte("variable-length quantity")
        value = first & 0x7F
        length = 1
        b = first
        while b & 0x80:
            if length == 4:
                raise MidiParseError("variable-length quantity exceeds 4 bytes", start)
            b = self.byte("variable-length quantity")
            value = (value << 7) | (b & 0x7F)
            length += 1
        if length > 1 and first == 0x80:
            raise MidiParseError("non-minimal variable-length quantity", start)
        return value


def parse_midi(data: bytes) -> MidiDocument:
    """Parse SMF bytes into a MidiDocument, preserving payloads verbatim."""
    r = _Reader(bytes(data))
    magic = r.take(4, "header chunk")
    if magic != b"MThd":
        raise MidiParseError(f"expected MThd header, found {magic!r}", 0)
    header_len = r.u32("header length")
    if header_len != 6:
        raise MidiParseError(f"malformed header length {header_len}", 4)
    fmt = r.u16("format")
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    ntrks = r.u16("track count")
    division = r.u16("division")
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiParseError("zero ticks-per-quarter division", 12)
    if fmt == 0 and ntrks != 1:
        raise MidiParseError(f"format 0 file declares {ntrks} tracks", 10)

    tracks = []
    for t in range(ntrks):
        chunk_start = r.pos
        chunk_id = r.take(4, "track chunk id")
        if chunk_id != b"MTrk":
            raise MidiParseError(f"expected MTrk chunk, found {chunk_id!r}", chunk_start)
        chunk_len = r.u32("track chunk length")
        end = r.pos + chunk_len
        if end > len(r.data):
            raise MidiParseError(f"truncated track chunk (length {chunk_len})", chunk_start)
        tracks.append(_parse_track(r, end, t))
    if r.remaining():
        raise MidiParseError(f"{r.remaining()} trailing bytes after last track", r.pos)
    return MidiDocument(format=fmt, ticks_per_quarter=division, tracks=tracks)


def _parse_track(r: _Reader, end: int, track_index: int) -> list[MidiEvent]:
    events: list[MidiEvent] = []
    running_status: int | None = None
    saw_end = False
    while r.pos < end:
        if saw_end:
            raise MidiParseError(
                f"track {track_index} has data after end-of-track", r.pos
            )
        delta = r.vlq()
        status_pos = r.pos
        first = r.byte("event status")
        if first == 0xFF:
            running_status = None
            meta_type = r.byte("meta type")
            length = r.vlq()
            payload = r.take(length, "meta payload")
            events.append(MidiEvent(delta, 0xFF, payload, meta_type=meta_type))
            if meta_type == META_END_OF_TRACK:
                saw_end = True
        elif first in (0xF0, 0xF7):
            running_status = None
            length = r.vlq()
            payload = r.take(length, "sysex payload")
            events.append(MidiEvent(delta, first, payload))
        elif first >= 0xF1:
            raise MidiParseError(f"unsupported status byte 0x{first:02X}", status_pos)
        else:
            if first & 0x80:
                status = first
                running = False
                running_status = status
                data0 = r.byte("event data")
            else:
                if running_status is None:
                    raise MidiParseError(
                        "running status byte with no prior channel event", status_pos
                    )
                status = running_status
                running = True
                data0 = first
            n_data = _CHANNEL_DATA_BYTES[status & 0xF0]
            data = bytes([data0]) + (r.take(n_data - 1, "event data") if n_data > 1 else b"")
            for b in data:
                if b & 0x80:
                    raise MidiParseError(f"invalid data byte 0x{b:02X}", status_pos)
            events.append(MidiEvent(delta, status, data, running=running))
    if r.pos != end:
        raise MidiParseError(f"track {track_index} overruns its chunk length", r.pos)
    if not saw_end:
        raise MidiParseError(f"track {track_index} missing end-of-track", r.pos)
    return events


def write_midi(doc: MidiDocument) -> bytes:
    """Serialize a MidiDocument; inverse of parse_midi on the supported subset."""
    doc.validate()
    out = bytearray()
    out += struct.pack(">4sIHHH", b"MThd", 6, doc.format, len(doc.tracks), doc.ticks_per_quarter)
    for t, track in enumerate(doc.tracks):
        body = bytearray()
        prev_status: int | None = None
        for e, event in enumerate(track):
            body += _encode_vlq(event.delta)
            if event.status == 0xFF:
                if event.meta_type is None:
                    raise MidiWriteError(f"track {t} event {e}: meta event without type")
                body += bytes([0xFF, event.meta_type])
                body += _encode_vlq(len(event.data))
                body += event.data
                prev_status = None
            elif event.status in (0xF0, 0xF7):
                body += bytes([event.status])
                body += _encode_vlq(len(event.data))
                body += event.data
                prev_status = None
            elif 0x80 <= event.status <= 0xEF:
                expected = _CHANNEL_DATA_BYTES[event.status & 0xF0]
                if len(event.data) != expected:
                    raise MidiWriteError(
                        f"track {t} event {e}: status 0x{event.status:02X} "
                        f"expects {expected} data bytes, got {len(event.data)}"
                    )
                if event.running:
                    if prev_status != event.status:
                        raise MidiWriteError(
                            f"track {t} event {e}: running status without matching "
                            "preceding status byte"
                        )
                else:
                    body += bytes([event.status])
                body += event.data
                prev_status = event.status
            else:
                raise MidiWriteError(f"track {t} event {e}: bad status 0x{event.status:02X}")
        out += struct.pack(">4sI", b"MTrk", len(body))
        out += body
    return bytes(out)


def extract_notes(
    doc: MidiDocument, channel_filter: Iterable[int] | None = None
) -> list[TimedNote]:
    """Pair note-ons with note-offs across all tracks.

    Note-on with velocity 0 counts as note-off. Same-pitch overlaps resolve
    first-on/first-off. Note-ons left open at the end of a track are closed
    at the track's final tick and reported as a warning. Output is sorted by
    (onset, pitch).
    """
    channels = set(channel_filter) if channel_filter is not None else None
    notes: list[TimedNote] = []
    for track in doc.tracks:
        open_notes: dict[tuple[int, int], list[tuple[int, int]]] = {}
        tick = 0
        for event in track:
            tick += event.delta
            kind = event.status & 0xF0
            if kind not in (0x80, 0x90):
                continue
            channel = event.status & 0x0F
            if channels is not None and channel not in channels:
                continue
            pitch, velocity = event.data[0], event.data[1]
            key = (channel, pitch)
            if kind == 0x90 and velocity > 0:
                open_notes.setdefault(key, []).append((tick, velocity))
            else:
                pending = open_notes.get(key)
                if not pending:
                    warnings.warn(
                        f"note-off for pitch {pitch} channel {channel} at tick {tick} "
                        "with no matching note-on; ignored"
                    )
                    continue
                onset, on_velocity = pending.pop(0)
                if tick > onset:
                    notes.append(TimedNote(pitch, onset, tick - onset, on_velocity, channel))
                else:
                    warnings.warn(
                        f"zero-length note pitch {pitch} at tick {tick}; dropped"
                    )
        leftovers = [(key, pair) for key, pairs in open_notes.items() for pair in pairs]
        if leftovers:
            warnings.warn(
                f"{len(leftovers)} unmatched note-on(s) closed at end of track (tick {tick})"
            )
            for (channel, pitch), (onset, on_velocity) in leftovers:
                if tick > onset:
                    notes.append(TimedNote(pitch, onset, tick - onset, on_velocity, channel))
    notes.sort(key=lambda n: (n.onset_ticks, n.pitch, n.duration_ticks, n.channel))
    return notes


def tempo_meta(bpm: float) -> MidiEvent:
    microseconds = int(round(60_000_000 / bpm))
    return MidiEvent(0, 0xFF, struct.pack(">I", microseconds)[1:], meta_type=META_TEMPO)


def time_signature_meta(numerator: int = 4, denominator: int = 4) -> MidiEvent:
    log_denom = denominator.bit_length() - 1
    return MidiEvent(
        0, 0xFF, bytes([numerator, log_denom, 24, 8]), meta_type=META_TIME_SIGNATURE
    )


def build_document(
    notes: Sequence[TimedNote],
    ticks_per_quarter: int = DEFAULT_TICKS_PER_QUARTER,
    tempo_bpm: float = DEFAULT_TEMPO_BPM,
    track_name: str | None = None,
) -> MidiDocument:
    """Assemble a format-0 document from timed notes (inverse of extract_notes).

    At equal ticks, note-offs are written before note-ons so adjacent
    same-pitch notes survive the first-on/first-off pairing rule.
    """
    events: list[tuple[int, int, int, bytes]] = []
    for note in notes:
        on = bytes([note.pitch, note.velocity])
        off = bytes([note.pitch, 0])
        events.append((note.onset_ticks, 1, 0x90 | note.channel, on))
        events.append((note.end_ticks, 0, 0x90 | note.channel, off))
    events.sort(key=lambda e: (e[0], e[1], e[3][0]))

    track: list[MidiEvent] = []
    if track_name is not None:
        track.append(MidiEvent(0, 0xFF, track_name.encode("ascii"), meta_type=META_TRACK_NAME))
    track.append(tempo_meta(tempo_bpm))
    track.append(time_signature_meta())
    tick = 0
    for abs_tick, _, status, data in events:
        track.append(MidiEvent(abs_tick - tick, status, data))
        tick = abs_tick
    track.append(MidiEvent(0, 0xFF, b"", meta_type=META_END_OF_TRACK))
    return MidiDocument(format=0, ticks_per_quarter=ticks_per_quarter, tracks=[track])

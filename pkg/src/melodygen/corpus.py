"""Corpus ingestion: scale normalization, quantization, two-bar segmentation.

Songs arrive as MIDI files plus a manifest entry carrying the transpose
offset that moves them to C major and a per-bar list of (chord, part)
annotations. Everything downstream works on MelodySamples: one two-bar
window of quantized note words under a (chord pair, part) condition.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .smf import TimedNote, extract_notes, parse_midi
from .vocab import NoteWord, ONSET_POSITIONS

BEATS_PER_BAR = 4  # 4/4 assumed throughout
SIXTEENTHS_PER_BAR = 16
BARS_PER_SEGMENT = 2
SEGMENT_SIXTEENTHS = SIXTEENTHS_PER_BAR * BARS_PER_SEGMENT

_ROOTS = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
CHORD_LABELS: tuple[str, ...] = _ROOTS + tuple(r + "m" for r in _ROOTS) + ("Caug",)

# Reference conditioning table: 56 two-bar chord pairs in their fixed order.
REFERENCE_CHORD_TOKENS: tuple[str, ...] = (
    "C-Em", "A#-F", "Dm-Em", "Dm-G", "Dm-C", "Am-Em", "F-C", "F-G", "Dm-F", "C-C", "C-E", "Am-G",
    "F-F", "G-G", "Am-Am", "Dm-Dm", "C-A#", "Em-F", "C-G", "G#-A#", "F-Am", "G#-Fm", "Am-Gm", "F-E",
    "Dm-Am", "Em-Em", "G#-G#", "Em-Am", "C-Am", "F-Dm", "G#-G", "F-A#", "Am-G#", "C-D", "G-Am",
    "Am-C", "Am-A#", "A#-G", "Am-F", "A#-Am", "E-Am", "Dm-E", "A-G", "Am-Dm", "Em-Dm", "C-F#m",
    "Am-D", "G#-Em", "C-Dm", "C-F", "G-C", "A#-A#", "Am-Caug", "Fm-G", "A-A", "F-Em",
)


class IngestError(ValueError):
    """Raised when a song cannot be ingested against its manifest entry."""


class PartLabel(enum.IntEnum):
    VERSE = 0
    PRE_CHORUS = 1
    CHORUS = 2
    BRIDGE = 3

    @property
    def label(self) -> str:
        return _PART_NAMES[int(self)]

    @classmethod
    def from_label(cls, text: str) -> "PartLabel":
        try:
            return cls(_PART_NAMES.index(text))
        except ValueError:
            raise ValueError(f"unknown part label {text!r}") from None


_PART_NAMES = ("verse", "pre-chorus", "chorus", "bridge")
PART_LABELS = tuple(PartLabel)


@dataclass(frozen=True)
class ChordSeqToken:
    """Ordered pair of bar-level chords spanning one two-bar window."""

    first: str
    second: str

    def __post_init__(self):
        for chord in (self.first, self.second):
            if chord not in CHORD_LABELS:
                raise ValueError(f"chord label {chord!r} not in the closed label set")

    def __str__(self) -> str:
        return f"{self.first}-{self.second}"

    @classmethod
    def parse(cls, text: str) -> "ChordSeqToken":
        first, sep, second = text.partition("-")
        if not sep:
            raise ValueError(f"malformed chord token {text!r}")
        return cls(first, second)


@dataclass(frozen=True)
class MelodySample:
    """One two-bar window: (chord pair, part) condition plus its note words."""

    condition: tuple[ChordSeqToken, PartLabel]
    words: tuple[NoteWord, ...]
    song: int = 0
    position: int = 0

    @property
    def chord_token(self) -> ChordSeqToken:
        return self.condition[0]

    @property
    def part(self) -> PartLabel:
        return self.condition[1]


@dataclass
class SongScore:
    """A normalized song: transposed notes plus per-bar annotations."""

    notes: tuple[TimedNote, ...]
    ticks_per_quarter: int
    bars: int
    annotations: tuple[tuple[str, PartLabel], ...]
    transpose_offset: int = 0
    name: str = ""

    def __post_init__(self):
        if len(self.annotations) != self.bars:
            raise IngestError(
                f"song {self.name!r}: {len(self.annotations)} annotations for {self.bars} bars"
            )


def _nearest_tie_down(value: Fraction) -> int:
    """Nearest integer to ``value``; exact halves round toward zero-side down."""
    return math.ceil(value - Fraction(1, 2))


def quantize_duration(raw) -> Fraction:
    """Snap a duration (fraction of a whole note) onto the note-length grid.

    Below a half note the grid is sixteenths (floor 1/16); from a half note
    up it is eighths, capped at a whole note. Exact midpoints round down.
    """
    value = Fraction(raw)
    if value <= 0:
        raise ValueError(f"duration must be positive, got {raw}")
    if value < Fraction(1, 2):
        k = max(1, _nearest_tie_down(value * 16))
        return Fraction(k, 16)
    k = min(8, _nearest_tie_down(value * 8))
    return Fraction(k, 8)


def quantize_onset(onset_ticks: int, ticks_per_quarter: int) -> int:
    """Snap window-relative ticks to the nearest sixteenth slot in 0..31."""
    position = Fraction(4 * onset_ticks, ticks_per_quarter)
    index = _nearest_tie_down(position)
    return min(max(index, 0), ONSET_POSITIONS - 1)


def ingest_song(midi_path, manifest_entry: dict) -> SongScore:
    """Load one annotated MIDI file and normalize it to C major."""
    path = Path(midi_path)
    name = manifest_entry.get("midi", path.name)
    if manifest_entry.get("scale", "major") != "major":
        raise IngestError(f"song {name!r}: only major-scale songs are accepted")
    offset = int(manifest_entry.get("transpose_offset", 0))
    bar_entries = manifest_entry.get("bars")
    if not bar_entries:
        raise IngestError(f"song {name!r}: manifest entry has no bar annotations")
    annotations = tuple(
        (bar["chord"], PartLabel.from_label(bar["part"])) for bar in bar_entries
    )
    for chord, _ in annotations:
        if chord not in CHORD_LABELS:
            raise IngestError(f"song {name!r}: chord label {chord!r} not recognized")

    doc = parse_midi(path.read_bytes())
    raw_notes = extract_notes(doc, channel_filter=manifest_entry.get("channels"))
    notes = []
    for note in raw_notes:
        pitch = note.pitch + offset
        if not 0 <= pitch <= 127:
            raise IngestError(
                f"song {name!r}: pitch {note.pitch} leaves the MIDI range after "
                f"transposing by {offset}"
            )
        notes.append(
            TimedNote(pitch, note.onset_ticks, note.duration_ticks, note.velocity, note.channel)
        )

    bars = len(annotations)
    span_ticks = bars * BEATS_PER_BAR * doc.ticks_per_quarter
    for note in notes:
        if note.onset_ticks >= span_ticks:
            raise IngestError(
                f"song {name!r}: note at tick {note.onset_ticks} lies outside the "
                f"{bars} annotated bars"
            )
    return SongScore(
        notes=tuple(notes),
        ticks_per_quarter=doc.ticks_per_quarter,
        bars=bars,
        annotations=annotations,
        transpose_offset=offset,
        name=name,
    )


def segment_samples(song: SongScore, song_index: int = 0) -> list[MelodySample]:
    """Slice a song into non-overlapping two-bar samples aligned to bar 0.

    Notes crossing a window boundary are truncated at the boundary before
    duration quantization; windows with no notes are dropped. A window whose
    bars disagree on part label takes the first bar's label (with a warning).
    """
    tpq = song.ticks_per_quarter
    bar_ticks = BEATS_PER_BAR * tpq
    window_ticks = BARS_PER_SEGMENT * bar_ticks
    samples = []
    for k in range(song.bars // BARS_PER_SEGMENT):
        start = k * window_ticks
        end = start + window_ticks
        first_chord, first_part = song.annotations[2 * k]
        second_chord, second_part = song.annotations[2 * k + 1]
        if second_part != first_part:
            warnings.warn(
                f"song {song.name!r} window {k}: bars disagree on part "
                f"({first_part.label} vs {second_part.label}); using {first_part.label}"
            )
        words = []
        for note in song.notes:
            if not start <= note.onset_ticks < end:
                continue
            clipped_end = min(note.end_ticks, end)
            # A whole note spans four quarters.
            duration = Fraction(clipped_end - note.onset_ticks, 4 * tpq)
            words.append(
                NoteWord(
                    pitch=note.pitch,
                    onset=quantize_onset(note.onset_ticks - start, tpq),
                    duration=quantize_duration(duration),
                )
            )
        if not words:
            continue
        words.sort(key=lambda w: (w.onset, w.pitch, w.duration))
        samples.append(
            MelodySample(
                condition=(ChordSeqToken(first_chord, second_chord), first_part),
                words=tuple(words),
                song=song_index,
                position=k,
            )
        )
    return samples


@dataclass(frozen=True)
class CorpusStats:
    song_count: int
    sample_count: int
    avg_notes: float
    max_notes: int
    min_notes: int
    stddev_notes: float
    min_pitch: int
    max_pitch: int
    median_pitch: int
    min_length: Fraction
    max_length: Fraction
    median_length: Fraction

    def to_report(self) -> dict:
        return {
            "songs": self.song_count,
            "samples": self.sample_count,
            "avg_notes": round(self.avg_notes, 2),
            "max_notes": self.max_notes,
            "min_notes": self.min_notes,
            "stddev_notes": round(self.stddev_notes, 2),
            "min_pitch": self.min_pitch,
            "max_pitch": self.max_pitch,
            "median_pitch": self.median_pitch,
            "min_length": str(self.min_length),
            "max_length": str(self.max_length),
            "median_length": str(self.median_length),
        }


def _lower_median(sorted_values):
    return sorted_values[(len(sorted_values) - 1) // 2]


def compute_stats(samples: Sequence[MelodySample]) -> CorpusStats:
    """Summarize a sample set; medians are lower medians for even counts."""
    if not samples:
        raise ValueError("cannot compute statistics of an empty sample list")
    counts = [len(s.words) for s in samples]
    pitches = sorted(w.pitch for s in samples for w in s.words)
    lengths = sorted(w.duration for s in samples for w in s.words)
    mean = sum(counts) / len(counts)
    variance = sum((c - mean) ** 2 for c in counts) / len(counts)
    return CorpusStats(
        song_count=len({s.song for s in samples}),
        sample_count=len(samples),
        avg_notes=mean,
        max_notes=max(counts),
        min_notes=min(counts),
        stddev_notes=math.sqrt(variance),
        min_pitch=pitches[0],
        max_pitch=pitches[-1],
        median_pitch=_lower_median(pitches),
        min_length=lengths[0],
        max_length=lengths[-1],
        median_length=_lower_median(lengths),
    )


@dataclass
class CorpusStore:
    """Tokenized sample store: everything training needs, past the MIDI stage."""

    song_names: list[str] = field(default_factory=list)
    chord_tokens: list[str] = field(default_factory=list)
    samples: list[MelodySample] = field(default_factory=list)

    def save(self, path) -> None:
        payload = {
            "version": 1,
            "songs": self.song_names,
            "chord_tokens": self.chord_tokens,
            "parts": list(_PART_NAMES),
            "samples": [
                {
                    "song": s.song,
                    "position": s.position,
                    "chord": str(s.chord_token),
                    "part": s.part.label,
                    "words": [
                        [w.pitch, w.onset, w.duration.numerator, w.duration.denominator]
                        for w in s.words
                    ],
                }
                for s in self.samples
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CorpusStore":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        samples = [
            MelodySample(
                condition=(
                    ChordSeqToken.parse(entry["chord"]),
                    PartLabel.from_label(entry["part"]),
                ),
                words=tuple(
                    NoteWord(p, o, Fraction(num, den)) for p, o, num, den in entry["words"]
                ),
                song=entry["song"],
                position=entry["position"],
            )
            for entry in payload["samples"]
        ]
        return cls(
            song_names=list(payload["songs"]),
            chord_tokens=list(payload["chord_tokens"]),
            samples=samples,
        )


def chord_table_order(observed: Sequence[str]) -> list[str]:
    """Stable conditioning order: reference-table position first, then any
    tokens outside the reference table in first-appearance order."""
    reference = {token: i for i, token in enumerate(REFERENCE_CHORD_TOKENS)}
    seen: dict[str, None] = {}
    for token in observed:
        seen.setdefault(token, None)
    return sorted(seen, key=lambda t: (0, reference[t]) if t in reference else (1, 0))


def ingest_corpus(manifest_path) -> CorpusStore:
    """Ingest every song in a manifest, in manifest order."""
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    entries = manifest["songs"]
    if not entries:
        raise IngestError("manifest lists no songs")
    store = CorpusStore()
    observed: list[str] = []
    for i, entry in enumerate(entries):
        midi_path = manifest_path.parent / entry["midi"]
        song = ingest_song(midi_path, entry)
        store.song_names.append(song.name)
        for sample in segment_samples(song, song_index=i):
            observed.append(str(sample.chord_token))
            store.samples.append(sample)
    store.chord_tokens = chord_table_order(observed)
    return store

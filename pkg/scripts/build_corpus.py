#!/usr/bin/env python3
"""Build the bundled synthetic training corpus (deterministic given --seed).

Writes annotated 16-bar songs as MIDI files plus a manifest.json compatible
with `melodygen ingest`. The material is rule-made C-major pop pastiche:
per-part registers and rhythm pools, chord pairs drawn from the reference
table, a controlled rate of octave-displaced notes outside the C4-C5 range
(so range-regularization experiments have something to push against), and
small tick jitter so ingestion has real quantization work to do.

Songs are composed in C major and then written transposed by a per-song key
shift; the manifest's transpose_offset undoes that shift.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from melodygen.smf import TimedNote, build_document, write_midi  # noqa: E402

TPQ = 480
SIXTEENTH = TPQ // 4
BARS = 16
SEGMENTS = BARS // 2

PART_TEMPLATES = [
    ["verse", "verse", "pre-chorus", "chorus", "verse", "pre-chorus", "chorus", "chorus"],
    ["verse", "pre-chorus", "chorus", "chorus", "bridge", "pre-chorus", "chorus", "chorus"],
    ["verse", "verse", "chorus", "chorus", "verse", "bridge", "chorus", "chorus"],
    ["verse", "verse", "pre-chorus", "chorus", "bridge", "verse", "pre-chorus", "chorus"],
]

CHORD_POOLS = {
    "verse": ["C-C", "C-Am", "Dm-G", "F-C", "Am-Em", "C-F"],
    "pre-chorus": ["Dm-G", "F-G", "Em-Am", "Dm-Em"],
    "chorus": ["C-G", "F-G", "C-Am", "F-C", "G-G", "C-C"],
    "bridge": ["Am-Am", "Am-F", "Em-Am", "A#-F"],
}

# (onset, duration) pairs in sixteenths per two-bar window
RHYTHM_POOLS = {
    "verse": [
        [(0, 2), (2, 2), (4, 4), (8, 2), (10, 2), (12, 4), (16, 4), (20, 2), (24, 6)],
        [(0, 4), (4, 2), (6, 2), (8, 4), (16, 4), (20, 2), (22, 2), (24, 8)],
        [(0, 2), (4, 2), (6, 2), (8, 2), (12, 4), (16, 2), (18, 2), (20, 4), (24, 4)],
        [(0, 2), (2, 1), (3, 1), (4, 4), (8, 2), (10, 2), (12, 4), (16, 4), (20, 4), (24, 8)],
    ],
    "pre-chorus": [
        [(0, 2), (2, 2), (4, 2), (6, 2), (8, 4), (12, 4), (16, 4), (20, 4), (24, 8)],
        [(0, 4), (4, 4), (8, 2), (10, 2), (12, 4), (16, 4), (20, 4), (24, 4), (28, 4)],
    ],
    "chorus": [
        [(0, 2), (2, 2), (4, 2), (6, 2), (8, 4), (12, 2), (14, 2), (16, 4), (20, 2), (22, 2), (24, 8)],
        [(0, 4), (4, 2), (6, 2), (8, 2), (10, 2), (12, 4), (16, 2), (18, 2), (20, 4), (24, 8)],
        [(0, 2), (2, 2), (4, 4), (8, 2), (10, 2), (12, 2), (14, 2), (16, 4), (20, 4), (24, 4), (28, 4)],
        [(0, 1), (1, 1), (2, 2), (4, 4), (8, 2), (10, 2), (12, 4), (16, 4), (20, 2), (22, 2), (24, 8)],
    ],
    "bridge": [
        [(0, 4), (4, 4), (8, 4), (12, 4), (16, 8), (24, 8)],
        [(0, 6), (6, 2), (8, 4), (12, 4), (16, 4), (20, 4), (24, 8)],
    ],
}

# register centers and octave-excursion rates per part: the base walk stays
# inside C4-C5, excursions jump to the out-of-range palettes below
PART_CENTER = {"verse": 64, "pre-chorus": 65, "chorus": 68, "bridge": 63}
UP_SHIFT_PROB = {"verse": 0.025, "pre-chorus": 0.06, "chorus": 0.13, "bridge": 0.012}
DOWN_SHIFT_PROB = {"verse": 0.035, "pre-chorus": 0.012, "chorus": 0.012, "bridge": 0.13}
HIGH_PALETTE = (83, 84, 86)  # scale tones well above C5
LOW_PALETTE = (46, 48, 50)   # scale tones well below C4

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
CHORD_TONES = {
    "C": (0, 4, 7), "Dm": (2, 5, 9), "Em": (4, 7, 11), "F": (5, 9, 0),
    "G": (7, 11, 2), "Am": (9, 0, 4), "A#": (10, 2, 5),
}

KEY_SHIFTS = [0, 2, -2, 1, -1, 3, -3, 0]


def nearest_with_class(pitch, pitch_classes, lo=60, hi=72):
    candidates = [p for p in range(lo, hi + 1) if p % 12 in pitch_classes]
    return min(candidates, key=lambda p: (abs(p - pitch), p))


def compose_segment(rng, part, chord_pair, current):
    """One two-bar window of (pitch, onset_sixteenth, dur_sixteenth) notes."""
    first, second = chord_pair.split("-")
    pattern = RHYTHM_POOLS[part][rng.integers(len(RHYTHM_POOLS[part]))]
    center = PART_CENTER[part]
    notes = []
    for onset, dur in pattern:
        chord = first if onset < 16 else second
        drift = int(rng.integers(-3, 4))
        target = int(np.clip(current + drift, center - 5, center + 5))
        if onset % 4 == 0:  # strong beats sit on chord tones
            pitch = nearest_with_class(target, CHORD_TONES[chord])
        else:
            pitch = nearest_with_class(target, MAJOR_SCALE)
        current = pitch
        roll = rng.random()
        if roll < UP_SHIFT_PROB[part]:
            pitch = HIGH_PALETTE[rng.integers(len(HIGH_PALETTE))]
        elif roll < UP_SHIFT_PROB[part] + DOWN_SHIFT_PROB[part]:
            pitch = LOW_PALETTE[rng.integers(len(LOW_PALETTE))]
        notes.append((pitch, onset, dur))
    return notes, current


def compose_song(rng, song_index):
    template = PART_TEMPLATES[song_index % len(PART_TEMPLATES)]
    key_shift = KEY_SHIFTS[song_index % len(KEY_SHIFTS)]
    bars = []
    notes = []
    current = PART_CENTER["verse"]
    for segment, part in enumerate(template):
        pool = CHORD_POOLS[part]
        chord_pair = pool[rng.integers(len(pool))]
        first, second = chord_pair.split("-")
        bars.append({"chord": first, "part": part})
        bars.append({"chord": second, "part": part})
        segment_notes, current = compose_segment(rng, part, chord_pair, current)
        base_tick = segment * 2 * 4 * TPQ
        for pitch, onset, dur in segment_notes:
            jitter_on = int(rng.integers(0, 9)) if onset == 0 else int(rng.integers(-8, 9))
            jitter_dur = int(rng.integers(-10, 11))
            notes.append(
                TimedNote(
                    pitch=pitch + key_shift,
                    onset_ticks=base_tick + onset * SIXTEENTH + jitter_on,
                    duration_ticks=max(30, dur * SIXTEENTH + jitter_dur),
                    velocity=int(rng.integers(70, 111)),
                )
            )
    notes.sort(key=lambda n: (n.onset_ticks, n.pitch))
    return notes, bars, key_shift


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("data/corpus"))
    parser.add_argument("--songs", type=int, default=24)
    parser.add_argument("--seed", type=int, default=20250808)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    manifest = {"songs": []}
    total = 0
    outside = 0
    for i in range(args.songs):
        notes, bars, key_shift = compose_song(rng, i)
        name = f"song_{i:02d}.mid"
        doc = build_document(notes, ticks_per_quarter=TPQ, track_name=f"synthetic {i:02d}")
        (args.out / name).write_bytes(write_midi(doc))
        manifest["songs"].append(
            {
                "midi": name,
                "transpose_offset": -key_shift,
                "scale": "major",
                "bars": bars,
            }
        )
        for note in notes:
            total += 1
            normalized = note.pitch - key_shift
            if normalized < 60 or normalized > 72:
                outside += 1
    with open(args.out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    print(
        f"wrote {args.songs} songs to {args.out} "
        f"({total} notes, {outside / total:.1%} outside C4-C5)"
    )


if __name__ == "__main__":
    main()

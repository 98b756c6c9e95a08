"""Note-word vocabulary and condition encoding.

A note word bundles (pitch, onset, duration) into one token. The
vocabulary is closed: ids 0 and 1 are reserved for the begin/end markers,
observed words get dense ids in first-appearance order, and unknown words
raise instead of mapping to a catch-all token.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

BOS_ID = 0
EOS_ID = 1
BOS = "<bos>"
EOS = "<eos>"
N_RESERVED = 2

ONSET_POSITIONS = 32  # sixteenth-note slots in a two-bar window

# Durations as fractions of a whole note: sixteenth multiples below 1/2,
# eighth multiples from 1/2 up to a whole note.
DURATION_VALUES: tuple[Fraction, ...] = tuple(Fraction(k, 16) for k in range(1, 8)) + tuple(
    Fraction(k, 8) for k in range(4, 9)
)


class OovError(KeyError):
    """Raised when a word or id is not in the vocabulary."""


@dataclass(frozen=True, order=True)
class NoteWord:
    pitch: int
    onset: int
    duration: Fraction

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if not 0 <= self.onset < ONSET_POSITIONS:
            raise ValueError(f"onset {self.onset} outside 0..{ONSET_POSITIONS - 1}")
        if self.duration not in DURATION_VALUES:
            raise ValueError(f"duration {self.duration} not a quantized value")


@dataclass(frozen=True)
class Vocabulary:
    """Bijection between observed NoteWords and dense integer ids."""

    words: tuple[NoteWord, ...]

    @property
    def size(self) -> int:
        return len(self.words) + N_RESERVED

    def __len__(self) -> int:
        return self.size

    def __post_init__(self):
        object.__setattr__(
            self, "_ids", {word: i + N_RESERVED for i, word in enumerate(self.words)}
        )
        if len(self._ids) != len(self.words):
            raise ValueError("duplicate words in vocabulary")

    def encode(self, word: NoteWord) -> int:
        try:
            return self._ids[word]
        except KeyError:
            raise OovError(f"word {word} not in vocabulary") from None

    def decode(self, token_id: int):
        if token_id == BOS_ID:
            return BOS
        if token_id == EOS_ID:
            return EOS
        if N_RESERVED <= token_id < self.size:
            return self.words[token_id - N_RESERVED]
        raise OovError(f"token id {token_id} outside vocabulary of size {self.size}")

    def __contains__(self, word: NoteWord) -> bool:
        return word in self._ids

    def encode_sample(self, words: Iterable[NoteWord]) -> list[int]:
        return [self.encode(w) for w in words]

    def to_payload(self) -> dict:
        return {
            "version": 1,
            "reserved": [BOS, EOS],
            "words": [
                [i + N_RESERVED, w.pitch, w.onset, w.duration.numerator, w.duration.denominator]
                for i, w in enumerate(self.words)
            ],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Vocabulary":
        words = []
        for token_id, pitch, onset, num, den in payload["words"]:
            if token_id != len(words) + N_RESERVED:
                raise ValueError(f"non-dense vocabulary id {token_id}")
            words.append(NoteWord(pitch, onset, Fraction(num, den)))
        return cls(tuple(words))


def build_vocab(samples: Sequence) -> Vocabulary:
    """Assign ids to distinct NoteWords in first-appearance order."""
    if not samples:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    seen: dict[NoteWord, None] = {}
    for sample in samples:
        for word in sample.words:
            seen.setdefault(word, None)
    return Vocabulary(tuple(seen))


@dataclass(frozen=True)
class ConditionVector:
    """Two-hot conditioning input: one chord-pair slot, one part slot."""

    chord_index: int
    part_index: int
    dense: np.ndarray

    @property
    def dim(self) -> int:
        return self.dense.shape[0]


def encode_condition(chord_token, part, chord_table: Sequence[str]) -> ConditionVector:
    """Encode (chord pair, part) as a two-hot vector over |table| + 4 slots."""
    key = str(chord_token)
    try:
        chord_index = list(map(str, chord_table)).index(key)
    except ValueError:
        raise ValueError(f"chord token {key!r} not in the chord table") from None
    part_index = int(part)
    if not 0 <= part_index <= 3:
        raise ValueError(f"part index {part_index} outside 0..3")
    dense = np.zeros(len(chord_table) + 4, dtype=np.float64)
    dense[chord_index] = 1.0
    dense[len(chord_table) + part_index] = 1.0
    return ConditionVector(chord_index, part_index, dense)


def condition_dim(chord_table: Sequence[str]) -> int:
    return len(chord_table) + 4


def vocab_fingerprint(vocabulary: Vocabulary, chord_table: Sequence[str]) -> str:
    """Stable hash binding checkpoints to the vocabulary and chord table."""
    payload = {"vocab": vocabulary.to_payload(), "chord_tokens": list(map(str, chord_table))}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_vocab(path, vocabulary: Vocabulary, chord_table: Sequence[str]) -> None:
    payload = vocabulary.to_payload()
    payload["chord_tokens"] = list(map(str, chord_table))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_vocab(path) -> tuple[Vocabulary, tuple[str, ...]]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return Vocabulary.from_payload(payload), tuple(payload.get("chord_tokens", ()))

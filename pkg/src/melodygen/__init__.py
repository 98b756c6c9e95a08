"""Pop melody generation toolkit.

Melodies are sequences of note words (pitch, onset, duration bundled into
one token) generated by a conditional LSTM; song structure (two-bar chord
pairs and part labels) comes from a two-fold HMM; input and output are
Standard MIDI Files.
"""

from .corpus import (
    ChordSeqToken,
    CorpusStats,
    CorpusStore,
    MelodySample,
    PartLabel,
    SongScore,
    compute_stats,
    ingest_corpus,
    ingest_song,
    quantize_duration,
    quantize_onset,
    segment_samples,
)
from .hmm import HmmParams, estimate_params, joint_probability, sample_parts, viterbi_chords
from .neural import ModelParams, RangeRegConfig, range_penalty_weights
from .pipeline import (
    SongPlan,
    TrainConfig,
    assemble_song,
    evaluate_range_compliance,
    generate_song,
    plan_song,
    train,
)
from .smf import MidiDocument, TimedNote, build_document, extract_notes, parse_midi, write_midi
from .vocab import ConditionVector, NoteWord, Vocabulary, build_vocab, encode_condition

__version__ = "0.1.0"

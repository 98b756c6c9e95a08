"""End-to-end orchestration: train, plan song structure, generate, assemble.

A song is planned as a sequence of two-bar segments: parts sampled from the
structure HMM, chord tokens Viterbi-decoded against those parts. Each
segment's melody is then sampled autoregressively from the trained model
under its (chord pair, part) condition, and the segments are laid out on a
common tick timeline in one format-0 MIDI file.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import hmm as hmm_mod
from . import neural, smf
from .corpus import (
    BARS_PER_SEGMENT,
    BEATS_PER_BAR,
    ChordSeqToken,
    MelodySample,
    PartLabel,
)
from .neural import AdamState, Gradients, ModelParams, RangeRegConfig
from .smf import TimedNote
from .vocab import (
    BOS_ID,
    EOS_ID,
    ConditionVector,
    Vocabulary,
    encode_condition,
    vocab_fingerprint,
)

MAX_SEGMENT_WORDS = 32


@dataclass
class TrainConfig:
    epochs: int = 15  # inside the observed safe zone: in tune after ~5, copying after ~20
    batch_size: int = 16
    learning_rate: float = 0.001
    dropout_p: float = 0.5
    reg: RangeRegConfig = field(default_factory=RangeRegConfig)
    seed: int = 0
    checkpoint_every: int = 5
    embed_dim: int = neural.DEFAULT_EMBED_DIM
    hidden_dim: int = neural.DEFAULT_HIDDEN_DIM
    condition_mode: str = "every-step"  # or "first-step": feed the condition once

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.condition_mode not in ("every-step", "first-step"):
            raise ValueError(f"unknown condition_mode {self.condition_mode!r}")

    @property
    def condition_first_step_only(self) -> bool:
        return self.condition_mode == "first-step"


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    mean_penalty: float
    wall_time: float

    def to_record(self) -> dict:
        return {
            "epoch": self.epoch,
            "mean_loss": self.mean_loss,
            "mean_penalty": self.mean_penalty,
            "wall_time": self.wall_time,
        }


@dataclass
class SongPlan:
    segments: list[tuple[PartLabel, str]]

    @property
    def segment_count(self) -> int:
        return len(self.segments)


def _encode_samples(
    samples: Sequence[MelodySample], vocabulary: Vocabulary, chord_table: Sequence[str]
):
    encoded = []
    for sample in samples:
        ids = vocabulary.encode_sample(sample.words)
        inputs = np.array([BOS_ID] + ids, dtype=np.intp)
        targets = np.array(ids + [EOS_ID], dtype=np.intp)
        cond = encode_condition(sample.chord_token, sample.part, chord_table).dense
        encoded.append((inputs, targets, cond))
    return encoded


def train(
    samples: Sequence[MelodySample],
    vocabulary: Vocabulary,
    chord_table: Sequence[str],
    config: TrainConfig,
    out_dir=None,
    log=None,
) -> tuple[ModelParams, list[EpochMetrics]]:
    """Train the melody model; returns final params and per-epoch metrics.

    Mini-batches are reshuffled every epoch from a seeded stream; gradient
    accumulation order inside a batch is fixed, so a (samples, config) pair
    fully determines the trajectory.
    """
    if not samples:
        raise ValueError("cannot train on an empty corpus")
    encoded = _encode_samples(samples, vocabulary, chord_table)
    cond_dim = encoded[0][2].shape[0]
    params = neural.init_params(
        vocabulary.size,
        cond_dim,
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        seed=config.seed,
    )
    weights = neural.range_penalty_weights(vocabulary, config.reg)
    mu = config.reg.mu
    state = AdamState.for_params(params)
    shuffle_rng = np.random.default_rng(config.seed + 1)
    dropout_rng = np.random.default_rng(config.seed + 2)
    vocab_hash = vocab_fingerprint(vocabulary, chord_table)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    metrics: list[EpochMetrics] = []
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(encoded))
        loss_sum = 0.0
        penalty_sum = 0.0
        step_count = 0
        for batch_start in range(0, len(order), config.batch_size):
            batch = order[batch_start : batch_start + config.batch_size]
            total = Gradients.zeros_like(params)
            for idx in batch:
                inputs, targets, cond = encoded[idx]
                trace = neural.forward_sample(
                    params, cond, inputs, dropout_p=config.dropout_p, rng=dropout_rng,
                    condition_first_step_only=config.condition_first_step_only,
                )
                probs = neural.softmax(trace.logits)
                addends = (
                    neural.regularized_softmax_grad(probs, weights, mu) if mu > 0 else None
                )
                total.add_(neural.backward_sample(params, trace, targets, addends))
                loss_sum += neural.cross_entropy(trace.logits, targets)
                penalty_sum += float(neural.expected_penalty(probs, weights).mean())
                step_count += 1
            total.scale_(1.0 / len(batch))
            neural.adam_update(params, total, state, lr=config.learning_rate)
        elapsed = time.perf_counter() - started
        entry = EpochMetrics(
            epoch=epoch,
            mean_loss=loss_sum / step_count,
            mean_penalty=penalty_sum / step_count,
            wall_time=elapsed,
        )
        metrics.append(entry)
        if log is not None:
            log(entry)
        if out_dir is not None and (
            epoch % config.checkpoint_every == 0 or epoch == config.epochs
        ):
            neural.save_checkpoint(
                out_dir / f"checkpoint_epoch{epoch:03d}.npz",
                params,
                vocab_hash,
                extra={"epoch": epoch, "condition_mode": config.condition_mode},
            )
    if out_dir is not None:
        neural.save_checkpoint(
            out_dir / "model.npz", params, vocab_hash,
            extra={"epoch": config.epochs, "condition_mode": config.condition_mode},
        )
    return params, metrics


def plan_song(
    params: hmm_mod.HmmParams,
    segment_count: int = 16,
    seed: int = 0,
    parts: Sequence[PartLabel] | None = None,
    sample_chords: bool = False,
) -> SongPlan:
    """Sample a part sequence, then decode chord tokens for it.

    ``parts`` overrides the sampled sequence (useful for fixed structures);
    ``sample_chords`` switches the chord step from Viterbi decoding to
    posterior sampling.
    """
    if parts is None:
        if segment_count < 1:
            raise ValueError("segment_count must be >= 1")
        parts = hmm_mod.sample_parts(params, segment_count, seed=seed)
    else:
        parts = list(parts)
    if sample_chords:
        chords = hmm_mod.sample_chords(params, parts, seed=seed)
    else:
        chords = hmm_mod.viterbi_chords(params, parts)
    return SongPlan(segments=list(zip(parts, chords)))


def generate_segment(
    params: ModelParams,
    vocabulary: Vocabulary,
    chord_token: ChordSeqToken | str,
    part: PartLabel,
    condition: ConditionVector,
    temperature: float = 1.0,
    max_words: int = MAX_SEGMENT_WORDS,
    seed: int = 0,
    condition_first_step_only: bool = False,
) -> MelodySample:
    """Sample one two-bar melody autoregressively from BOS until EOS.

    The begin marker is masked out of the softmax (only real words and the
    end marker can be emitted), and the decoded words are re-sorted by
    (onset, pitch) before assembly.
    """
    rng = np.random.default_rng(seed)
    h = np.zeros(params.hidden_dim)
    c = np.zeros(params.hidden_dim)
    token = BOS_ID
    words = []
    zero_cond = np.zeros_like(condition.dense)
    for step in range(max_words):
        cond_vec = condition.dense
        if condition_first_step_only and step > 0:
            cond_vec = zero_cond
        x = np.concatenate([params.embedding[token], cond_vec])
        h, c = neural.lstm_step(params, x, h, c)
        logits = h @ params.w_out + params.b_out
        logits[BOS_ID] = -np.inf
        token = neural.sample_token(logits, temperature, rng)
        if token == EOS_ID:
            break
        words.append(vocabulary.decode(token))
    words.sort(key=lambda w: (w.onset, w.pitch, w.duration))
    if isinstance(chord_token, str):
        chord_token = ChordSeqToken.parse(chord_token)
    return MelodySample(condition=(chord_token, part), words=tuple(words))


def generate_song(
    params: ModelParams,
    vocabulary: Vocabulary,
    chord_table: Sequence[str],
    plan: SongPlan,
    temperature: float = 1.0,
    max_words: int = MAX_SEGMENT_WORDS,
    seed: int = 0,
    resample_empty: bool = False,
    max_resamples: int = 8,
    condition_first_step_only: bool = False,
) -> list[MelodySample]:
    """Generate one melody per planned segment; segment k uses seed + k."""
    segments = []
    for k, (part, chord) in enumerate(plan.segments):
        condition = encode_condition(chord, part, chord_table)
        segment = generate_segment(
            params, vocabulary, chord, part, condition,
            temperature=temperature, max_words=max_words, seed=seed + k,
            condition_first_step_only=condition_first_step_only,
        )
        attempt = 0
        while resample_empty and not segment.words and attempt < max_resamples:
            attempt += 1
            segment = generate_segment(
                params, vocabulary, chord, part, condition,
                temperature=temperature, max_words=max_words,
                seed=seed + k + 1_000_003 * attempt,
                condition_first_step_only=condition_first_step_only,
            )
        segments.append(segment)
    return segments


def assemble_song(
    plan: SongPlan,
    segments: Sequence[MelodySample],
    tempo_bpm: float = smf.DEFAULT_TEMPO_BPM,
    ticks_per_quarter: int = smf.DEFAULT_TICKS_PER_QUARTER,
) -> smf.MidiDocument:
    """Lay segments on the tick timeline and wrap them in a format-0 file."""
    if len(segments) != plan.segment_count:
        raise ValueError(
            f"{len(segments)} segments supplied for a plan of {plan.segment_count}"
        )
    if ticks_per_quarter % 4 != 0:
        raise ValueError("ticks_per_quarter must be divisible by 4")
    sixteenth = ticks_per_quarter // 4
    segment_ticks = BARS_PER_SEGMENT * BEATS_PER_BAR * ticks_per_quarter
    whole = 4 * ticks_per_quarter
    notes = []
    for k, segment in enumerate(segments):
        offset = k * segment_ticks
        for word in segment.words:
            duration = word.duration * whole
            notes.append(
                TimedNote(
                    pitch=word.pitch,
                    onset_ticks=offset + word.onset * sixteenth,
                    duration_ticks=int(duration),
                    velocity=smf.DEFAULT_VELOCITY,
                    channel=0,
                )
            )
    notes.sort(key=lambda n: (n.onset_ticks, n.pitch, n.duration_ticks))
    return smf.build_document(notes, ticks_per_quarter, tempo_bpm)


def evaluate_range_compliance(
    songs: Sequence[smf.MidiDocument], cfg: RangeRegConfig
) -> float:
    """Fraction of notes outside [p_min, p_max] across a set of songs."""
    if not songs:
        raise ValueError("no songs to evaluate")
    total = 0
    outside = 0
    for doc in songs:
        for note in smf.extract_notes(doc):
            total += 1
            if note.pitch < cfg.p_min or note.pitch > cfg.p_max:
                outside += 1
    if total == 0:
        raise ValueError("songs contain no notes")
    return outside / total

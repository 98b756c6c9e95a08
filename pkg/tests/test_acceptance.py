"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Run with `pytest tests/test_acceptance.py -v -s`.

Criteria 3 and 7 train real models on the bundled synthetic corpus; the
whole module finishes in a few minutes on one CPU core.
"""

import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from melodygen import hmm as hmm_mod
from melodygen import neural, smf
from melodygen.corpus import PartLabel, REFERENCE_CHORD_TOKENS, compute_stats
from melodygen.hmm import HmmParams, brute_force_decode, joint_probability, viterbi_chords
from melodygen.neural import RangeRegConfig
from melodygen.pipeline import (
    TrainConfig,
    assemble_song,
    evaluate_range_compliance,
    generate_song,
    plan_song,
    train,
)
from melodygen.vocab import BOS_ID, EOS_ID, NoteWord, Vocabulary, encode_condition

from gradtools import finite_difference_errors

DATA_DIR = Path(__file__).resolve().parent.parent / "data" / "corpus"


def report(criterion: str, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS ({detail})", flush=True)


def test_criterion_1_gradient_fidelity():
    """Analytic BPTT gradients match central finite differences (h=1e-5)
    with max relative error < 1e-5 on 20 random tiny models, in < 10 s."""
    words = (
        NoteWord(55, 0, Fraction(1, 16)),
        NoteWord(66, 4, Fraction(1, 8)),
        NoteWord(80, 8, Fraction(1, 4)),
    )
    vocabulary = Vocabulary(words)  # V = 5 with the reserved ids
    weights = neural.range_penalty_weights(vocabulary, RangeRegConfig(60, 72))
    started = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(2025)
    for trial in range(20):
        params = neural.init_params(5, 3, embed_dim=3, hidden_dim=3, seed=trial)
        cond = rng.random(3)
        tokens = np.array([BOS_ID, 2, 3, 4])  # sequence length 4
        targets = np.array([2, 3, 4, EOS_ID])
        mu = 0.0 if trial % 2 == 0 else 0.01
        err = finite_difference_errors(
            params, cond, tokens, targets, weights if mu else None, mu, h=1e-5
        )
        worst = max(worst, err)
    elapsed = time.perf_counter() - started
    assert worst < 1e-5, f"max relative gradient error {worst:.3e}"
    assert elapsed < 10.0, f"gradient check took {elapsed:.1f}s"
    report("1 gradient fidelity", f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_regularizer_exactness():
    """Worked instance W=[2,0,2] with uniform P gives C=4/3 and
    addend/mu=[2/9,-4/9,2/9]; addend sums to 0 within 1e-12 on 1000 draws."""
    probs = np.full(3, 1.0 / 3.0)
    weights = np.array([2.0, 0.0, 2.0])
    cost = float(neural.expected_penalty(probs, weights))
    assert cost == pytest.approx(4.0 / 3.0, abs=1e-15)
    addend = neural.regularized_softmax_grad(probs, weights, 1.0)
    assert np.allclose(addend, [2 / 9, -4 / 9, 2 / 9], atol=1e-15)

    rng = np.random.default_rng(7)
    worst_sum = 0.0
    for _ in range(1000):
        p = neural.softmax(rng.standard_normal(12) * 4)
        w = rng.random(12) * 14
        worst_sum = max(
            worst_sum, abs(float(neural.regularized_softmax_grad(p, w, 0.01).sum()))
        )
    assert worst_sum < 1e-12
    report("2 regularizer exactness", f"C=4/3 exact, worst addend sum {worst_sum:.1e}")


def test_criterion_3_regularization_efficacy(bundled_corpus):
    """Two models differing only in mu (0 vs 0.01): over 100 generated songs
    each with fixed seeds, the mu=0.01 out-of-range fraction is strictly
    lower and below 10%. Runtime < 10 min."""
    store, vocabulary, table = bundled_corpus
    hmm_params = hmm_mod.estimate_params(store.samples, smoothing=0.01, chord_tokens=table)
    reg_bounds = RangeRegConfig(60, 72)
    started = time.perf_counter()
    fractions = {}
    for mu in (0.0, 0.01):
        config = TrainConfig(
            epochs=40, batch_size=8, learning_rate=0.001, dropout_p=0.0,
            reg=RangeRegConfig(60, 72, mu), seed=11, embed_dim=64, hidden_dim=64,
        )
        params, _ = train(store.samples, vocabulary, table, config)
        docs = []
        for s in range(100):
            plan = plan_song(hmm_params, 16, seed=1000 + s)
            segments = generate_song(
                params, vocabulary, table, plan, temperature=0.95, seed=5000 + 100 * s
            )
            docs.append(assemble_song(plan, segments))
        fractions[mu] = evaluate_range_compliance(docs, reg_bounds)
    elapsed = time.perf_counter() - started
    assert fractions[0.01] < fractions[0.0], (
        f"regularized model not strictly lower: {fractions}"
    )
    assert fractions[0.01] < 0.10, f"mu=0.01 fraction {fractions[0.01]:.4f} >= 10%"
    assert elapsed < 600.0, f"efficacy experiment took {elapsed:.0f}s"
    report(
        "3 regularization efficacy",
        f"mu=0: {fractions[0.0]:.4f}, mu=0.01: {fractions[0.01]:.4f}, {elapsed:.0f}s",
    )


def test_criterion_4_hmm_oracle_equivalence():
    """Viterbi equals exhaustive search on 100 random instances (K<=4,
    length<=6) and on the worked example with joint probability 0.1008."""
    params = HmmParams(
        chord_tokens=("C-C", "F-G"),
        pi=np.array([0.6, 0.4]),
        A=np.array([[0.7, 0.3], [0.4, 0.6]]),
        B=np.array([[0.8, 0.0, 0.2, 0.0], [0.3, 0.0, 0.7, 0.0]]),
        part_pi=np.array([1.0, 0.0, 0.0, 0.0]),
        part_A=np.eye(4),
    )
    parts = [PartLabel.VERSE, PartLabel.CHORUS]
    path = viterbi_chords(params, parts)
    assert path == brute_force_decode(params, parts) == ["C-C", "F-G"]
    assert joint_probability(params, parts, path) == pytest.approx(0.1008, abs=1e-12)

    rng = np.random.default_rng(424242)

    def dist(n):
        raw = rng.random(n) + 1e-3
        return raw / raw.sum()

    for _ in range(100):
        k = int(rng.integers(1, 5))
        length = int(rng.integers(1, 7))
        random_params = HmmParams(
            chord_tokens=tuple(f"s{i}" for i in range(k)),
            pi=dist(k),
            A=np.stack([dist(k) for _ in range(k)]),
            B=np.stack([dist(4) for _ in range(k)]),
            part_pi=dist(4),
            part_A=np.stack([dist(4) for _ in range(4)]),
        )
        random_parts = [PartLabel(int(p)) for p in rng.integers(0, 4, size=length)]
        assert viterbi_chords(random_params, random_parts) == brute_force_decode(
            random_params, random_parts
        )
    report("4 HMM oracle equivalence", "worked example 0.1008 exact; 100/100 agree")


def test_criterion_5_midi_codec():
    """Byte-identical round-trip on every bundled fixture; exact note-level
    round-trip on 1000 randomized synthetic scores."""
    fixtures = sorted(DATA_DIR.glob("*.mid"))
    assert fixtures, "bundled corpus missing"
    for path in fixtures:
        data = path.read_bytes()
        assert smf.write_midi(smf.parse_midi(data)) == data, f"byte mismatch: {path.name}"

    rng = np.random.default_rng(55)
    for _ in range(1000):
        spans = {}
        notes = []
        for _ in range(int(rng.integers(0, 30))):
            pitch = int(rng.integers(0, 128))
            onset = int(rng.integers(0, 30_000))
            duration = int(rng.integers(1, 5_000))
            velocity = int(rng.integers(1, 128))
            channel = int(rng.integers(0, 16))
            if any(onset < e and onset + duration > s for s, e in spans.get(pitch, [])):
                continue  # same-pitch overlap is ambiguous in the wire format
            spans.setdefault(pitch, []).append((onset, onset + duration))
            notes.append(smf.TimedNote(pitch, onset, duration, velocity, channel))
        notes.sort(key=lambda n: (n.onset_ticks, n.pitch, n.duration_ticks, n.channel))
        doc = smf.build_document(notes, ticks_per_quarter=int(rng.integers(24, 960)))
        extracted = smf.extract_notes(smf.parse_midi(smf.write_midi(doc)))
        assert extracted == notes
    report("5 MIDI codec", f"{len(fixtures)} fixtures byte-exact; 1000 scores note-exact")


def test_criterion_6_parameter_count():
    """Default dimensions with a 2082-word vocabulary (+2 reserved) and the
    60-dim reference condition land in the 1.5M-1.7M parameter budget."""
    params = neural.init_params(2082 + 2, len(REFERENCE_CHORD_TOKENS) + 4)
    count = params.param_count()
    assert 1_500_000 <= count <= 1_700_000, count
    report("6 parameter count", f"{count:,} learnable parameters")


def test_criterion_7_training_sanity(bundled_corpus):
    """20 default-config epochs cut mean cross-entropy to <= 70% of the
    epoch-1 value; a single sample overfits to < 0.1 within 200 steps.
    Runtime < 5 min."""
    store, vocabulary, table = bundled_corpus
    started = time.perf_counter()
    config = TrainConfig(epochs=20, seed=0)
    _, metrics = train(store.samples, vocabulary, table, config)
    ratio = metrics[-1].mean_loss / metrics[0].mean_loss
    assert ratio <= 0.70, f"epoch-20/epoch-1 loss ratio {ratio:.3f}"

    sample = store.samples[0]
    ids = vocabulary.encode_sample(sample.words)
    inputs = np.array([BOS_ID] + ids)
    targets = np.array(ids + [EOS_ID])
    cond = encode_condition(sample.chord_token, sample.part, table).dense
    params = neural.init_params(vocabulary.size, cond.shape[0], seed=0)
    state = neural.AdamState.for_params(params)
    reached = None
    for step in range(200):
        trace = neural.forward_sample(params, cond, inputs)
        loss = neural.cross_entropy(trace.logits, targets)
        if loss < 0.1:
            reached = step
            break
        grads = neural.backward_sample(params, trace, targets)
        neural.adam_update(params, grads, state, lr=0.001)
    elapsed = time.perf_counter() - started
    assert reached is not None, "single-sample loss never fell below 0.1 in 200 steps"
    assert elapsed < 300.0, f"training sanity took {elapsed:.0f}s"
    report(
        "7 training sanity",
        f"loss ratio {ratio:.3f}, overfit <0.1 at step {reached}, {elapsed:.0f}s",
    )


def test_criterion_8_documented_substitutes(bundled_corpus, capsys):
    """The corpus-bound reference numbers (46 songs / 1912 samples / 2082
    words, human-evaluation proportions, safe-zone epochs) are not
    reproducible at desk scale; this build substitutes the bundled corpus
    plus format and default checks, verified here."""
    store, vocabulary, table = bundled_corpus
    # statistics report carries the full reference field set
    record = compute_stats(store.samples).to_report()
    assert set(record) == {
        "songs", "samples", "avg_notes", "max_notes", "min_notes", "stddev_notes",
        "min_pitch", "max_pitch", "median_pitch",
        "min_length", "max_length", "median_length",
    }
    # reference conditioning table realizes the documented 56 + 4 layout
    assert len(REFERENCE_CHORD_TOKENS) == 56
    cond = encode_condition("C-Em", PartLabel.VERSE, REFERENCE_CHORD_TOKENS)
    assert cond.dim == 60
    # training length is configurable and defaults inside the safe zone
    default_epochs = TrainConfig().epochs
    assert 5 <= default_epochs < 20
    assert TrainConfig(epochs=7).epochs == 7
    report(
        "8 documented substitutes",
        f"stats fields ok, 60-dim reference condition, default epochs {default_epochs}",
    )

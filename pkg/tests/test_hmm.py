import numpy as np
import pytest

from melodygen.corpus import ChordSeqToken, MelodySample, PartLabel
from melodygen.hmm import (
    DecodingError,
    HmmParams,
    brute_force_decode,
    estimate_params,
    joint_probability,
    sample_chords,
    sample_parts,
    viterbi_chords,
)
from melodygen.vocab import NoteWord

from fractions import Fraction

V, P, C, B = PartLabel.VERSE, PartLabel.PRE_CHORUS, PartLabel.CHORUS, PartLabel.BRIDGE


def two_state_params():
    """Worked decoding instance over parts {verse, chorus}.

    All four chord paths for parts [verse, chorus], by direct product:
      C-C,C-C: 0.6*0.8*0.7*0.2 = 0.0672
      C-C,F-G: 0.6*0.8*0.3*0.7 = 0.1008  <- winner
      F-G,C-C: 0.4*0.3*0.4*0.2 = 0.0096
      F-G,F-G: 0.4*0.3*0.6*0.7 = 0.0504
    """
    return HmmParams(
        chord_tokens=("C-C", "F-G"),
        pi=np.array([0.6, 0.4]),
        A=np.array([[0.7, 0.3], [0.4, 0.6]]),
        B=np.array([[0.8, 0.0, 0.2, 0.0], [0.3, 0.0, 0.7, 0.0]]),
        part_pi=np.array([1.0, 0.0, 0.0, 0.0]),
        part_A=np.eye(4),
    )


def make_sample(chord, part, song, position):
    return MelodySample(
        condition=(ChordSeqToken.parse(chord), part),
        words=(NoteWord(60, 0, Fraction(1, 16)),),
        song=song,
        position=position,
    )


def random_params(rng, k):
    def dist(n):
        raw = rng.random(n) + 1e-3
        return raw / raw.sum()

    return HmmParams(
        chord_tokens=tuple(f"s{i}" for i in range(k)),
        pi=dist(k),
        A=np.stack([dist(k) for _ in range(k)]),
        B=np.stack([dist(4) for _ in range(k)]),
        part_pi=dist(4),
        part_A=np.stack([dist(4) for _ in range(4)]),
    )


class TestEstimate:
    def test_single_observed_transition(self):
        samples = [make_sample("C-C", V, 0, 0), make_sample("F-G", V, 0, 1)]
        params = estimate_params(samples, smoothing=0.0)
        i, j = params.chord_tokens.index("C-C"), params.chord_tokens.index("F-G")
        assert params.A[i, j] == 1.0

    def test_zero_counts_with_smoothing_give_uniform(self):
        samples = [make_sample("C-C", V, 0, 0)]  # single segment: no transitions
        params = estimate_params(samples, smoothing=0.5)
        assert np.allclose(params.A, 1.0)  # K=1
        assert np.allclose(params.part_A, 0.25)

    def test_uniform_fallback_without_smoothing(self):
        samples = [make_sample("C-C", V, 0, 0), make_sample("F-G", C, 1, 0)]
        params = estimate_params(samples, smoothing=0.0)
        assert np.allclose(params.A.sum(axis=1), 1.0)
        assert np.allclose(params.A, 0.5)  # no observed transitions at all

    def test_no_cross_song_transitions(self):
        # C-C ends song 0 and F-G starts song 1; that pair must not count.
        samples = [
            make_sample("C-C", V, 0, 0),
            make_sample("C-C", V, 0, 1),
            make_sample("F-G", V, 1, 0),
            make_sample("F-G", V, 1, 1),
        ]
        params = estimate_params(samples, smoothing=0.0)
        i, j = params.chord_tokens.index("C-C"), params.chord_tokens.index("F-G")
        assert params.A[i, j] == 0.0
        assert params.A[i, i] == 1.0
        assert params.A[j, j] == 1.0

    def test_hand_counted_two_song_fixture(self):
        # song 0: C-C -> F-G -> C-C ; song 1: F-G -> F-G
        samples = [
            make_sample("C-C", V, 0, 0),
            make_sample("F-G", C, 0, 1),
            make_sample("C-C", V, 0, 2),
            make_sample("F-G", C, 1, 0),
            make_sample("F-G", B, 1, 1),
        ]
        params = estimate_params(samples, smoothing=0.0)
        i, j = params.chord_tokens.index("C-C"), params.chord_tokens.index("F-G")
        # transitions: C-C->F-G, F-G->C-C, F-G->F-G (counts 1,1,1)
        assert params.A[i, j] == 1.0
        assert params.A[j, i] == 0.5 and params.A[j, j] == 0.5
        # initial states: one C-C, one F-G
        assert np.allclose(params.pi, [0.5, 0.5])
        # emissions: C-C seen with verse twice; F-G with chorus twice, bridge once
        assert np.allclose(params.B[i], [1.0, 0.0, 0.0, 0.0])
        assert np.allclose(params.B[j], [0.0, 0.0, 2 / 3, 1 / 3])

    def test_row_stochastic_for_any_smoothing(self):
        rng = np.random.default_rng(0)
        samples = [
            make_sample(chord, PartLabel(int(rng.integers(4))), song, pos)
            for song in range(3)
            for pos, chord in enumerate(rng.choice(["C-C", "F-G", "Dm-G"], size=5))
        ]
        for smoothing in (0.0, 0.01, 1.0, 7.3):
            params = estimate_params(samples, smoothing=smoothing)
            for arr in (params.pi, params.A, params.B, params.part_pi, params.part_A):
                assert np.allclose(arr.sum(axis=-1), 1.0, atol=1e-9)
                assert np.all(arr >= 0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            estimate_params([])


class TestSampleParts:
    def test_absorbing_chain(self):
        params = two_state_params()
        assert sample_parts(params, 10, seed=3) == [V] * 10

    def test_deterministic_given_seed(self):
        rng_params = random_params(np.random.default_rng(5), 3)
        a = sample_parts(rng_params, 20, seed=42)
        b = sample_parts(rng_params, 20, seed=42)
        assert a == b

    def test_length_one_matches_initial_distribution(self):
        params = random_params(np.random.default_rng(9), 2)
        counts = np.zeros(4)
        n = 10_000
        for seed in range(n):
            counts[int(sample_parts(params, 1, seed=seed)[0])] += 1
        assert np.all(np.abs(counts / n - params.part_pi) < 0.02)


class TestViterbi:
    def test_worked_example(self):
        params = two_state_params()
        path = viterbi_chords(params, [V, C])
        assert path == ["C-C", "F-G"]
        assert joint_probability(params, [V, C], path) == pytest.approx(0.1008, abs=1e-12)

    def test_single_state_constant_path(self):
        params = HmmParams(
            chord_tokens=("C-C",),
            pi=np.array([1.0]),
            A=np.array([[1.0]]),
            B=np.array([[0.25, 0.25, 0.25, 0.25]]),
            part_pi=np.full(4, 0.25),
            part_A=np.full((4, 4), 0.25),
        )
        assert viterbi_chords(params, [V, C, B, P, V]) == ["C-C"] * 5

    def test_uniform_ties_break_to_first_path(self):
        k = 3
        params = HmmParams(
            chord_tokens=tuple(f"s{i}" for i in range(k)),
            pi=np.full(k, 1 / k),
            A=np.full((k, k), 1 / k),
            B=np.full((k, 4), 0.25),
            part_pi=np.full(4, 0.25),
            part_A=np.full((4, 4), 0.25),
        )
        assert viterbi_chords(params, [V, C, V]) == ["s0", "s0", "s0"]
        assert brute_force_decode(params, [V, C, V]) == ["s0", "s0", "s0"]

    def test_zero_emission_column_raises(self):
        params = two_state_params()
        with pytest.raises(DecodingError, match="bridge"):
            viterbi_chords(params, [V, B])

    def test_oracle_equivalence_100_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            k = int(rng.integers(1, 5))
            length = int(rng.integers(1, 7))
            params = random_params(rng, k)
            parts = [PartLabel(int(p)) for p in rng.integers(0, 4, size=length)]
            assert viterbi_chords(params, parts) == brute_force_decode(params, parts)

    def test_viterbi_path_is_maximal(self):
        import itertools

        rng = np.random.default_rng(7)
        params = random_params(rng, 3)
        parts = [V, C, B, C]
        best = joint_probability(params, parts, viterbi_chords(params, parts))
        for path in itertools.product(params.chord_tokens, repeat=len(parts)):
            assert best >= joint_probability(params, parts, list(path)) - 1e-15


class TestJointProbability:
    def test_length_one_collapses(self):
        params = two_state_params()
        assert joint_probability(params, [C], ["F-G"]) == pytest.approx(0.4 * 0.7)

    def test_zero_transition_gives_zero(self):
        params = two_state_params()
        assert joint_probability(params, [V, B], ["C-C", "C-C"]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            joint_probability(two_state_params(), [V], ["C-C", "F-G"])


class TestBruteForce:
    def test_search_space_guard(self):
        params = random_params(np.random.default_rng(0), 4)
        with pytest.raises(ValueError, match="10\\^6"):
            brute_force_decode(params, [V] * 10)

    def test_single_state(self):
        params = HmmParams(
            chord_tokens=("only",),
            pi=np.array([1.0]),
            A=np.array([[1.0]]),
            B=np.full((1, 4), 0.25),
            part_pi=np.full(4, 0.25),
            part_A=np.full((4, 4), 0.25),
        )
        assert brute_force_decode(params, [V, V]) == ["only", "only"]


class TestPosteriorSampling:
    def test_deterministic_and_valid(self):
        params = random_params(np.random.default_rng(11), 3)
        parts = [PartLabel(int(p)) for p in np.random.default_rng(1).integers(0, 4, 6)]
        a = sample_chords(params, parts, seed=5)
        assert a == sample_chords(params, parts, seed=5)
        assert all(token in params.chord_tokens for token in a)
        assert joint_probability(params, parts, a) > 0


class TestPersistence:
    def test_round_trip(self, tmp_path):
        params = random_params(np.random.default_rng(3), 3)
        params.save(tmp_path / "hmm.json")
        loaded = HmmParams.load(tmp_path / "hmm.json")
        assert loaded.chord_tokens == params.chord_tokens
        for name in ("pi", "A", "B", "part_pi", "part_A"):
            assert np.allclose(getattr(loaded, name), getattr(params, name))

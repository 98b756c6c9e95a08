"""Two-fold multinomial HMM over song structure.

The part sequence (verse/pre-chorus/chorus/bridge) is an observed Markov
chain that gets sampled; the two-bar chord tokens are latent states that
emit parts, recovered from a sampled part sequence by Viterbi decoding of

    p(x_1..x_N, z_1..z_N) = p(z_1) prod_n p(z_n | z_{n-1}) prod_n p(x_n | z_n)

with x the parts and z the chord tokens. All distributions are estimated
by counting segment sequences per song (no cross-song transitions) with
additive smoothing.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import MelodySample, PartLabel, PART_LABELS

N_PARTS = len(PART_LABELS)
DEFAULT_SMOOTHING = 0.01

_ROW_TOL = 1e-9


class DecodingError(ValueError):
    """Raised when a part cannot be emitted by any chord state."""


@dataclass
class HmmParams:
    chord_tokens: tuple[str, ...]
    pi: np.ndarray       # (K,) initial chord distribution
    A: np.ndarray        # (K, K) chord transitions
    B: np.ndarray        # (K, 4) part emission per chord
    part_pi: np.ndarray  # (4,) initial part distribution
    part_A: np.ndarray   # (4, 4) part transitions

    @property
    def n_states(self) -> int:
        return len(self.chord_tokens)

    def validate(self) -> None:
        k = self.n_states
        shapes = {
            "pi": (self.pi, (k,)),
            "A": (self.A, (k, k)),
            "B": (self.B, (k, N_PARTS)),
            "part_pi": (self.part_pi, (N_PARTS,)),
            "part_A": (self.part_A, (N_PARTS, N_PARTS)),
        }
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative entries")
            sums = arr.sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > _ROW_TOL):
                raise ValueError(f"{name} rows do not sum to 1 (got {sums})")

    def save(self, path) -> None:
        payload = {
            "version": 1,
            "chord_tokens": list(self.chord_tokens),
            "parts": [p.label for p in PART_LABELS],
            "pi": self.pi.tolist(),
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "part_pi": self.part_pi.tolist(),
            "part_A": self.part_A.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "HmmParams":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        params = cls(
            chord_tokens=tuple(payload["chord_tokens"]),
            pi=np.asarray(payload["pi"], dtype=np.float64),
            A=np.asarray(payload["A"], dtype=np.float64),
            B=np.asarray(payload["B"], dtype=np.float64),
            part_pi=np.asarray(payload["part_pi"], dtype=np.float64),
            part_A=np.asarray(payload["part_A"], dtype=np.float64),
        )
        params.validate()
        return params


def _normalize_rows(counts: np.ndarray, smoothing: float) -> np.ndarray:
    smoothed = counts + smoothing
    sums = smoothed.sum(axis=-1, keepdims=True)
    out = np.empty_like(smoothed)
    width = smoothed.shape[-1]
    flat = smoothed.reshape(-1, width)
    flat_sums = sums.reshape(-1, 1)
    flat_out = out.reshape(-1, width)
    for i in range(flat.shape[0]):
        if flat_sums[i, 0] > 0:
            flat_out[i] = flat[i] / flat_sums[i, 0]
        else:
            flat_out[i] = 1.0 / width  # no evidence: fall back to uniform
    return out


def estimate_params(
    samples: Sequence[MelodySample],
    smoothing: float = DEFAULT_SMOOTHING,
    chord_tokens: Sequence[str] | None = None,
) -> HmmParams:
    """Count segment sequences per song and normalize row-wise."""
    if not samples:
        raise ValueError("cannot estimate an HMM from an empty sample list")
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    ordered = sorted(samples, key=lambda s: (s.song, s.position))
    if chord_tokens is None:
        seen: dict[str, None] = {}
        for sample in ordered:
            seen.setdefault(str(sample.chord_token), None)
        chord_tokens = tuple(seen)
    else:
        chord_tokens = tuple(chord_tokens)
    index = {token: i for i, token in enumerate(chord_tokens)}

    k = len(chord_tokens)
    pi_counts = np.zeros(k)
    a_counts = np.zeros((k, k))
    b_counts = np.zeros((k, N_PARTS))
    part_pi_counts = np.zeros(N_PARTS)
    part_a_counts = np.zeros((N_PARTS, N_PARTS))

    by_song: dict[int, list[MelodySample]] = {}
    for sample in ordered:
        by_song.setdefault(sample.song, []).append(sample)

    for segments in by_song.values():
        states = [index[str(s.chord_token)] for s in segments]
        parts = [int(s.part) for s in segments]
        pi_counts[states[0]] += 1
        part_pi_counts[parts[0]] += 1
        for z, x in zip(states, parts):
            b_counts[z, x] += 1
        for prev, nxt in zip(states, states[1:]):
            a_counts[prev, nxt] += 1
        for prev, nxt in zip(parts, parts[1:]):
            part_a_counts[prev, nxt] += 1

    params = HmmParams(
        chord_tokens=chord_tokens,
        pi=_normalize_rows(pi_counts, smoothing),
        A=_normalize_rows(a_counts, smoothing),
        B=_normalize_rows(b_counts, smoothing),
        part_pi=_normalize_rows(part_pi_counts, smoothing),
        part_A=_normalize_rows(part_a_counts, smoothing),
    )
    params.validate()
    return params


def sample_parts(params: HmmParams, length: int, seed: int = 0) -> list[PartLabel]:
    """Ancestral sampling of the observed part chain; deterministic per seed."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    parts = [int(rng.choice(N_PARTS, p=params.part_pi))]
    for _ in range(length - 1):
        parts.append(int(rng.choice(N_PARTS, p=params.part_A[parts[-1]])))
    return [PartLabel(p) for p in parts]


def _log(arr: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(arr)


def viterbi_chords(params: HmmParams, parts: Sequence[PartLabel]) -> list[str]:
    """Most probable chord-token path for a part sequence.

    Dynamic programming in log space; score ties at each backpointer (and at
    the final state) break toward the lower token index.
    """
    if len(parts) == 0:
        raise ValueError("parts must be non-empty")
    observations = [int(p) for p in parts]
    for x in observations:
        if not np.any(params.B[:, x] > 0):
            raise DecodingError(
                f"part {PartLabel(x).label!r} has zero emission probability in every "
                "chord state; re-estimate with smoothing > 0"
            )
    log_pi, log_a, log_b = _log(params.pi), _log(params.A), _log(params.B)
    n = len(observations)
    k = params.n_states
    delta = np.empty((n, k))
    backptr = np.zeros((n, k), dtype=np.intp)
    delta[0] = log_pi + log_b[:, observations[0]]
    for t in range(1, n):
        scores = delta[t - 1][:, None] + log_a  # (prev, cur)
        backptr[t] = np.argmax(scores, axis=0)  # first max = lowest index
        delta[t] = scores[backptr[t], np.arange(k)] + log_b[:, observations[t]]
    state = int(np.argmax(delta[n - 1]))
    path = [state]
    for t in range(n - 1, 0, -1):
        state = int(backptr[t, state])
        path.append(state)
    path.reverse()
    return [params.chord_tokens[z] for z in path]


def joint_probability(
    params: HmmParams, parts: Sequence[PartLabel], chords: Sequence[str]
) -> float:
    """Exact joint probability of a (parts, chords) pair."""
    if len(parts) != len(chords):
        raise ValueError(f"length mismatch: {len(parts)} parts vs {len(chords)} chords")
    if len(parts) == 0:
        raise ValueError("sequences must be non-empty")
    index = {token: i for i, token in enumerate(params.chord_tokens)}
    states = [index[str(c)] for c in chords]
    observations = [int(p) for p in parts]
    factors = [params.pi[states[0]]]
    factors += [params.A[z0, z1] for z0, z1 in zip(states, states[1:])]
    factors += [params.B[z, x] for z, x in zip(states, observations)]
    if any(f == 0.0 for f in factors):
        return 0.0
    return float(np.exp(np.sum(np.log(factors))))


def brute_force_decode(params: HmmParams, parts: Sequence[PartLabel]) -> list[str]:
    """Exhaustive-path oracle for viterbi_chords, same tie rule.

    The backpointer tie rule (lower index wins at every step, including the
    final argmax) selects, among all maximum-probability paths, the one whose
    reversed state sequence is lexicographically smallest.
    """
    n = len(parts)
    k = params.n_states
    if k**n > 10**6:
        raise ValueError(f"search space {k}^{n} exceeds 10^6 paths")
    best_path = None
    best_key = None
    best_score = -np.inf
    log_pi, log_a, log_b = _log(params.pi), _log(params.A), _log(params.B)
    observations = [int(p) for p in parts]
    for path in itertools.product(range(k), repeat=n):
        score = log_pi[path[0]] + log_b[path[0], observations[0]]
        for z0, z1, x in zip(path, path[1:], observations[1:]):
            score += log_a[z0, z1] + log_b[z1, x]
        key = tuple(reversed(path))
        if best_path is None or score > best_score or (score == best_score and key < best_key):
            best_score = score
            best_path = path
            best_key = key
    if best_score == -np.inf:
        raise DecodingError("every chord path has probability zero")
    return [params.chord_tokens[z] for z in best_path]


def sample_chords(params: HmmParams, parts: Sequence[PartLabel], seed: int = 0) -> list[str]:
    """Posterior sampling alternative to Viterbi: forward filter, backward sample.

    Draws a chord path from p(z_1..z_N | x_1..x_N) instead of taking the
    argmax, trading determinism for structural variety.
    """
    if len(parts) == 0:
        raise ValueError("parts must be non-empty")
    rng = np.random.default_rng(seed)
    observations = [int(p) for p in parts]
    n = len(observations)
    k = params.n_states
    alpha = np.empty((n, k))
    alpha[0] = params.pi * params.B[:, observations[0]]
    if alpha[0].sum() == 0:
        raise DecodingError("part sequence has zero probability under the model")
    alpha[0] /= alpha[0].sum()
    for t in range(1, n):
        alpha[t] = (alpha[t - 1] @ params.A) * params.B[:, observations[t]]
        total = alpha[t].sum()
        if total == 0:
            raise DecodingError("part sequence has zero probability under the model")
        alpha[t] /= total
    path = [int(rng.choice(k, p=alpha[n - 1]))]
    for t in range(n - 2, -1, -1):
        weights = alpha[t] * params.A[:, path[-1]]
        weights /= weights.sum()
        path.append(int(rng.choice(k, p=weights)))
    path.reverse()
    return [params.chord_tokens[z] for z in path]

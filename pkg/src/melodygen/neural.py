"""Numerical core: conditional LSTM over note words, trained by exact BPTT.

Everything runs on float64 numpy arrays. The model is a single LSTM layer
fed, at every step, the concatenation of the current token embedding and
the two-hot condition vector; a linear projection over the hidden state
produces the next-token logits. The pitch-range regularizer enters as an
additive term on the per-step logit gradient:

    addend_i = mu * P_i * (W_i - C),   C = sum_j W_j P_j

where W holds per-word distances to the allowed pitch range. That is the
exact gradient of the expected penalty C, so the trained objective is
cross-entropy plus mu times mean expected penalty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .vocab import BOS_ID, N_RESERVED, Vocabulary

GATE_ORDER = "ifog"  # slice order inside stacked gate weights

DEFAULT_EMBED_DIM = 256
DEFAULT_HIDDEN_DIM = 256
INIT_SCALE = 0.08


class NumericalError(FloatingPointError):
    """Raised when a forward or backward pass produces non-finite values."""


class CheckpointError(ValueError):
    """Raised when a checkpoint cannot be loaded against the current vocabulary."""


@dataclass(frozen=True)
class RangeRegConfig:
    """Pitch-range regularizer settings: keep melodies within [p_min, p_max]."""

    p_min: int = 60   # C4
    p_max: int = 72   # C5
    mu: float = 0.0001

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise ValueError(f"p_min {self.p_min} exceeds p_max {self.p_max}")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")


@dataclass
class ModelParams:
    """All learnable arrays. Gate weights are stacked in i|f|o|g order."""

    embedding: np.ndarray  # (V, d_e)
    w_x: np.ndarray        # (d_e + d_c, 4*d_h)
    w_h: np.ndarray        # (d_h, 4*d_h)
    b_gates: np.ndarray    # (4*d_h,)
    w_out: np.ndarray      # (d_h, V)
    b_out: np.ndarray      # (V,)

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[0]

    @property
    def cond_dim(self) -> int:
        return self.w_x.shape[0] - self.embed_dim

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "embedding": self.embedding,
            "w_x": self.w_x,
            "w_h": self.w_h,
            "b_gates": self.b_gates,
            "w_out": self.w_out,
            "b_out": self.b_out,
        }

    def param_count(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()})


def init_params(
    vocab_size: int,
    cond_dim: int,
    embed_dim: int = DEFAULT_EMBED_DIM,
    hidden_dim: int = DEFAULT_HIDDEN_DIM,
    seed: int = 0,
) -> ModelParams:
    """Random uniform(-0.08, 0.08) weights, zero biases."""
    rng = np.random.default_rng(seed)

    def uniform(*shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    return ModelParams(
        embedding=uniform(vocab_size, embed_dim),
        w_x=uniform(embed_dim + cond_dim, 4 * hidden_dim),
        w_h=uniform(hidden_dim, 4 * hidden_dim),
        b_gates=np.zeros(4 * hidden_dim),
        w_out=uniform(hidden_dim, vocab_size),
        b_out=np.zeros(vocab_size),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_finite(name: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values in {name}")


def lstm_step(
    params: ModelParams, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One recurrence step: gates from (x, h_prev), then the cell update."""
    a = x @ params.w_x + h_prev @ params.w_h + params.b_gates
    d = params.hidden_dim
    i = _sigmoid(a[..., 0 * d : 1 * d])
    f = _sigmoid(a[..., 1 * d : 2 * d])
    o = _sigmoid(a[..., 2 * d : 3 * d])
    g = np.tanh(a[..., 3 * d : 4 * d])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    _check_finite("lstm_step", h, c)
    return h, c


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, captured during the forward pass."""

    tokens: np.ndarray      # (T,) input token ids
    x: np.ndarray           # (T, d_e + d_c)
    h_prev: np.ndarray      # (T, d_h) hidden fed into each step (row 0 is zeros)
    gates: np.ndarray       # (T, 4*d_h) post-activation i|f|o|g
    c_prev: np.ndarray      # (T, d_h)
    c: np.ndarray           # (T, d_h)
    tanh_c: np.ndarray      # (T, d_h)
    mask: np.ndarray | None  # (T, d_h) inverted-dropout mask, or None
    h_out: np.ndarray       # (T, d_h) hidden state after dropout
    logits: np.ndarray      # (T, V)

    def __len__(self) -> int:
        return self.tokens.shape[0]


def forward_sample(
    params: ModelParams,
    condition: np.ndarray,
    tokens,
    dropout_p: float = 0.0,
    rng: np.random.Generator | None = None,
    condition_first_step_only: bool = False,
) -> ForwardTrace:
    """Run the model over one token sequence (which must start with BOS).

    Dropout is inverted (scaled at train time), applied to the hidden state
    before the output projection; pass dropout_p=0 for inference. By default
    the condition vector is concatenated to the embedding at every step so it
    cannot wash out of the state; condition_first_step_only feeds it at the
    BOS step only (the feed-features-once variant, kept for comparison).
    """
    tokens = np.asarray(tokens, dtype=np.intp)
    if tokens.ndim != 1 or tokens.shape[0] == 0:
        raise ValueError("tokens must be a non-empty 1-d sequence")
    if tokens[0] != BOS_ID:
        raise ValueError("token sequence must begin with the BOS id")
    if tokens.min() < 0 or tokens.max() >= params.vocab_size:
        raise ValueError("token id out of range for this vocabulary")
    condition = np.asarray(condition, dtype=np.float64)
    if condition.shape != (params.cond_dim,):
        raise ValueError(
            f"condition has shape {condition.shape}, expected ({params.cond_dim},)"
        )
    if dropout_p > 0 and rng is None:
        raise ValueError("dropout requires an explicit rng for reproducibility")

    t_steps = tokens.shape[0]
    d = params.hidden_dim
    cond_rows = np.tile(condition, (t_steps, 1))
    if condition_first_step_only:
        cond_rows[1:] = 0.0
    x = np.concatenate([params.embedding[tokens], cond_rows], axis=1)
    xw = x @ params.w_x + params.b_gates  # precompute the input contribution

    h_prev = np.zeros((t_steps, d))
    gates = np.empty((t_steps, 4 * d))
    c_prev = np.zeros((t_steps, d))
    c_all = np.empty((t_steps, d))
    tanh_c = np.empty((t_steps, d))
    h = np.zeros(d)
    c = np.zeros(d)
    hs = np.empty((t_steps, d))
    for t in range(t_steps):
        h_prev[t] = h
        c_prev[t] = c
        a = xw[t] + h @ params.w_h
        i = _sigmoid(a[0 * d : 1 * d])
        f = _sigmoid(a[1 * d : 2 * d])
        o = _sigmoid(a[2 * d : 3 * d])
        g = np.tanh(a[3 * d : 4 * d])
        c = f * c_prev[t] + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t, 0 * d : 1 * d] = i
        gates[t, 1 * d : 2 * d] = f
        gates[t, 2 * d : 3 * d] = o
        gates[t, 3 * d : 4 * d] = g
        c_all[t] = c
        tanh_c[t] = tc
        hs[t] = h

    if dropout_p <= 0:
        mask = None
        h_out = hs
    elif dropout_p >= 1.0:
        mask = np.zeros((t_steps, d))
        h_out = hs * mask
    else:
        keep = 1.0 - dropout_p
        mask = (rng.random((t_steps, d)) < keep) / keep
        h_out = hs * mask

    logits = h_out @ params.w_out + params.b_out
    _check_finite("forward_sample", logits)
    return ForwardTrace(
        tokens=tokens,
        x=x,
        h_prev=h_prev,
        gates=gates,
        c_prev=c_prev,
        c=c_all,
        tanh_c=tanh_c,
        mask=mask,
        h_out=h_out,
        logits=logits,
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets) -> float:
    """Mean negative log-likelihood of the targets, one per timestep."""
    targets = np.asarray(targets, dtype=np.intp)
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[0] != targets.shape[0]:
        raise ValueError(
            f"{logits.shape[0]} logit rows vs {targets.shape[0]} targets"
        )
    m = logits.max(axis=-1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=-1))
    nll = lse - logits[np.arange(len(targets)), targets]
    return float(nll.mean())


def range_penalty_weights(vocabulary: Vocabulary, cfg: RangeRegConfig) -> np.ndarray:
    """Per-word distance to the allowed pitch range; reserved ids get zero.

    Words above p_min are charged their distance above p_max (zero while
    still inside the range); words at or below p_min are charged p_min - p.
    """
    weights = np.zeros(vocabulary.size)
    for i, word in enumerate(vocabulary.words):
        p = word.pitch
        if p > cfg.p_min:
            weights[i + N_RESERVED] = max(p - cfg.p_max, 0)
        else:
            weights[i + N_RESERVED] = cfg.p_min - p
    return weights


def regularized_softmax_grad(
    probs: np.ndarray, weights: np.ndarray, mu: float
) -> np.ndarray:
    """Gradient of mu * C w.r.t. the logits, with C = sum_j W_j P_j.

    Works on a single probability vector or a (T, V) batch of them. The
    addend always sums to zero across the vocabulary.
    """
    probs = np.asarray(probs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    cost = probs @ weights  # () or (T,)
    if probs.ndim > 1:
        return mu * probs * (weights - cost[..., None])
    return mu * probs * (weights - cost)


def expected_penalty(probs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """C = sum_j W_j P_j per softmax row."""
    return np.asarray(probs, dtype=np.float64) @ np.asarray(weights, dtype=np.float64)


@dataclass
class Gradients:
    embedding: np.ndarray
    w_x: np.ndarray
    w_h: np.ndarray
    b_gates: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "embedding": self.embedding,
            "w_x": self.w_x,
            "w_h": self.w_h,
            "b_gates": self.b_gates,
            "w_out": self.w_out,
            "b_out": self.b_out,
        }

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "Gradients":
        return cls(**{k: np.zeros_like(v) for k, v in params.arrays().items()})

    def add_(self, other: "Gradients") -> None:
        for k, v in self.arrays().items():
            v += other.arrays()[k]

    def scale_(self, factor: float) -> None:
        for v in self.arrays().values():
            v *= factor


def backward_sample(
    params: ModelParams,
    trace: ForwardTrace,
    targets,
    reg_addends: np.ndarray | None = None,
) -> Gradients:
    """Exact reverse-mode gradients of the per-sample loss.

    The loss is the timestep mean of cross-entropy plus, when reg_addends is
    given, the timestep mean of the expected range penalty: reg_addends must
    be the unscaled per-step output of regularized_softmax_grad; the 1/T
    normalization for both terms happens here. Backpropagation runs through
    the full recurrence with no truncation.
    """
    targets = np.asarray(targets, dtype=np.intp)
    t_steps = len(trace)
    if targets.shape[0] != t_steps:
        raise ValueError(f"{t_steps} steps vs {targets.shape[0]} targets")
    d = params.hidden_dim

    dlogits = softmax(trace.logits)
    dlogits[np.arange(t_steps), targets] -= 1.0
    if reg_addends is not None:
        dlogits = dlogits + np.asarray(reg_addends, dtype=np.float64)
    dlogits /= t_steps

    d_w_out = trace.h_out.T @ dlogits
    d_b_out = dlogits.sum(axis=0)
    dh_seq = dlogits @ params.w_out.T
    if trace.mask is not None:
        dh_seq = dh_seq * trace.mask

    da = np.empty((t_steps, 4 * d))
    dh_next = np.zeros(d)
    dc_next = np.zeros(d)
    for t in range(t_steps - 1, -1, -1):
        i = trace.gates[t, 0 * d : 1 * d]
        f = trace.gates[t, 1 * d : 2 * d]
        o = trace.gates[t, 2 * d : 3 * d]
        g = trace.gates[t, 3 * d : 4 * d]
        tc = trace.tanh_c[t]
        dh = dh_seq[t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        df = dc * trace.c_prev[t]
        di = dc * g
        dg = dc * i
        da[t, 0 * d : 1 * d] = di * i * (1.0 - i)
        da[t, 1 * d : 2 * d] = df * f * (1.0 - f)
        da[t, 2 * d : 3 * d] = do * o * (1.0 - o)
        da[t, 3 * d : 4 * d] = dg * (1.0 - g * g)
        dh_next = da[t] @ params.w_h.T
        dc_next = dc * f

    d_w_x = trace.x.T @ da
    d_w_h = trace.h_prev.T @ da
    d_b = da.sum(axis=0)
    dx = da @ params.w_x.T
    d_embedding = np.zeros_like(params.embedding)
    np.add.at(d_embedding, trace.tokens, dx[:, : params.embed_dim])

    grads = Gradients(
        embedding=d_embedding,
        w_x=d_w_x,
        w_h=d_w_h,
        b_gates=d_b,
        w_out=d_w_out,
        b_out=d_b_out,
    )
    _check_finite("backward_sample", *grads.arrays().values())
    return grads


def sample_loss(
    params: ModelParams,
    condition: np.ndarray,
    tokens,
    targets,
    weights: np.ndarray | None = None,
    mu: float = 0.0,
    condition_first_step_only: bool = False,
) -> float:
    """Scalar training objective for one sample (dropout off).

    Used by gradient checks: mean cross-entropy plus mu times the mean
    expected range penalty.
    """
    trace = forward_sample(
        params, condition, tokens, dropout_p=0.0,
        condition_first_step_only=condition_first_step_only,
    )
    loss = cross_entropy(trace.logits, targets)
    if weights is not None and mu > 0:
        loss += mu * float(expected_penalty(softmax(trace.logits), weights).mean())
    return loss


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.arrays().items()},
            v={k: np.zeros_like(a) for k, a in params.arrays().items()},
        )


def adam_update(
    params: ModelParams,
    grads: Gradients,
    state: AdamState,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ModelParams:
    """In-place bias-corrected Adam step; returns the updated params."""
    state.step += 1
    t = state.step
    for name, p in params.arrays().items():
        g = grads.arrays()[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def sample_token(
    logits: np.ndarray, temperature: float = 1.0, rng: np.random.Generator | None = None
) -> int:
    """Draw a token id from softmax(logits / temperature).

    temperature 0 means argmax with ties to the lower id; otherwise an rng
    is required and the draw is deterministic given its state.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if temperature == 0:
        return int(np.argmax(logits))
    if rng is None:
        raise ValueError("sampling with temperature > 0 requires an rng")
    probs = softmax(logits / temperature)
    cumulative = np.cumsum(probs)
    draw = rng.random()
    return int(min(np.searchsorted(cumulative, draw, side="right"), logits.shape[0] - 1))


CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, vocab_hash: str, extra: dict | None = None) -> None:
    """Write a shape-tagged float64 checkpoint bound to a vocabulary hash."""
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "vocab_hash": vocab_hash,
        "vocab_size": params.vocab_size,
        "embed_dim": params.embed_dim,
        "hidden_dim": params.hidden_dim,
        "cond_dim": params.cond_dim,
    }
    if extra:
        meta.update(extra)
    arrays = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in params.arrays().items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path, vocab_hash: str | None = None) -> tuple[ModelParams, dict]:
    """Load a checkpoint; refuses to load against a mismatched vocabulary."""
    with np.load(path) as data:
        try:
            meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        except KeyError:
            raise CheckpointError(f"{path}: not a model checkpoint (missing metadata)") from None
        if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {meta.get('checkpoint_version')} "
                f"not supported (expected {CHECKPOINT_VERSION})"
            )
        if vocab_hash is not None and meta["vocab_hash"] != vocab_hash:
            raise CheckpointError(
                f"{path}: checkpoint was trained against a different vocabulary "
                f"(hash {meta['vocab_hash'][:12]}… != {vocab_hash[:12]}…)"
            )
        params = ModelParams(
            embedding=data["embedding"].astype(np.float64),
            w_x=data["w_x"].astype(np.float64),
            w_h=data["w_h"].astype(np.float64),
            b_gates=data["b_gates"].astype(np.float64),
            w_out=data["w_out"].astype(np.float64),
            b_out=data["b_out"].astype(np.float64),
        )
    return params, meta

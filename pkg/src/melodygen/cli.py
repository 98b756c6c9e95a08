"""Command-line front end: ingest | stats | train-hmm | train | generate | check.

Settings resolve as flags > config file > defaults. The config file is a
flat JSON object whose keys are the long flag names with dashes replaced by
underscores (e.g. {"epochs": 20, "mu": 0.0001}). The MELODYGEN_OUT
environment variable supplies the default output directory. Diagnostics and
seeds go to stderr; reports go to stdout; bulk data goes to files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import hmm as hmm_mod
from . import neural, pipeline, smf, vocab as vocab_mod
from .corpus import CorpusStore, compute_stats, ingest_corpus
from .neural import RangeRegConfig
from .pipeline import TrainConfig

ENV_OUT_DIR = "MELODYGEN_OUT"


class CliError(Exception):
    """User-facing failure carrying a single-line message."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep diagnostics to one line
        raise CliError(f"{self.prog}: {message}")


def _log(message: str) -> None:
    print(message, file=sys.stderr)


_SETTING_SPECS = {
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "dropout_p": float,
    "mu": float,
    "pitch_min": int,
    "pitch_max": int,
    "seed": int,
    "checkpoint_every": int,
    "embed_dim": int,
    "hidden_dim": int,
    "smoothing": float,
    "temperature": float,
    "segments": int,
    "max_words": int,
    "tempo": float,
    "ticks_per_quarter": int,
    "condition_mode": str,
}

_DEFAULTS = {
    "epochs": 15,
    "batch_size": 16,
    "learning_rate": 0.001,
    "dropout_p": 0.5,
    "mu": 0.0001,
    "pitch_min": 60,
    "pitch_max": 72,
    "seed": 0,
    "checkpoint_every": 5,
    "embed_dim": neural.DEFAULT_EMBED_DIM,
    "hidden_dim": neural.DEFAULT_HIDDEN_DIM,
    "smoothing": hmm_mod.DEFAULT_SMOOTHING,
    "temperature": 1.0,
    "segments": 16,
    "max_words": pipeline.MAX_SEGMENT_WORDS,
    "tempo": smf.DEFAULT_TEMPO_BPM,
    "ticks_per_quarter": smf.DEFAULT_TICKS_PER_QUARTER,
    "condition_mode": "every-step",
}


def _add_setting_flags(parser: argparse.ArgumentParser, names) -> None:
    parser.add_argument("--config", type=Path, help="flat JSON config file")
    for name in names:
        parser.add_argument(
            f"--{name.replace('_', '-')}", dest=name, type=_SETTING_SPECS[name], default=None
        )


def _resolve(args: argparse.Namespace, names) -> dict:
    from_file = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(from_file) - set(_SETTING_SPECS)
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
    settings = {}
    for name in names:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            settings[name] = flag_value
        elif name in from_file:
            settings[name] = _SETTING_SPECS[name](from_file[name])
        else:
            settings[name] = _DEFAULTS[name]
    return settings


def _out_dir(args: argparse.Namespace) -> Path:
    if getattr(args, "out_dir", None):
        return Path(args.out_dir)
    env = os.environ.get(ENV_OUT_DIR)
    if env:
        return Path(env)
    return Path("out")


def _load_store(path) -> CorpusStore:
    if not Path(path).exists():
        raise CliError(f"sample store not found: {path}")
    return CorpusStore.load(path)


def _load_vocab(path):
    if not Path(path).exists():
        raise CliError(f"vocabulary not found: {path}")
    return vocab_mod.load_vocab(path)


def _cmd_ingest(args) -> int:
    if not Path(args.manifest).exists():
        raise CliError(f"manifest not found: {args.manifest}")
    out_dir = _out_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = ingest_corpus(args.manifest)
    vocabulary = vocab_mod.build_vocab(store.samples)
    store.save(out_dir / "samples.json")
    vocab_mod.save_vocab(out_dir / "vocab.json", vocabulary, store.chord_tokens)
    _log(
        f"ingested {len(store.song_names)} songs -> {len(store.samples)} samples, "
        f"{vocabulary.size} tokens ({len(store.chord_tokens)} chord tokens); "
        f"wrote {out_dir / 'samples.json'} and {out_dir / 'vocab.json'}"
    )
    return 0


def _cmd_stats(args) -> int:
    store = _load_store(args.store)
    report = compute_stats(store.samples).to_report()
    print(json.dumps(report, indent=1))
    return 0


def _cmd_train_hmm(args) -> int:
    settings = _resolve(args, ["smoothing"])
    store = _load_store(args.store)
    params = hmm_mod.estimate_params(
        store.samples, smoothing=settings["smoothing"], chord_tokens=store.chord_tokens
    )
    out = Path(args.out) if args.out else _out_dir(args) / "hmm.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    params.save(out)
    _log(f"estimated HMM over {params.n_states} chord tokens (smoothing "
         f"{settings['smoothing']}); wrote {out}")
    return 0


def _cmd_train(args) -> int:
    names = [
        "epochs", "batch_size", "learning_rate", "dropout_p", "mu",
        "pitch_min", "pitch_max", "seed", "checkpoint_every", "embed_dim", "hidden_dim",
        "condition_mode",
    ]
    settings = _resolve(args, names)
    store = _load_store(args.store)
    vocabulary, chord_table = _load_vocab(args.vocab)
    if not chord_table:
        chord_table = tuple(store.chord_tokens)
    config = TrainConfig(
        epochs=settings["epochs"],
        batch_size=settings["batch_size"],
        learning_rate=settings["learning_rate"],
        dropout_p=settings["dropout_p"],
        reg=RangeRegConfig(settings["pitch_min"], settings["pitch_max"], settings["mu"]),
        seed=settings["seed"],
        checkpoint_every=settings["checkpoint_every"],
        embed_dim=settings["embed_dim"],
        hidden_dim=settings["hidden_dim"],
        condition_mode=settings["condition_mode"],
    )
    out_dir = _out_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    _log(f"training: {len(store.samples)} samples, seed {config.seed}, "
         f"mu {config.reg.mu}, epochs {config.epochs}")
    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as metrics_file:

        def log_epoch(entry):
            metrics_file.write(json.dumps(entry.to_record()) + "\n")
            metrics_file.flush()
            _log(
                f"epoch {entry.epoch}: loss {entry.mean_loss:.4f} "
                f"penalty {entry.mean_penalty:.4f} ({entry.wall_time:.1f}s)"
            )

        pipeline.train(
            store.samples, vocabulary, chord_table, config, out_dir=out_dir, log=log_epoch
        )
    _log(f"wrote {out_dir / 'model.npz'} and {metrics_path}")
    return 0


def _cmd_generate(args) -> int:
    settings = _resolve(args, ["seed", "temperature", "segments", "max_words",
                               "tempo", "ticks_per_quarter"])
    vocabulary, chord_table = _load_vocab(args.vocab)
    vocab_hash = vocab_mod.vocab_fingerprint(vocabulary, chord_table)
    if not Path(args.checkpoint).exists():
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    params, meta = neural.load_checkpoint(args.checkpoint, vocab_hash)
    first_step_only = meta.get("condition_mode", "every-step") == "first-step"
    if not Path(args.hmm).exists():
        raise CliError(f"HMM parameter file not found: {args.hmm}")
    hmm_params = hmm_mod.HmmParams.load(args.hmm)
    missing = [t for t in hmm_params.chord_tokens if t not in chord_table]
    if missing:
        raise CliError(f"HMM chord tokens missing from the vocabulary table: {missing}")

    seed = settings["seed"]
    _log(f"generate: seed {seed}, segments {settings['segments']}, "
         f"temperature {settings['temperature']}")
    plan = pipeline.plan_song(
        hmm_params, settings["segments"], seed=seed, sample_chords=args.sample_chords
    )
    segments = pipeline.generate_song(
        params, vocabulary, chord_table, plan,
        temperature=settings["temperature"], max_words=settings["max_words"],
        seed=seed, resample_empty=args.resample_empty,
        condition_first_step_only=first_step_only,
    )
    doc = pipeline.assemble_song(
        plan, segments, tempo_bpm=settings["tempo"],
        ticks_per_quarter=settings["ticks_per_quarter"],
    )
    out = Path(args.out) if args.out else _out_dir(args) / f"song_seed{seed}.mid"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(smf.write_midi(doc))
    note_count = sum(len(s.words) for s in segments)
    _log(f"wrote {out}: {plan.segment_count} segments, {note_count} notes")
    return 0


def _check_midi_roundtrip(rng) -> str:
    for _ in range(100):
        n_notes = int(rng.integers(0, 24))
        used = set()
        notes = []
        for _ in range(n_notes):
            pitch = int(rng.integers(36, 96))
            onset = int(rng.integers(0, 4000))
            if (pitch, onset) in used:
                continue
            used.add((pitch, onset))
            notes.append(smf.TimedNote(pitch, onset, int(rng.integers(1, 2000)),
                                       int(rng.integers(1, 128)), int(rng.integers(0, 16))))
        # avoid same-pitch overlaps: pairing is first-on/first-off
        spans: dict[int, list] = {}
        filtered = []
        for note in sorted(notes, key=lambda n: (n.onset_ticks, n.pitch)):
            if all(
                note.end_ticks <= s or note.onset_ticks >= e
                for s, e in spans.get(note.pitch, [])
            ):
                spans.setdefault(note.pitch, []).append((note.onset_ticks, note.end_ticks))
                filtered.append(note)
        doc = smf.build_document(filtered)
        data = smf.write_midi(doc)
        reparsed = smf.parse_midi(data)
        if smf.write_midi(reparsed) != data:
            return "byte round-trip mismatch"
        if smf.extract_notes(reparsed) != filtered:
            return "note round-trip mismatch"
    return ""


def _check_gradients(rng) -> str:
    from .vocab import NoteWord, Vocabulary as _V
    from fractions import Fraction as _F

    words = tuple(
        NoteWord(p, o, _F(1, 16)) for p, o in [(55, 0), (64, 4), (70, 8), (80, 12)]
    )
    vocabulary = _V(words)
    weights = neural.range_penalty_weights(vocabulary, RangeRegConfig(60, 72, 1.0))
    worst = 0.0
    for trial in range(3):
        params = neural.init_params(vocabulary.size, 3, embed_dim=3, hidden_dim=3,
                                    seed=100 + trial)
        cond = rng.random(3)
        tokens = np.array([0, 2, 3, 4])
        targets = np.array([2, 3, 4, 1])
        trace = neural.forward_sample(params, cond, tokens)
        probs = neural.softmax(trace.logits)
        addends = neural.regularized_softmax_grad(probs, weights, 0.01)
        grads = neural.backward_sample(params, trace, targets, addends)
        h = 1e-5
        for name, array in params.arrays().items():
            flat = array.reshape(-1)
            grad_flat = grads.arrays()[name].reshape(-1)
            for k in range(0, flat.size, max(1, flat.size // 5)):
                original = flat[k]
                flat[k] = original + h
                up = neural.sample_loss(params, cond, tokens, targets, weights, 0.01)
                flat[k] = original - h
                down = neural.sample_loss(params, cond, tokens, targets, weights, 0.01)
                flat[k] = original
                numeric = (up - down) / (2 * h)
                err = abs(numeric - grad_flat[k]) / max(abs(numeric), abs(grad_flat[k]), 1e-4)
                worst = max(worst, err)
    if worst >= 1e-5:
        return f"max relative gradient error {worst:.2e}"
    return ""


def _check_viterbi(rng) -> str:
    from .corpus import PartLabel

    for trial in range(25):
        k = int(rng.integers(1, 5))
        length = int(rng.integers(1, 7))
        tokens = tuple(f"state{i}" for i in range(k))
        params = hmm_mod.HmmParams(
            chord_tokens=tokens,
            pi=_random_dist(rng, k),
            A=np.stack([_random_dist(rng, k) for _ in range(k)]),
            B=np.stack([_random_dist(rng, 4) for _ in range(k)]),
            part_pi=_random_dist(rng, 4),
            part_A=np.stack([_random_dist(rng, 4) for _ in range(4)]),
        )
        parts = [PartLabel(int(p)) for p in rng.integers(0, 4, size=length)]
        if hmm_mod.viterbi_chords(params, parts) != hmm_mod.brute_force_decode(params, parts):
            return f"decoder mismatch on trial {trial}"
    return ""


def _random_dist(rng, n):
    raw = rng.random(n) + 1e-3
    return raw / raw.sum()


def _check_regularizer() -> str:
    probs = np.full(3, 1.0 / 3.0)
    weights = np.array([2.0, 0.0, 2.0])
    addend = neural.regularized_softmax_grad(probs, weights, 1.0)
    expected = np.array([2.0 / 9.0, -4.0 / 9.0, 2.0 / 9.0])
    if not np.allclose(addend, expected, atol=1e-12):
        return f"worked instance mismatch: {addend}"
    if abs(float(addend.sum())) > 1e-12:
        return "addend does not sum to zero"
    return ""


def _cmd_check(args) -> int:
    rng = np.random.default_rng(12345)
    suites = [
        ("midi-roundtrip", lambda: _check_midi_roundtrip(rng)),
        ("gradient-check", lambda: _check_gradients(rng)),
        ("viterbi-oracle", lambda: _check_viterbi(rng)),
        ("range-regularizer", _check_regularizer),
    ]
    failures = 0
    for name, fn in suites:
        problem = fn()
        if problem:
            failures += 1
            print(f"{name}: FAIL ({problem})")
        else:
            print(f"{name}: ok")
    return 1 if failures else 0


def build_parser() -> _Parser:
    parser = _Parser(prog="melodygen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build the sample store and vocabulary from a manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out-dir", type=Path)
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("stats", help="print the corpus statistics report")
    p.add_argument("--store", required=True, type=Path)
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("train-hmm", help="estimate and persist structure HMM parameters")
    p.add_argument("--store", required=True, type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--out-dir", type=Path)
    _add_setting_flags(p, ["smoothing"])
    p.set_defaults(fn=_cmd_train_hmm)

    p = sub.add_parser("train", help="train the melody model")
    p.add_argument("--store", required=True, type=Path)
    p.add_argument("--vocab", required=True, type=Path)
    p.add_argument("--out-dir", type=Path)
    _add_setting_flags(p, [
        "epochs", "batch_size", "learning_rate", "dropout_p", "mu",
        "pitch_min", "pitch_max", "seed", "checkpoint_every", "embed_dim", "hidden_dim",
        "condition_mode",
    ])
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("generate", help="plan and emit a complete song as MIDI")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--vocab", required=True, type=Path)
    p.add_argument("--hmm", required=True, type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--resample-empty", action="store_true",
                   help="retry segments that come out empty instead of keeping silence")
    p.add_argument("--sample-chords", action="store_true",
                   help="sample chords from the posterior instead of Viterbi decoding")
    _add_setting_flags(p, ["seed", "temperature", "segments", "max_words",
                           "tempo", "ticks_per_quarter"])
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("check", help="run the built-in verification suites")
    p.set_defaults(fn=_cmd_check)
    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliError as exc:
        _log(f"error: {exc}")
        return 2
    except (ValueError, OSError, KeyError) as exc:
        _log(f"error: {exc}")
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

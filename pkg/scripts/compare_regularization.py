#!/usr/bin/env python3
"""Train models at several range-regularization strengths and compare the
fraction of generated notes that escape the target pitch range.

Example:
    python scripts/compare_regularization.py --manifest data/corpus/manifest.json \
        --mu 0 0.0001 0.01 --songs 50
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from melodygen import hmm as hmm_mod  # noqa: E402
from melodygen.corpus import ingest_corpus  # noqa: E402
from melodygen.neural import RangeRegConfig  # noqa: E402
from melodygen.pipeline import (  # noqa: E402
    TrainConfig,
    assemble_song,
    evaluate_range_compliance,
    generate_song,
    plan_song,
    train,
)
from melodygen.vocab import build_vocab  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--manifest", type=Path, default=Path("data/corpus/manifest.json"))
    parser.add_argument("--mu", type=float, nargs="+", default=[0.0, 0.01])
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--dropout", type=float, default=0.0)
    parser.add_argument("--dims", type=int, default=64)
    parser.add_argument("--songs", type=int, default=100)
    parser.add_argument("--segments", type=int, default=16)
    parser.add_argument("--temperature", type=float, default=0.95)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--pitch-min", type=int, default=60)
    parser.add_argument("--pitch-max", type=int, default=72)
    args = parser.parse_args()

    store = ingest_corpus(args.manifest)
    vocabulary = build_vocab(store.samples)
    table = tuple(store.chord_tokens)
    hmm_params = hmm_mod.estimate_params(store.samples, chord_tokens=table)
    bounds = RangeRegConfig(args.pitch_min, args.pitch_max)

    corpus_notes = [w for s in store.samples for w in s.words]
    corpus_outside = sum(
        1 for w in corpus_notes if w.pitch < args.pitch_min or w.pitch > args.pitch_max
    )
    print(
        f"corpus: {len(store.samples)} samples, {len(corpus_notes)} notes, "
        f"{corpus_outside / len(corpus_notes):.2%} outside "
        f"[{args.pitch_min}, {args.pitch_max}]"
    )
    print(f"{'mu':>10} {'final loss':>11} {'penalty':>8} {'out-of-range':>13} {'time':>6}")

    for mu in args.mu:
        started = time.time()
        config = TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            dropout_p=args.dropout,
            reg=RangeRegConfig(args.pitch_min, args.pitch_max, mu),
            seed=args.seed,
            embed_dim=args.dims,
            hidden_dim=args.dims,
        )
        params, metrics = train(store.samples, vocabulary, table, config)
        docs = []
        for s in range(args.songs):
            plan = plan_song(hmm_params, args.segments, seed=1000 + s)
            segments = generate_song(
                params, vocabulary, table, plan,
                temperature=args.temperature, seed=5000 + 100 * s,
            )
            docs.append(assemble_song(plan, segments))
        fraction = evaluate_range_compliance(docs, bounds)
        print(
            f"{mu:>10g} {metrics[-1].mean_loss:>11.3f} {metrics[-1].mean_penalty:>8.3f} "
            f"{fraction:>12.2%} {time.time() - started:>5.0f}s"
        )


if __name__ == "__main__":
    main()

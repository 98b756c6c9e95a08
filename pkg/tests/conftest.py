from pathlib import Path

import pytest

from melodygen.corpus import ingest_corpus
from melodygen.vocab import build_vocab

CORPUS_MANIFEST = Path(__file__).resolve().parent.parent / "data" / "corpus" / "manifest.json"


@pytest.fixture(scope="session")
def bundled_corpus():
    """(store, vocabulary, chord_table) for the bundled synthetic corpus."""
    store = ingest_corpus(CORPUS_MANIFEST)
    vocabulary = build_vocab(store.samples)
    return store, vocabulary, tuple(store.chord_tokens)

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from punctuator.corpus import build_corpus_dir, read_corpus_dir
from punctuator.marks import MarkSet
from punctuator.synthetic import GrammarConfig, make_synthetic_corpus


@pytest.fixture(scope="session")
def marks() -> MarkSet:
    return MarkSet.from_names(["comma", "period", "colon"])


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """A small grammar corpus shared by data-level tests."""
    out = tmp_path_factory.mktemp("synth")
    return make_synthetic_corpus(GrammarConfig(), 500, 7, out)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, synth_corpus, marks):
    """The small corpus stripped, chunked, split, and serialized."""
    out = tmp_path_factory.mktemp("data")
    docs = [
        line
        for line in synth_corpus.corpus_file.read_text(encoding="utf-8").splitlines()
        if line
    ]
    build_corpus_dir(
        docs, out, marks, seed=3, max_tokens=85, lexicon=synth_corpus.lexicon
    )
    return read_corpus_dir(out)

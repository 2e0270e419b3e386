"""Corpus construction: strip punctuation into per-token labels, split, report.

Text is tokenized per character when it contains CJK ideographs, otherwise on
whitespace.  The label of token ``i`` is the mark that immediately followed it
in the source text, else ``O``.  Restoring is the exact inverse for text with
no adjacent or leading marks.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    AdjacentMarksError,
    BadRatiosError,
    EmptyAfterStripError,
    UnknownMarkError,
)
from .marks import O_LABEL, MarkSet

logger = logging.getLogger(__name__)

SPECIAL_TOKENS = ("[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]")

Segmenter = Callable[[Sequence[str]], list[tuple[int, int]]]


@dataclass
class LabeledSequence:
    """Punctuation-free tokens paired with the mark that followed each one."""

    tokens: list[str]
    labels: list[str]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.labels):
            raise ValueError(
                f"{len(self.tokens)} tokens vs {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class DatasetSplit:
    train: list[LabeledSequence]
    dev: list[LabeledSequence]
    test: list[LabeledSequence]
    seed: int
    ratios: tuple[float, float, float]

    def items(self) -> list[tuple[str, list[LabeledSequence]]]:
        return [("train", self.train), ("dev", self.dev), ("test", self.test)]


@dataclass
class WordSegmentation:
    """Contiguous, ordered (start, end) ranges exactly tiling ``[0, n)``."""

    groups: list[tuple[int, int]]

    def __post_init__(self) -> None:
        cursor = 0
        for start, end in self.groups:
            if start != cursor or end <= start:
                raise ValueError(f"groups do not tile the sequence: {self.groups}")
            cursor = end

    @property
    def n_tokens(self) -> int:
        return self.groups[-1][1] if self.groups else 0

    def __len__(self) -> int:
        return len(self.groups)


def is_cjk_char(char: str) -> bool:
    return "㐀" <= char <= "鿿" or "豈" <= char <= "﫿"


def is_cjk_text(text: str) -> bool:
    return any(is_cjk_char(c) for c in text)


def _iter_units(text: str, marks: MarkSet) -> Iterator[tuple[str, bool]]:
    """Yield (unit, is_mark) pairs; per-character for CJK text, else words."""
    surfaces = marks.surface_chars
    if is_cjk_text(text):
        for char in text:
            if char.isspace():
                continue
            yield char, char in surfaces
        return
    word = []
    for char in text:
        if char.isspace() or char in surfaces:
            if word:
                yield "".join(word), False
                word.clear()
            if char in surfaces:
                yield char, True
        else:
            word.append(char)
    if word:
        yield "".join(word), False


def strip_and_label(
    text: str,
    marks: MarkSet,
    policy: str = "first",
    counters: Counter | None = None,
) -> LabeledSequence:
    """Remove the active marks from ``text`` and record them as token labels.

    Adjacent marks keep the first and drop the rest (``policy="first"``,
    counted under ``counters["adjacent_marks"]``); ``policy="strict"`` raises
    instead.  Marks before any token are dropped and counted as
    ``leading_mark``.
    """
    if policy not in ("first", "strict"):
        raise ValueError(f"unknown policy {policy!r}")
    tokens: list[str] = []
    labels: list[str] = []
    for unit, is_mark in _iter_units(text, marks):
        if not is_mark:
            tokens.append(unit)
            labels.append(O_LABEL)
            continue
        name = marks.label_of_surface(unit)
        assert name is not None
        if not tokens:
            if counters is not None:
                counters["leading_mark"] += 1
            logger.debug("dropping leading mark %r", unit)
        elif labels[-1] == O_LABEL:
            labels[-1] = name
        elif policy == "strict":
            raise AdjacentMarksError(f"adjacent marks at token {len(tokens) - 1}")
        else:
            if counters is not None:
                counters["adjacent_marks"] += 1
            logger.debug("dropping adjacent mark %r", unit)
    if not tokens:
        raise EmptyAfterStripError("no tokens remain after stripping punctuation")
    return LabeledSequence(tokens, labels)


def restore_text(seq: LabeledSequence, marks: MarkSet) -> str:
    """Concatenate tokens, inserting each non-O label's surface character."""
    parts: list[str] = []
    for token, label in zip(seq.tokens, seq.labels):
        parts.append(token)
        if label != O_LABEL:
            parts.append(marks.surface_of(label))  # raises UnknownMarkError
    return "".join(parts)


def split_corpus(
    sequences: Sequence[LabeledSequence],
    ratios: Sequence[float],
    seed: int,
) -> DatasetSplit:
    """Deterministic shuffle then floor-allocated split, remainder to train."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise BadRatiosError(f"need three non-negative ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatiosError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(sequences)
    order = np.random.default_rng(seed).permutation(n)
    sizes = [math.floor(r * n + 1e-9) for r in ratios]
    sizes[0] += n - sum(sizes)
    shuffled = [sequences[i] for i in order]
    train = shuffled[: sizes[0]]
    dev = shuffled[sizes[0] : sizes[0] + sizes[1]]
    test = shuffled[sizes[0] + sizes[1] :]
    return DatasetSplit(train, dev, test, seed, (ratios[0], ratios[1], ratios[2]))


def label_counts(sequences: Iterable[LabeledSequence]) -> Counter:
    counts: Counter = Counter()
    for seq in sequences:
        counts.update(seq.labels)
    return counts


def corpus_stats(split: DatasetSplit, marks: MarkSet) -> dict[str, dict[str, int]]:
    """Per-split, per-class label counts (all classes present, zeros included)."""
    table = {}
    for name, seqs in split.items():
        counts = label_counts(seqs)
        table[name] = {label: counts.get(label, 0) for label in marks.names}
    return table


def stats_tsv(split: DatasetSplit, marks: MarkSet) -> str:
    """Stats table as TSV; one row per split, one column per class, O first."""
    table = corpus_stats(split, marks)
    header = ["split", O_LABEL] + [n.capitalize() for n in marks.mark_names]
    lines = ["\t".join(header)]
    for name, row in table.items():
        lines.append("\t".join([name] + [str(row[label]) for label in marks.names]))
    return "\n".join(lines) + "\n"


class GreedyLexiconSegmenter:
    """Longest-match word segmentation over a fixed lexicon.

    Tokens are matched by concatenation against lexicon entries; anything not
    covered falls back to a single-token word.
    """

    def __init__(self, words: Iterable[str]):
        self.words = frozenset(w for w in words if w)
        self.max_len = max((len(w) for w in self.words), default=1)

    def __call__(self, tokens: Sequence[str]) -> list[tuple[int, int]]:
        groups: list[tuple[int, int]] = []
        i, n = 0, len(tokens)
        while i < n:
            length = 1
            for cand in range(min(self.max_len, n - i), 1, -1):
                if "".join(tokens[i : i + cand]) in self.words:
                    length = cand
                    break
            groups.append((i, i + length))
            i += length
        return groups


def segment_words(
    seq: LabeledSequence,
    segmenter: Segmenter | None = None,
) -> WordSegmentation:
    """Segment a sequence into words; default is single-token words."""
    if not seq.tokens:
        raise ValueError("cannot segment an empty sequence")
    if segmenter is None:
        groups = [(i, i + 1) for i in range(len(seq))]
    else:
        groups = [(int(s), int(e)) for s, e in segmenter(seq.tokens)]
    return WordSegmentation(groups)  # validates the tiling


def chunk_sequence(
    seq: LabeledSequence,
    max_tokens: int,
    sentence_label: str = "PERIOD",
) -> list[LabeledSequence]:
    """Split a long sequence into chunks of at most ``max_tokens`` tokens.

    Boundaries fall after sentence-final labels where possible; a single
    sentence longer than the budget is hard-split.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be positive")
    sentences: list[tuple[list[str], list[str]]] = []
    start = 0
    for i, label in enumerate(seq.labels):
        if label == sentence_label:
            sentences.append((seq.tokens[start : i + 1], seq.labels[start : i + 1]))
            start = i + 1
    if start < len(seq):
        sentences.append((seq.tokens[start:], seq.labels[start:]))

    chunks: list[LabeledSequence] = []
    cur_tokens: list[str] = []
    cur_labels: list[str] = []

    def flush() -> None:
        if cur_tokens:
            chunks.append(LabeledSequence(cur_tokens.copy(), cur_labels.copy()))
            cur_tokens.clear()
            cur_labels.clear()

    for tokens, labels in sentences:
        if len(tokens) > max_tokens:
            flush()
            for i in range(0, len(tokens), max_tokens):
                chunks.append(
                    LabeledSequence(tokens[i : i + max_tokens], labels[i : i + max_tokens])
                )
            continue
        if len(cur_tokens) + len(tokens) > max_tokens:
            flush()
        cur_tokens.extend(tokens)
        cur_labels.extend(labels)
    flush()
    return chunks


# --- vocabulary and dataset files -------------------------------------------


def build_vocab(sequences: Iterable[LabeledSequence]) -> dict[str, int]:
    """Token-to-id map: specials first, then sorted corpus tokens."""
    seen = set()
    for seq in sequences:
        seen.update(seq.tokens)
    vocab = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
    for tok in sorted(seen):
        if tok not in vocab:
            vocab[tok] = len(vocab)
    return vocab


def encode_tokens(tokens: Sequence[str], vocab: dict[str, int]) -> list[int]:
    unk = vocab["[UNK]"]
    return [vocab.get(t, unk) for t in tokens]


def encode_labels(labels: Sequence[str], marks: MarkSet) -> list[int]:
    return [marks.index(l) for l in labels]


def write_jsonl(path: Path, sequences: Iterable[LabeledSequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(
                json.dumps({"tokens": seq.tokens, "labels": seq.labels}, ensure_ascii=False)
            )
            fh.write("\n")


def read_jsonl(path: Path, marks: MarkSet | None = None) -> list[LabeledSequence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            seq = LabeledSequence(list(obj["tokens"]), list(obj["labels"]))
            if marks is not None:
                for label in seq.labels:
                    if label not in marks:
                        raise UnknownMarkError(f"label {label!r} not in active mark set")
            out.append(seq)
    return out


@dataclass
class CorpusDir:
    """A built dataset directory: splits, vocabulary, mark set, lexicon."""

    path: Path
    split: DatasetSplit
    vocab: dict[str, int]
    marks: MarkSet
    lexicon: list[str] = field(default_factory=list)


def build_corpus_dir(
    documents: Iterable[str],
    out_dir: Path | str,
    marks: MarkSet,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    max_tokens: int = 512,
    policy: str = "first",
    lexicon: Sequence[str] = (),
) -> CorpusDir:
    """Strip, chunk, split, and serialize a corpus of punctuated documents."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counters: Counter = Counter()
    sequences: list[LabeledSequence] = []
    n_docs = 0
    for doc in documents:
        doc = doc.strip()
        if not doc:
            continue
        n_docs += 1
        try:
            seq = strip_and_label(doc, marks, policy=policy, counters=counters)
        except EmptyAfterStripError:
            counters["empty_documents"] += 1
            continue
        sequences.extend(chunk_sequence(seq, max_tokens))
    if not sequences:
        raise EmptyAfterStripError("corpus is empty after stripping")
    if counters:
        logger.info("corpus warnings: %s", dict(counters))

    split = split_corpus(sequences, ratios, seed)
    vocab = build_vocab(sequences)
    for name, seqs in split.items():
        write_jsonl(out / f"{name}.jsonl", seqs)
    (out / "vocab.json").write_text(
        json.dumps(vocab, ensure_ascii=False, indent=0), encoding="utf-8"
    )
    (out / "stats.tsv").write_text(stats_tsv(split, marks), encoding="utf-8")
    lexicon = sorted(set(lexicon))
    if lexicon:
        (out / "lexicon.txt").write_text("\n".join(lexicon) + "\n", encoding="utf-8")
    meta = {
        "marks": list(marks.names),
        "ratios": list(ratios),
        "seed": seed,
        "max_tokens": max_tokens,
        "documents": n_docs,
        "sequences": len(sequences),
        "warnings": dict(counters),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return CorpusDir(out, split, vocab, marks, list(lexicon))


def read_corpus_dir(path: Path | str) -> CorpusDir:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    marks = MarkSet.from_names([n for n in meta["marks"] if n != O_LABEL])
    split = DatasetSplit(
        train=read_jsonl(path / "train.jsonl", marks),
        dev=read_jsonl(path / "dev.jsonl", marks),
        test=read_jsonl(path / "test.jsonl", marks),
        seed=meta["seed"],
        ratios=tuple(meta["ratios"]),
    )
    vocab = json.loads((path / "vocab.json").read_text(encoding="utf-8"))
    lexicon: list[str] = []
    lexicon_file = path / "lexicon.txt"
    if lexicon_file.exists():
        lexicon = [w for w in lexicon_file.read_text(encoding="utf-8").splitlines() if w]
    return CorpusDir(path, split, vocab, marks, lexicon)


def read_documents(in_dir: Path | str) -> Iterator[str]:
    """Yield documents (one per line) from every ``*.txt`` file, sorted."""
    files = sorted(Path(in_dir).glob("*.txt"))
    if not files:
        raise FileNotFoundError(f"no .txt files under {in_dir}")
    for file in files:
        with open(file, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield line

"""Synthetic punctuated corpus from a fixed stochastic grammar.

Every mark is a deterministic function of the next token's character class:
sentences start with a dedicated starter alphabet (so the token before one
ends with a period), conjunction characters are always preceded by a comma,
and the word after a header is drawn from a dedicated body alphabet (so the
header ends with a colon).  Class frequencies follow configurable ratios with
a strong no-punctuation majority.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import LabeledSequence, restore_text
from .errors import BadRatiosError
from .marks import O_LABEL, MarkSet

logger = logging.getLogger(__name__)

# Disjoint character alphabets; word-internal characters never start a word,
# so greedy longest-match segmentation can never cross a word boundary.
SENTENCE_STARTER_CHARS = "患病主诉查检"
BODY_STARTER_CHARS = "示提结征象"
CONJUNCTION_CHARS = "且并伴"
WORD_INITIAL_CHARS = "发热咳嗽头痛腹泻恶心呕吐胸闷乏力"
WORD_INTERNAL_CHARS = "部度状感染晕软弱急慢轻重显著明常"

_ALL_POOLS = (
    SENTENCE_STARTER_CHARS,
    BODY_STARTER_CHARS,
    CONJUNCTION_CHARS,
    WORD_INITIAL_CHARS,
    WORD_INTERNAL_CHARS,
)
assert len(set("".join(_ALL_POOLS))) == sum(len(p) for p in _ALL_POOLS), (
    "grammar character pools must be disjoint"
)

# Table-1-like class imbalance: heavy O majority, commas over periods over colons.
DEFAULT_RATIOS = {"O": 4332870.0, "COMMA": 434981.0, "PERIOD": 83248.0, "COLON": 33304.0}


@dataclass(frozen=True)
class GrammarConfig:
    ratios: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RATIOS))
    sentences_per_doc: tuple[int, int] = (2, 4)
    n_starter_words: dict[int, int] = field(default_factory=lambda: {1: 2, 2: 4, 3: 2})
    n_body_words: dict[int, int] = field(default_factory=lambda: {1: 2, 2: 3, 3: 1})
    n_header_words: int = 4
    n_content_words: dict[int, int] = field(default_factory=lambda: {1: 6, 2: 12, 3: 12})

    def __post_init__(self) -> None:
        for name in ("O", "COMMA", "PERIOD"):
            if self.ratios.get(name, 0) <= 0:
                raise BadRatiosError(f"ratio for {name} must be positive: {self.ratios}")
        if self.ratios.get("COLON", 0) < 0:
            raise BadRatiosError("colon ratio must be non-negative")
        if self.header_probability > 1:
            raise BadRatiosError("colon ratio may not exceed the period ratio")
        if self.mean_clause_chars < 2:
            raise BadRatiosError(
                f"ratios leave only {self.mean_clause_chars:.2f} tokens per clause"
            )

    @property
    def header_probability(self) -> float:
        return self.ratios.get("COLON", 0.0) / self.ratios["PERIOD"]

    @property
    def mean_clauses(self) -> float:
        return self.ratios["COMMA"] / self.ratios["PERIOD"] + 1.0

    @property
    def mean_sentence_tokens(self) -> float:
        return sum(self.ratios.values()) / self.ratios["PERIOD"]

    @property
    def mean_clause_chars(self) -> float:
        # headers are two tokens, conjunctions one
        budget = (
            self.mean_sentence_tokens
            - 2.0 * self.header_probability
            - (self.mean_clauses - 1.0)
        )
        return budget / self.mean_clauses


def _stochastic_round(x: float, rng: np.random.Generator) -> int:
    base = int(np.floor(x))
    return base + (1 if rng.random() < x - base else 0)


def _pick(rng: np.random.Generator, items: list[str]) -> str:
    return items[int(rng.integers(len(items)))]


@dataclass
class _Inventory:
    header_words: list[str]
    starter_by_len: dict[int, list[str]]
    body_by_len: dict[int, list[str]]
    content_by_len: dict[int, list[str]]
    conjunctions: list[str]

    @property
    def all_words(self) -> list[str]:
        words = set(self.header_words) | set(self.conjunctions)
        for table in (self.starter_by_len, self.body_by_len, self.content_by_len):
            for group in table.values():
                words.update(group)
        return sorted(words)


def _draw_words(
    rng: np.random.Generator,
    first_pool: str,
    counts: dict[int, int],
    taken: set[str],
) -> dict[int, list[str]]:
    table: dict[int, list[str]] = {}
    for length, count in sorted(counts.items()):
        group: list[str] = []
        attempts = 0
        while len(group) < count:
            attempts += 1
            if attempts > 1000:
                raise BadRatiosError("inventory pools too small for requested word counts")
            word = _pick(rng, list(first_pool)) + "".join(
                _pick(rng, list(WORD_INTERNAL_CHARS)) for _ in range(length - 1)
            )
            if word not in taken:
                taken.add(word)
                group.append(word)
        table[length] = group
    return table


def _build_inventory(config: GrammarConfig, rng: np.random.Generator) -> _Inventory:
    taken: set[str] = set()
    starter = _draw_words(rng, SENTENCE_STARTER_CHARS, config.n_starter_words, taken)
    header = _draw_words(rng, SENTENCE_STARTER_CHARS, {2: config.n_header_words}, taken)[2]
    body = _draw_words(rng, BODY_STARTER_CHARS, config.n_body_words, taken)
    content = _draw_words(rng, WORD_INITIAL_CHARS, config.n_content_words, taken)
    conjunctions = sorted(CONJUNCTION_CHARS)
    return _Inventory(header, starter, body, content, conjunctions)


def _pick_with_budget(
    rng: np.random.Generator, table: dict[int, list[str]], budget: int
) -> str:
    lengths = [l for l in table if l <= budget]
    length = lengths[int(rng.integers(len(lengths)))]
    return _pick(rng, table[length])


def _sentence(
    config: GrammarConfig, inv: _Inventory, rng: np.random.Generator
) -> tuple[list[str], list[str]]:
    tokens: list[str] = []
    labels: list[str] = []

    def put(word: str) -> None:
        tokens.extend(word)
        labels.extend([O_LABEL] * len(word))

    has_header = rng.random() < config.header_probability
    n_clauses = max(1, _stochastic_round(config.mean_clauses, rng) + int(rng.integers(-1, 2)))
    if has_header:
        put(_pick(rng, inv.header_words))
        labels[-1] = "COLON"
    for c in range(n_clauses):
        if c > 0:
            labels[-1] = "COMMA"
            put(_pick(rng, inv.conjunctions))
        budget = max(2, _stochastic_round(config.mean_clause_chars, rng) + int(rng.integers(-2, 3)))
        first_table = (
            inv.body_by_len if (c == 0 and has_header)
            else inv.starter_by_len if c == 0
            else inv.content_by_len
        )
        word = _pick_with_budget(rng, first_table, budget)
        put(word)
        remaining = budget - len(word)
        while remaining > 0:
            if remaining <= 3:
                word = _pick(rng, inv.content_by_len[remaining])
            else:
                word = _pick_with_budget(rng, inv.content_by_len, 3)
            put(word)
            remaining -= len(word)
    labels[-1] = "PERIOD"
    return tokens, labels


def rule_labels(tokens: list[str]) -> list[str]:
    """Label each token by the successor rule the grammar obeys.

    This is the independent reference: period before a sentence starter or at
    the end, comma before a conjunction, colon before a body starter.
    """
    labels = []
    for i in range(len(tokens)):
        succ = tokens[i + 1] if i + 1 < len(tokens) else None
        if succ is None or succ in SENTENCE_STARTER_CHARS:
            labels.append("PERIOD")
        elif succ in CONJUNCTION_CHARS:
            labels.append("COMMA")
        elif succ in BODY_STARTER_CHARS:
            labels.append("COLON")
        else:
            labels.append(O_LABEL)
    return labels


@dataclass
class SyntheticCorpus:
    corpus_file: Path
    lexicon_file: Path
    documents: int
    sentences: int
    label_counts: dict[str, int]
    lexicon: list[str]


def make_synthetic_corpus(
    config: GrammarConfig,
    size: int,
    seed: int,
    out_dir: Path | str,
) -> SyntheticCorpus:
    """Generate ``size`` sentences of punctuated text plus the word lexicon."""
    if size < 100:
        raise ValueError(f"need at least 100 sentences, got {size}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    inv = _build_inventory(config, rng)
    marks = MarkSet.from_names(["comma", "period", "colon"])

    docs: list[str] = []
    counts: Counter = Counter()
    produced = 0
    lo, hi = config.sentences_per_doc
    while produced < size:
        n_sent = min(int(rng.integers(lo, hi + 1)), size - produced)
        tokens: list[str] = []
        labels: list[str] = []
        for _ in range(n_sent):
            t, l = _sentence(config, inv, rng)
            tokens.extend(t)
            labels.extend(l)
        counts.update(labels)
        docs.append(restore_text(LabeledSequence(tokens, labels), marks))
        produced += n_sent

    corpus_file = out / "corpus.txt"
    corpus_file.write_text("\n".join(docs) + "\n", encoding="utf-8")
    lexicon = inv.all_words
    lexicon_file = out / "lexicon.txt"
    lexicon_file.write_text("\n".join(lexicon) + "\n", encoding="utf-8")
    (out / "grammar.json").write_text(
        json.dumps(
            {
                "seed": seed,
                "sentences": produced,
                "documents": len(docs),
                "ratios": config.ratios,
                "label_counts": dict(counts),
            },
            ensure_ascii=False,
            indent=2,
        ),
        encoding="utf-8",
    )
    logger.info("synthetic corpus: %d docs, %d sentences, labels %s",
                len(docs), produced, dict(counts))
    return SyntheticCorpus(corpus_file, lexicon_file, len(docs), produced, dict(counts), lexicon)

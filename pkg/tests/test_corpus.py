from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import count_mark_chars, tiling_ok
from punctuator.corpus import (
    GreedyLexiconSegmenter,
    LabeledSequence,
    WordSegmentation,
    build_corpus_dir,
    build_vocab,
    chunk_sequence,
    corpus_stats,
    label_counts,
    read_corpus_dir,
    read_jsonl,
    restore_text,
    segment_words,
    split_corpus,
    stats_tsv,
    strip_and_label,
    write_jsonl,
)
from punctuator.errors import (
    AdjacentMarksError,
    BadRatiosError,
    EmptyAfterStripError,
    UnknownMarkError,
)
from punctuator.marks import MarkSet


class TestStripAndLabel:
    def test_cjk_comma_period(self, marks):
        seq = strip_and_label("你好，世界。", marks)
        assert seq.tokens == list("你好世界")
        assert seq.labels == ["O", "COMMA", "O", "PERIOD"]

    def test_cjk_colon(self, marks):
        seq = strip_and_label("主诉：发热", marks)
        assert seq.tokens == list("主诉发热")
        assert seq.labels == ["O", "COLON", "O", "O"]

    def test_empty_after_strip(self, marks):
        with pytest.raises(EmptyAfterStripError):
            strip_and_label("，。：", marks)

    def test_adjacent_marks_keep_first(self, marks):
        counters = Counter()
        seq = strip_and_label("你，，好。", marks, counters=counters)
        assert seq.labels == ["COMMA", "PERIOD"]
        assert counters["adjacent_marks"] == 1

    def test_adjacent_marks_strict(self, marks):
        with pytest.raises(AdjacentMarksError):
            strip_and_label("你，。好", marks, policy="strict")

    def test_leading_mark_dropped(self, marks):
        counters = Counter()
        seq = strip_and_label("，你好", marks, counters=counters)
        assert seq.tokens == ["你", "好"]
        assert counters["leading_mark"] == 1

    def test_whitespace_mode(self, marks):
        seq = strip_and_label("hello， world again", marks)
        assert seq.tokens == ["hello", "world", "again"]
        assert seq.labels == ["COMMA", "O", "O"]

    def test_no_surface_chars_in_tokens(self, marks, synth_corpus):
        docs = synth_corpus.corpus_file.read_text(encoding="utf-8").splitlines()
        for doc in docs[:50]:
            seq = strip_and_label(doc, marks)
            assert not set("".join(seq.tokens)) & marks.surface_chars

    def test_scan_count_oracle_on_corpus(self, marks, synth_corpus):
        # label counts must match an independent character-scan of the raw text
        text = synth_corpus.corpus_file.read_text(encoding="utf-8")
        scanned = count_mark_chars(text, dict(marks.surfaces))
        tallied = Counter()
        for doc in text.splitlines():
            if doc:
                tallied.update(strip_and_label(doc, marks).labels)
        for name, count in scanned.items():
            assert tallied[name] == count


class TestRestoreText:
    def test_simple(self, marks):
        assert restore_text(LabeledSequence(["你", "好"], ["O", "PERIOD"]), marks) == "你好。"

    def test_latin_tokens_concatenated(self, marks):
        seq = LabeledSequence(["a", "b", "c"], ["COMMA", "O", "O"])
        assert restore_text(seq, marks) == "a，bc"

    def test_unknown_mark(self, marks):
        seq = LabeledSequence(["a"], ["SEMICOLON"])
        with pytest.raises(UnknownMarkError):
            restore_text(seq, marks)

    @given(
        st.lists(
            st.tuples(
                st.sampled_from("你好世界发热主诉"),
                st.sampled_from(["O", "O", "O", "COMMA", "PERIOD", "COLON"]),
            ),
            min_size=1,
            max_size=40,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, pairs):
        marks = MarkSet.from_names(["comma", "period", "colon"])
        text = "".join(
            tok + (marks.surface_of(lab) if lab != "O" else "") for tok, lab in pairs
        )
        seq = strip_and_label(text, marks)
        assert restore_text(seq, marks) == text

    def test_round_trip_on_synthetic(self, marks, synth_corpus):
        docs = synth_corpus.corpus_file.read_text(encoding="utf-8").splitlines()
        for doc in docs[:100]:
            assert restore_text(strip_and_label(doc, marks), marks) == doc


def _dummy_sequences(n):
    return [LabeledSequence([f"t{i}"], ["O"]) for i in range(n)]


class TestSplitCorpus:
    def test_sizes_10(self):
        split = split_corpus(_dummy_sequences(10), (0.8, 0.1, 0.1), seed=7)
        assert (len(split.train), len(split.dev), len(split.test)) == (8, 1, 1)

    def test_deterministic(self):
        seqs = _dummy_sequences(30)
        a = split_corpus(seqs, (0.8, 0.1, 0.1), seed=5)
        b = split_corpus(seqs, (0.8, 0.1, 0.1), seed=5)
        assert [s.tokens for s in a.train] == [s.tokens for s in b.train]
        assert [s.tokens for s in a.test] == [s.tokens for s in b.test]

    def test_floor_allocation_remainder(self):
        # floors are (90, 9, 1) and sum to 100, so nothing is added to train
        split = split_corpus(_dummy_sequences(100), (0.9, 0.09, 0.01), seed=0)
        assert (len(split.train), len(split.dev), len(split.test)) == (90, 9, 1)

    def test_disjoint_and_complete(self):
        seqs = _dummy_sequences(25)
        split = split_corpus(seqs, (0.6, 0.2, 0.2), seed=2)
        names = [s.tokens[0] for part in (split.train, split.dev, split.test) for s in part]
        assert sorted(names) == sorted(s.tokens[0] for s in seqs)
        assert len(set(names)) == len(names)

    def test_bad_ratios(self):
        with pytest.raises(BadRatiosError):
            split_corpus(_dummy_sequences(5), (0.5, 0.2, 0.2), seed=0)
        with pytest.raises(BadRatiosError):
            split_corpus(_dummy_sequences(5), (1.2, -0.1, -0.1), seed=0)


class TestCorpusStats:
    def test_empty_split_all_zeros(self, marks):
        split = split_corpus(_dummy_sequences(1), (1.0, 0.0, 0.0), seed=0)
        stats = corpus_stats(split, marks)
        assert stats["dev"] == {"O": 0, "COMMA": 0, "PERIOD": 0, "COLON": 0}

    def test_brute_force_tally(self, marks):
        seqs = [
            LabeledSequence(list("你好世"), ["O", "COMMA", "PERIOD"]),
            LabeledSequence(list("主诉"), ["COLON", "O"]),
            LabeledSequence(list("发热"), ["O", "PERIOD"]),
        ]
        split = split_corpus(seqs, (1.0, 0.0, 0.0), seed=0)
        expected = Counter()
        for s in seqs:
            expected.update(s.labels)
        assert corpus_stats(split, marks)["train"] == {
            "O": expected["O"],
            "COMMA": expected["COMMA"],
            "PERIOD": expected["PERIOD"],
            "COLON": expected["COLON"],
        }

    def test_tsv_schema_matches_table_order(self, marks):
        split = split_corpus(_dummy_sequences(3), (0.4, 0.3, 0.3), seed=0)
        header = stats_tsv(split, marks).splitlines()[0].split("\t")
        assert header == ["split", "O", "Comma", "Period", "Colon"]

    def test_totals_equal_removed_marks(self, marks, synth_corpus):
        docs = synth_corpus.corpus_file.read_text(encoding="utf-8").splitlines()[:80]
        seqs = [strip_and_label(d, marks) for d in docs if d]
        counts = label_counts(seqs)
        scanned = count_mark_chars("\n".join(docs), dict(marks.surfaces))
        assert sum(scanned.values()) == sum(v for k, v in counts.items() if k != "O")


class TestSegmentWords:
    def test_lexicon_pairs(self, marks):
        seq = LabeledSequence(list("甲乙丙丁"), ["O"] * 4)
        seg = segment_words(seq, GreedyLexiconSegmenter(["甲乙", "丙丁"]))
        assert seg.groups == [(0, 2), (2, 4)]

    def test_empty_lexicon_single_chars(self):
        seq = LabeledSequence(list("甲乙丙"), ["O"] * 3)
        assert segment_words(seq, None).groups == [(0, 1), (1, 2), (2, 3)]
        assert segment_words(seq, GreedyLexiconSegmenter([])).groups == [(0, 1), (1, 2), (2, 3)]

    def test_longest_match_wins(self):
        seq = LabeledSequence(list("甲乙丙"), ["O"] * 3)
        seg = segment_words(seq, GreedyLexiconSegmenter(["甲乙", "甲乙丙"]))
        assert seg.groups == [(0, 3)]

    @given(
        st.lists(st.sampled_from("abcdef"), min_size=1, max_size=30),
        st.lists(st.text("abcdef", min_size=1, max_size=3), max_size=8),
    )
    @settings(max_examples=100, deadline=None)
    def test_tiling_property(self, chars, lexicon):
        seq = LabeledSequence(chars, ["O"] * len(chars))
        seg = segment_words(seq, GreedyLexiconSegmenter(lexicon))
        assert tiling_ok(seg.groups, len(chars))

    def test_invalid_tiling_rejected(self):
        with pytest.raises(ValueError):
            WordSegmentation([(0, 2), (3, 4)])


class TestChunkSequence:
    def test_splits_at_periods(self):
        seq = LabeledSequence(
            list("abcdefgh"),
            ["O", "O", "PERIOD", "O", "PERIOD", "O", "O", "PERIOD"],
        )
        chunks = chunk_sequence(seq, 5)
        assert [c.tokens for c in chunks] == [list("abcde"), list("fgh")]
        assert all(len(c) <= 5 for c in chunks)

    def test_hard_split_long_sentence(self):
        seq = LabeledSequence(list("abcdefg"), ["O"] * 6 + ["PERIOD"])
        chunks = chunk_sequence(seq, 3)
        assert [c.tokens for c in chunks] == [list("abc"), list("def"), list("g")]

    def test_concatenation_identity(self, marks, synth_corpus):
        docs = synth_corpus.corpus_file.read_text(encoding="utf-8").splitlines()[:40]
        for doc in docs:
            seq = strip_and_label(doc, marks)
            chunks = chunk_sequence(seq, 85)
            rebuilt = [t for c in chunks for t in c.tokens]
            relabels = [l for c in chunks for l in c.labels]
            assert rebuilt == seq.tokens and relabels == seq.labels
            assert all(len(c) <= 85 for c in chunks)


class TestDatasetFiles:
    def test_jsonl_round_trip(self, tmp_path, marks):
        seqs = [LabeledSequence(list("你好"), ["COMMA", "PERIOD"])]
        write_jsonl(tmp_path / "x.jsonl", seqs)
        back = read_jsonl(tmp_path / "x.jsonl", marks)
        assert back[0].tokens == seqs[0].tokens and back[0].labels == seqs[0].labels

    def test_vocab_specials_first(self):
        vocab = build_vocab([LabeledSequence(list("你好"), ["O", "O"])])
        assert vocab["[PAD]"] == 0 and vocab["[MASK]"] == 1
        assert set("你好") <= set(vocab)

    def test_build_and_read_corpus_dir(self, tmp_path, marks, synth_corpus):
        docs = synth_corpus.corpus_file.read_text(encoding="utf-8").splitlines()[:60]
        built = build_corpus_dir(
            docs, tmp_path / "d", marks, seed=1, max_tokens=85,
            lexicon=synth_corpus.lexicon,
        )
        back = read_corpus_dir(tmp_path / "d")
        assert back.vocab == built.vocab
        assert back.marks.names == marks.names
        assert back.lexicon == built.lexicon
        assert [s.tokens for s in back.split.train] == [s.tokens for s in built.split.train]
        assert (tmp_path / "d" / "stats.tsv").exists()

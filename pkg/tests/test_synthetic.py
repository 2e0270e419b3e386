import pytest

from punctuator.corpus import GreedyLexiconSegmenter, segment_words, strip_and_label
from punctuator.errors import BadRatiosError
from punctuator.synthetic import (
    BODY_STARTER_CHARS,
    CONJUNCTION_CHARS,
    DEFAULT_RATIOS,
    GrammarConfig,
    SENTENCE_STARTER_CHARS,
    WORD_INITIAL_CHARS,
    WORD_INTERNAL_CHARS,
    make_synthetic_corpus,
    rule_labels,
)


class TestGrammarConfig:
    def test_pools_disjoint(self):
        pools = [SENTENCE_STARTER_CHARS, BODY_STARTER_CHARS, CONJUNCTION_CHARS,
                 WORD_INITIAL_CHARS, WORD_INTERNAL_CHARS]
        joined = "".join(pools)
        assert len(set(joined)) == len(joined)

    def test_default_derivations(self):
        cfg = GrammarConfig()
        assert cfg.header_probability == pytest.approx(33304 / 83248)
        assert cfg.mean_clauses == pytest.approx(434981 / 83248 + 1)
        assert cfg.mean_sentence_tokens == pytest.approx(
            sum(DEFAULT_RATIOS.values()) / 83248
        )

    def test_bad_ratios(self):
        with pytest.raises(BadRatiosError):
            GrammarConfig(ratios={"O": 0, "COMMA": 1, "PERIOD": 1, "COLON": 0})
        with pytest.raises(BadRatiosError):
            GrammarConfig(ratios={"O": 10, "COMMA": 1, "PERIOD": 1, "COLON": 5})
        with pytest.raises(BadRatiosError):
            # so comma-heavy that clauses get less than two tokens
            GrammarConfig(ratios={"O": 1, "COMMA": 50, "PERIOD": 1, "COLON": 0})


class TestMakeSyntheticCorpus:
    def test_minimum_size(self, tmp_path):
        with pytest.raises(ValueError):
            make_synthetic_corpus(GrammarConfig(), 99, 0, tmp_path)

    def test_byte_identical_rerun(self, tmp_path):
        a = make_synthetic_corpus(GrammarConfig(), 120, 42, tmp_path / "a")
        b = make_synthetic_corpus(GrammarConfig(), 120, 42, tmp_path / "b")
        assert a.corpus_file.read_bytes() == b.corpus_file.read_bytes()
        assert a.lexicon_file.read_bytes() == b.lexicon_file.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a = make_synthetic_corpus(GrammarConfig(), 120, 1, tmp_path / "a")
        b = make_synthetic_corpus(GrammarConfig(), 120, 2, tmp_path / "b")
        assert a.corpus_file.read_bytes() != b.corpus_file.read_bytes()

    def test_class_ratios_within_5pct(self, synth_corpus):
        cfg = GrammarConfig()
        total_weight = sum(cfg.ratios.values())
        total = sum(synth_corpus.label_counts.values())
        for name, weight in cfg.ratios.items():
            target = weight / total_weight
            got = synth_corpus.label_counts.get(name, 0) / total
            assert abs(got - target) / target < 0.05, (name, got, target)

    def test_comma_period_ratio_within_5pct(self, synth_corpus):
        cfg = GrammarConfig()
        target = cfg.ratios["COMMA"] / cfg.ratios["PERIOD"]
        got = synth_corpus.label_counts["COMMA"] / synth_corpus.label_counts["PERIOD"]
        assert abs(got - target) / target < 0.05

    def test_sentence_count(self, synth_corpus):
        assert synth_corpus.sentences == 500
        assert synth_corpus.label_counts["PERIOD"] == 500

    def test_rule_oracle_agrees_with_strip(self, marks, synth_corpus):
        docs = synth_corpus.corpus_file.read_text(encoding="utf-8").splitlines()
        for doc in docs[:80]:
            seq = strip_and_label(doc, marks)
            assert rule_labels(seq.tokens) == seq.labels

    def test_marks_only_at_word_finals_under_lexicon(self, marks, synth_corpus):
        segmenter = GreedyLexiconSegmenter(synth_corpus.lexicon)
        docs = synth_corpus.corpus_file.read_text(encoding="utf-8").splitlines()
        for doc in docs[:80]:
            seq = strip_and_label(doc, marks)
            seg = segment_words(seq, segmenter)
            finals = {end - 1 for _, end in seg.groups}
            for i, label in enumerate(seq.labels):
                if label != "O":
                    assert i in finals

    def test_lexicon_words_cover_corpus(self, marks, synth_corpus):
        words = set(synth_corpus.lexicon)
        segmenter = GreedyLexiconSegmenter(synth_corpus.lexicon)
        docs = synth_corpus.corpus_file.read_text(encoding="utf-8").splitlines()
        seq = strip_and_label(docs[0], marks)
        seg = segment_words(seq, segmenter)
        for start, end in seg.groups:
            assert "".join(seq.tokens[start:end]) in words

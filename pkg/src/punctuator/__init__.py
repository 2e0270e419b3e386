"""Punctuation restoration via mark-prediction pre-training and distillation."""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    DatasetSplit,
    GreedyLexiconSegmenter,
    LabeledSequence,
    WordSegmentation,
    restore_text,
    segment_words,
    split_corpus,
    strip_and_label,
)
from .marks import MarkSet, default_finetune_marks, default_pretrain_marks  # noqa: F401
from .model import Encoder, ModelConfig, preset_config  # noqa: F401

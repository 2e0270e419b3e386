"""Slot-tagging fine-tuning: insert a [M] slot after each word and classify it.

The slot classifier is the pre-trained mark head.  Slot predictions are
projected back to token positions with ``O`` forced everywhere inside a word,
so no mark can be inserted mid-word.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import (
    LabeledSequence,
    Segmenter,
    WordSegmentation,
    encode_tokens,
    restore_text,
    segment_words,
    strip_and_label,
)
from .errors import (
    EmptyAfterStripError,
    EmptyInputError,
    LengthMismatchError,
    TooLongAfterSlotsError,
)
from .marks import O_LABEL, MarkSet
from .model import Encoder, gather_positions, pmp_logits, resize_head, save_checkpoint
from .pretrain import MaskedExample, ce_loss, collate, derive_seed

logger = logging.getLogger(__name__)


@dataclass
class SlotSequence:
    """Fine-tuning input: word tokens with a slot id after each word."""

    slotted_ids: list[int]
    slot_positions: list[int]
    word_end_token_index: list[int]
    gold_slots: list[int]

    def __post_init__(self) -> None:
        if not (
            len(self.slot_positions) == len(self.word_end_token_index) == len(self.gold_slots)
        ):
            raise LengthMismatchError("slot fields must have one entry per word")


def insert_mask_slots(
    seq: LabeledSequence,
    seg: WordSegmentation,
    vocab: dict[str, int],
    marks: MarkSet,
    mask_id: int = 1,
    max_len: int | None = None,
    counters: Counter | None = None,
) -> SlotSequence:
    """Interleave a slot after every word; each slot carries the word-final label.

    A mark on a non-final token of a word (a segmentation the marks disagree
    with) is remapped to that word's slot and counted under
    ``counters["midword_marks"]``; it never creates a mid-word slot.
    """
    if seg.n_tokens != len(seq):
        raise LengthMismatchError(f"segmentation covers {seg.n_tokens} of {len(seq)} tokens")
    n, k = len(seq), len(seg)
    if max_len is not None and n + k > max_len:
        raise TooLongAfterSlotsError(f"{n} tokens + {k} slots exceeds max_len {max_len}")
    token_ids = encode_tokens(seq.tokens, vocab)
    slotted: list[int] = []
    slot_positions: list[int] = []
    word_ends: list[int] = []
    gold: list[int] = []
    for start, end in seg.groups:
        slotted.extend(token_ids[start:end])
        slot_positions.append(len(slotted))
        slotted.append(mask_id)
        word_ends.append(end - 1)
        label = seq.labels[end - 1]
        inner = [l for l in seq.labels[start : end - 1] if l != O_LABEL]
        if inner:
            if counters is not None:
                counters["midword_marks"] += len(inner)
            logger.debug("remapping %d mid-word mark(s) to the word slot", len(inner))
            if label == O_LABEL:
                label = inner[-1]
        gold.append(marks.index(label))
    return SlotSequence(slotted, slot_positions, word_ends, gold)


def project_outputs(
    slot_preds: Sequence[str],
    seg: WordSegmentation,
    n: int,
) -> list[str]:
    """Assign each word's predicted mark to its final token, O elsewhere."""
    if len(slot_preds) != len(seg):
        raise LengthMismatchError(f"{len(slot_preds)} predictions for {len(seg)} words")
    if seg.n_tokens != n:
        raise LengthMismatchError(f"segmentation covers {seg.n_tokens} of {n} tokens")
    labels = [O_LABEL] * n
    for pred, (_, end) in zip(slot_preds, seg.groups):
        labels[end - 1] = pred
    return labels


def chunk_for_slots(
    seq: LabeledSequence,
    seg: WordSegmentation,
    budget: int,
) -> list[tuple[LabeledSequence, WordSegmentation]]:
    """Split at word boundaries so each piece fits ``tokens + slots <= budget``."""
    if budget < 2:
        raise ValueError("budget must allow at least one word and its slot")
    pieces: list[tuple[LabeledSequence, WordSegmentation]] = []
    cur: list[tuple[int, int]] = []
    cur_cost = 0

    def flush() -> None:
        nonlocal cur, cur_cost
        if not cur:
            return
        lo, hi = cur[0][0], cur[-1][1]
        piece = LabeledSequence(seq.tokens[lo:hi], seq.labels[lo:hi])
        groups = [(s - lo, e - lo) for s, e in cur]
        pieces.append((piece, WordSegmentation(groups)))
        cur, cur_cost = [], 0

    for start, end in seg.groups:
        cost = (end - start) + 1
        if cost > budget:  # a single oversized word: fall back to char pieces
            flush()
            for i in range(start, end):
                if cur_cost + 2 > budget:
                    flush()
                cur.append((i, i + 1))
                cur_cost += 2
            continue
        if cur_cost + cost > budget:
            flush()
        cur.append((start, end))
        cur_cost += cost
    flush()
    return pieces


@dataclass
class SlotExample:
    """A slot-ready piece together with what is needed to score it."""

    slots: SlotSequence
    piece: LabeledSequence
    seg: WordSegmentation


def build_slot_dataset(
    sequences: Sequence[LabeledSequence],
    segmenter: Segmenter | None,
    vocab: dict[str, int],
    marks: MarkSet,
    max_len: int,
    mask_id: int = 1,
    counters: Counter | None = None,
) -> list[SlotExample]:
    examples: list[SlotExample] = []
    for seq in sequences:
        seg = segment_words(seq, segmenter)
        for piece, piece_seg in chunk_for_slots(seq, seg, max_len):
            slots = insert_mask_slots(
                piece, piece_seg, vocab, marks, mask_id, max_len, counters
            )
            examples.append(SlotExample(slots, piece, piece_seg))
    return examples


def _slot_batches(
    examples: Sequence[SlotExample],
    order: Sequence[int],
    batch_size: int,
    max_len: int,
    pad_id: int,
):
    for i in range(0, len(order), batch_size):
        chunk = [examples[j] for j in order[i : i + batch_size]]
        masked = [
            MaskedExample(ex.slots.slotted_ids, ex.slots.slot_positions, ex.slots.gold_slots)
            for ex in chunk
        ]
        yield chunk, collate(masked, max_len, pad_id)


def predict_labels(
    encoder: Encoder,
    examples: Sequence[SlotExample],
    marks: MarkSet,
    batch_size: int = 64,
) -> list[list[str]]:
    """Per-piece projected label sequences (argmax over slot logits)."""
    encoder.eval()
    out: list[list[str]] = []
    with torch.no_grad():
        for chunk, batch in _slot_batches(
            examples, range(len(examples)), batch_size,
            encoder.config.max_len, encoder.config.pad_id,
        ):
            states = encoder(batch.input_ids, batch.attention_mask)
            logits = pmp_logits(
                gather_positions(states, batch.batch_index, batch.position_index),
                encoder.pmp_head,
            )
            preds = logits.argmax(dim=-1).tolist()
            offset = 0
            for ex in chunk:
                k = len(ex.slots.slot_positions)
                names = [marks.names[p] for p in preds[offset : offset + k]]
                out.append(project_outputs(names, ex.seg, len(ex.piece)))
                offset += k
    return out


@dataclass(frozen=True)
class FinetuneConfig:
    lr: float = 3e-5
    epochs: int = 10
    batch_size: int = 32
    warmup_frac: float = 0.1
    weight_decay: float = 1e-5
    grad_clip: float = 1.0
    seed: int = 0
    eval_batch_size: int = 64

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FinetuneResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_f1: float = 0.0
    best_dir: Path | None = None


def finetune(
    encoder: Encoder,
    train: Sequence[LabeledSequence],
    dev: Sequence[LabeledSequence],
    config: FinetuneConfig,
    marks: MarkSet,
    vocab: dict[str, int],
    segmenter: Segmenter | None,
    out_dir: Path | str,
    pretrain_mark_names: Sequence[str] | None = None,
) -> FinetuneResult:
    """Fine-tune on slot tagging with warmup + linear decay, best-on-dev selection."""
    from .evaluation import prf1  # local import: evaluation also drives this module

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if pretrain_mark_names and list(pretrain_mark_names) != list(marks.names):
        with torch.random.fork_rng():
            torch.manual_seed(derive_seed(config.seed, "head"))
            resize_head(encoder, list(pretrain_mark_names), list(marks.names))

    counters: Counter = Counter()
    cfg = encoder.config
    train_examples = build_slot_dataset(
        train, segmenter, vocab, marks, cfg.max_len, cfg.mask_id, counters
    )
    dev_examples = build_slot_dataset(
        dev, segmenter, vocab, marks, cfg.max_len, cfg.mask_id, counters
    )
    if counters:
        logger.info("slot dataset warnings: %s", dict(counters))

    steps_per_epoch = max(1, (len(train_examples) + config.batch_size - 1) // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    warmup = max(1, int(config.warmup_frac * total_steps))
    optimizer = torch.optim.AdamW(
        encoder.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )

    def lr_factor(step: int) -> float:
        if step < warmup:
            return step / warmup
        return max(0.0, (total_steps - step) / max(1, total_steps - warmup))

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_factor)
    order_rng = np.random.default_rng(derive_seed(config.seed, "finetune-order"))
    result = FinetuneResult()
    best_state: dict | None = None

    for epoch in range(1, config.epochs + 1):
        encoder.train()
        order = order_rng.permutation(len(train_examples))
        losses = []
        for _, batch in _slot_batches(
            train_examples, order, config.batch_size, cfg.max_len, cfg.pad_id
        ):
            states = encoder(batch.input_ids, batch.attention_mask)
            logits = pmp_logits(
                gather_positions(states, batch.batch_index, batch.position_index),
                encoder.pmp_head,
            )
            loss = ce_loss(logits, batch.mark_labels)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(encoder.parameters(), config.grad_clip)
            optimizer.step()
            scheduler.step()
            losses.append(loss.item())

        preds = predict_labels(encoder, dev_examples, marks, config.eval_batch_size)
        gold = [ex.piece.labels for ex in dev_examples]
        dev_f1 = prf1(preds, gold, marks).overall_f1 if dev_examples else 0.0
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else 0.0,
            "dev_f1": float(dev_f1),
        }
        result.history.append(entry)
        logger.info("finetune epoch %d/%d loss=%.4f dev_f1=%.2f",
                    epoch, config.epochs, entry["train_loss"], dev_f1)
        save_checkpoint(
            out_dir / f"epoch_{epoch:02d}",
            encoder,
            step=epoch,
            mark_names=list(marks.names),
            vocab=vocab,
            extra={"stage": "finetune", "dev_f1": float(dev_f1)},
        )
        if best_state is None or dev_f1 > result.best_dev_f1:
            result.best_dev_f1 = float(dev_f1)
            result.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in encoder.state_dict().items()}

    if best_state is not None:
        encoder.load_state_dict(best_state)
    result.best_dir = save_checkpoint(
        out_dir / "best",
        encoder,
        step=result.best_epoch,
        history=result.history,
        mark_names=list(marks.names),
        vocab=vocab,
        extra={
            "stage": "finetune",
            "config": config.to_dict(),
            "best_epoch": result.best_epoch,
            "dev_f1": result.best_dev_f1,
        },
    )
    return result


# --- inference ---------------------------------------------------------------


def _restore_spaced(tokens: Sequence[str], labels: Sequence[str], marks: MarkSet) -> str:
    """Whitespace-tokenized restore: marks attach to tokens, words get spaces."""
    parts = []
    for token, label in zip(tokens, labels):
        parts.append(token + (marks.surface_of(label) if label != O_LABEL else ""))
    return " ".join(parts)


def punctuate_text(
    encoder: Encoder,
    marks: MarkSet,
    vocab: dict[str, int],
    segmenter: Segmenter | None,
    text: str,
    batch_size: int = 64,
) -> str:
    """Insert predicted marks into raw text (existing marks are stripped)."""
    if any(c in marks.surface_chars for c in text):
        logger.warning("input already contains marks from the active set; stripping them")
    try:
        seq = strip_and_label(text, marks)
    except EmptyAfterStripError as exc:
        raise EmptyInputError("nothing to punctuate") from exc
    # multi-character tokens mean the text was whitespace-tokenized
    spaced = any(len(t) > 1 for t in seq.tokens)
    seg = segment_words(seq, segmenter)
    pieces = chunk_for_slots(seq, seg, encoder.config.max_len)
    examples = [
        SlotExample(
            insert_mask_slots(piece, piece_seg, vocab, marks, encoder.config.mask_id),
            piece,
            piece_seg,
        )
        for piece, piece_seg in pieces
    ]
    predicted = predict_labels(encoder, examples, marks, batch_size)
    out = []
    for ex, labels in zip(examples, predicted):
        restored = (
            _restore_spaced(ex.piece.tokens, labels, marks)
            if spaced
            else restore_text(LabeledSequence(ex.piece.tokens, labels), marks)
        )
        out.append(restored)
    return (" " if spaced else "").join(out)

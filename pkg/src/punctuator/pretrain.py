"""Mark-prediction pre-training: masking, CE + contrastive losses, the loop.

Each example masks 15% of its tokens (always with [MASK]) and the model
predicts the mark class that followed each hidden token.  Cross-entropy is
combined with a supervised contrastive loss over the masked-position
representations pooled across the batch.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from torch import Tensor
from torch.nn import functional as F

from .corpus import LabeledSequence, encode_labels, encode_tokens
from .errors import EmptyBatchError, TooShortError
from .marks import MarkSet
from .model import Encoder, gather_positions, pmp_logits, save_checkpoint

logger = logging.getLogger(__name__)

MASK_RATE = 0.15
MIN_PRETRAIN_LENGTH = 7  # shortest length with at least one mask position


def derive_seed(base: int, *tags: object) -> int:
    """Stable per-purpose seed derived from a base seed and string tags."""
    text = ":".join([str(base), *map(str, tags)])
    return int(hashlib.sha256(text.encode()).hexdigest()[:8], 16)


@dataclass(frozen=True)
class PretrainConfig:
    lam: float = 0.1            # weight of the contrastive term
    tau: float = 0.07           # contrastive temperature
    lr: float = 4e-4
    warmup_frac: float = 0.0    # fraction of steps ramping lr from 0
    batch_size: int = 16
    steps: int = 2000
    seed: int = 0
    mask_rate: float = MASK_RATE
    balanced_masking: bool = False
    balance_boost: float = 5.0  # oversampling factor for non-O positions
    scl_include_self: bool = False
    grad_clip: float = 1.0
    weight_decay: float = 0.0
    checkpoint_every: int = 0   # 0 = final checkpoint only

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.mask_rate < 1.0:
            raise ValueError(f"mask_rate must be in (0, 1), got {self.mask_rate}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MaskedExample:
    """Pre-training instance: ids with [MASK] holes and the marks they hide."""

    input_ids: list[int]
    mask_positions: list[int]
    mark_labels: list[int]


def mask_count(effective_length: int, rate: float = MASK_RATE) -> int:
    return int(np.floor(effective_length * rate))


def make_masked_example(
    seq: LabeledSequence,
    vocab: dict[str, int],
    marks: MarkSet,
    rng: np.random.Generator,
    mask_id: int = 1,
    rate: float = MASK_RATE,
    balanced: bool = False,
    balance_boost: float = 5.0,
) -> MaskedExample:
    """Mask ``floor(n * rate)`` positions chosen uniformly without replacement.

    Balanced mode oversamples positions whose label is a mark rather than O.
    """
    n = len(seq)
    k = mask_count(n, rate)
    if k < 1:
        raise TooShortError(f"length {n} yields no mask positions at rate {rate}")
    if balanced:
        weights = np.array(
            [balance_boost if label != marks.names[0] else 1.0 for label in seq.labels]
        )
        positions = rng.choice(n, size=k, replace=False, p=weights / weights.sum())
    else:
        positions = rng.choice(n, size=k, replace=False)
    positions = sorted(int(p) for p in positions)
    input_ids = encode_tokens(seq.tokens, vocab)
    label_ids = encode_labels(seq.labels, marks)
    mark_labels = [label_ids[p] for p in positions]
    for p in positions:
        input_ids[p] = mask_id
    return MaskedExample(input_ids, positions, mark_labels)


@dataclass
class Batch:
    input_ids: Tensor        # (batch, max_len) long
    attention_mask: Tensor   # (batch, max_len) bool
    batch_index: Tensor      # (M,) long
    position_index: Tensor   # (M,) long
    mark_labels: Tensor      # (M,) long


def collate(examples: Sequence[MaskedExample], max_len: int, pad_id: int = 0) -> Batch:
    batch = len(examples)
    ids = torch.full((batch, max_len), pad_id, dtype=torch.long)
    mask = torch.zeros((batch, max_len), dtype=torch.bool)
    b_idx, p_idx, labels = [], [], []
    for i, ex in enumerate(examples):
        n = len(ex.input_ids)
        ids[i, :n] = torch.tensor(ex.input_ids, dtype=torch.long)
        mask[i, :n] = True
        b_idx.extend([i] * len(ex.mask_positions))
        p_idx.extend(ex.mask_positions)
        labels.extend(ex.mark_labels)
    return Batch(
        ids,
        mask,
        torch.tensor(b_idx, dtype=torch.long),
        torch.tensor(p_idx, dtype=torch.long),
        torch.tensor(labels, dtype=torch.long),
    )


# --- losses ------------------------------------------------------------------


def ce_loss(logits: Tensor, labels: Tensor) -> Tensor:
    """Mean over samples of -log softmax(logits)[label]."""
    if logits.shape[0] == 0:
        raise EmptyBatchError("cross-entropy over zero samples")
    if logits.shape[0] != labels.shape[0]:
        raise EmptyBatchError(
            f"{logits.shape[0]} logit rows vs {labels.shape[0]} labels"
        )
    log_probs = F.log_softmax(logits, dim=-1)
    return -log_probs.gather(1, labels.view(-1, 1)).mean()


def scl_loss(
    reps: Tensor,
    labels: Tensor,
    tau: float = 0.07,
    include_self: bool = False,
) -> Tensor:
    """Supervised contrastive loss over one pool of representations.

    Rows are l2-normalized; similarity is the scaled dot product.  Every
    sample acts as an anchor; its positives are the other same-class samples
    and the denominator runs over all other samples (optionally including the
    anchor itself).  Anchors without positives are skipped and the result is
    the mean over the remaining anchors, 0 if none remain.
    """
    m = reps.shape[0]
    if m == 0:
        raise EmptyBatchError("contrastive loss over zero samples")
    if m != labels.shape[0]:
        raise EmptyBatchError(f"{m} rows vs {labels.shape[0]} labels")
    if m == 1:
        return reps.new_zeros(())
    z = F.normalize(reps, dim=1)
    sim = (z @ z.T) / tau
    same = labels.view(-1, 1) == labels.view(1, -1)
    eye = torch.eye(m, dtype=torch.bool, device=reps.device)
    pos_mask = same & ~eye
    denom_mask = torch.ones_like(eye) if include_self else ~eye
    log_denom = sim.masked_fill(~denom_mask, float("-inf")).logsumexp(dim=1, keepdim=True)
    log_prob = sim - log_denom
    pos_counts = pos_mask.sum(dim=1)
    valid = pos_counts > 0
    if not bool(valid.any()):
        return reps.new_zeros(())
    per_anchor = -(log_prob * pos_mask).sum(dim=1)[valid] / pos_counts[valid]
    return per_anchor.mean()


def pmp_loss(ce: Tensor | float, scl: Tensor | float, lam: float) -> Tensor | float:
    """Combined objective: ``(1 - lam) * ce + lam * scl``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return (1.0 - lam) * ce + lam * scl


# --- the loop ----------------------------------------------------------------


def make_warmup_schedule(optimizer, warmup_frac: float, steps: int):
    """Linear lr ramp over the first ``warmup_frac`` of steps, then constant."""
    if warmup_frac <= 0 or steps <= 0:
        return None
    warmup = max(1, int(warmup_frac * steps))
    return torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda s: min(1.0, (s + 1) / warmup)
    )


def usable_sequences(
    sequences: Sequence[LabeledSequence], rate: float = MASK_RATE
) -> list[LabeledSequence]:
    """Drop sequences too short to mask; log how many were skipped."""
    kept = [s for s in sequences if mask_count(len(s), rate) >= 1]
    if len(kept) < len(sequences):
        logger.info("skipping %d too-short sequences", len(sequences) - len(kept))
    return kept


def batch_stream(
    sequences: Sequence[LabeledSequence],
    vocab: dict[str, int],
    marks: MarkSet,
    config: "PretrainConfig",
    max_len: int,
    mask_id: int,
    pad_id: int,
) -> Iterator[Batch]:
    """Deterministic epoch-shuffled batches with fresh masks every step.

    Distillation consumes the identical stream so that disabling the
    distillation terms reproduces plain pre-training exactly.
    """
    order_rng = np.random.default_rng(derive_seed(config.seed, "order"))
    mask_rng = np.random.default_rng(derive_seed(config.seed, "mask"))
    n = len(sequences)
    order: list[int] = []
    while True:
        if len(order) < config.batch_size:
            order.extend(int(i) for i in order_rng.permutation(n))
        take, order = order[: config.batch_size], order[config.batch_size :]
        examples = [
            make_masked_example(
                sequences[i],
                vocab,
                marks,
                mask_rng,
                mask_id=mask_id,
                rate=config.mask_rate,
                balanced=config.balanced_masking,
                balance_boost=config.balance_boost,
            )
            for i in take
        ]
        yield collate(examples, max_len, pad_id)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"] if self.history else float("nan")


def pretrain(
    sequences: Sequence[LabeledSequence],
    encoder: Encoder,
    config: PretrainConfig,
    marks: MarkSet,
    vocab: dict[str, int],
    out_dir: Path | str | None = None,
    log_every: int = 200,
) -> TrainResult:
    """Run the mark-prediction pre-training loop; returns per-step history."""
    if not sequences:
        raise EmptyBatchError("pre-training corpus is empty")
    data = usable_sequences(sequences, config.mask_rate)
    if not data:
        raise TooShortError("no sequence is long enough to mask")
    cfg = encoder.config
    stream = batch_stream(data, vocab, marks, config, cfg.max_len, cfg.mask_id, cfg.pad_id)
    optimizer = torch.optim.AdamW(
        encoder.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    scheduler = make_warmup_schedule(optimizer, config.warmup_frac, config.steps)
    result = TrainResult()
    encoder.train()
    for step in range(config.steps):
        batch = next(stream)
        states = encoder(batch.input_ids, batch.attention_mask)
        reps = gather_positions(states, batch.batch_index, batch.position_index)
        logits = pmp_logits(reps, encoder.pmp_head)
        ce = ce_loss(logits, batch.mark_labels)
        scl = scl_loss(reps, batch.mark_labels, config.tau, config.scl_include_self) \
            if config.lam > 0 else logits.new_zeros(())
        loss = pmp_loss(ce, scl, config.lam) if config.lam > 0 else ce
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(encoder.parameters(), config.grad_clip)
        optimizer.step()
        if scheduler is not None:
            scheduler.step()
        with torch.no_grad():
            acc = (logits.argmax(dim=-1) == batch.mark_labels).float().mean().item()
        result.history.append(
            {
                "step": step,
                "loss": float(loss.item()),
                "ce": float(ce.item()),
                "scl": float(scl.item()) if torch.is_tensor(scl) else float(scl),
                "masked_acc": acc,
            }
        )
        if log_every and (step + 1) % log_every == 0:
            logger.info(
                "pretrain step %d/%d loss=%.4f acc=%.3f",
                step + 1, config.steps, loss.item(), acc,
            )
        if out_dir and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0 \
                and (step + 1) < config.steps:
            save_checkpoint(
                Path(out_dir) / f"step_{step + 1:06d}",
                encoder,
                step=step + 1,
                mark_names=list(marks.names),
                vocab=vocab,
            )
    if out_dir is not None:
        save_checkpoint(
            Path(out_dir),
            encoder,
            step=config.steps,
            history=result.history,
            mark_names=list(marks.names),
            vocab=vocab,
            extra={"stage": "pretrain", "config": config.to_dict()},
        )
    return result

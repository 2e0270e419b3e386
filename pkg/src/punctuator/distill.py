"""Teacher-to-student distillation during pre-training.

The student minimizes its own mark-prediction objective plus (a) mean squared
error between projected student hidden states and mapped teacher hidden
states, one learned projection per mapped layer pair with the embedding
output always mapped as pair (0, 0), and (b) temperature-softened KL between
the two models' mark logits at the masked positions.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .corpus import LabeledSequence
from .errors import ConfigMismatchError, EmptyBatchError, ShapeMismatchError
from .marks import MarkSet
from .model import (
    Encoder,
    ModelConfig,
    gather_positions,
    init_student_from_teacher,
    pmp_logits,
    save_checkpoint,
)
from .pretrain import (
    PretrainConfig,
    TrainResult,
    batch_stream,
    ce_loss,
    derive_seed,
    make_warmup_schedule,
    pmp_loss,
    scl_loss,
    usable_sequences,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerMap:
    """(student layer, teacher layer) pairs, 1-indexed, one per student layer."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        teacher_indices = [t for _, t in self.pairs]
        if teacher_indices != sorted(teacher_indices) or len(set(teacher_indices)) != len(
            teacher_indices
        ):
            raise ConfigMismatchError(f"teacher indices must strictly increase: {self.pairs}")
        if [s for s, _ in self.pairs] != list(range(1, len(self.pairs) + 1)):
            raise ConfigMismatchError(f"need exactly one pair per student layer: {self.pairs}")

    def with_embedding(self) -> tuple[tuple[int, int], ...]:
        """All mapped pairs including the embedding outputs as (0, 0)."""
        return ((0, 0), *self.pairs)

    def validate_for(self, student_layers: int, teacher_layers: int) -> None:
        if len(self.pairs) != student_layers:
            raise ConfigMismatchError(
                f"{len(self.pairs)} pairs for a {student_layers}-layer student"
            )
        if any(t < 1 or t > teacher_layers for _, t in self.pairs):
            raise ConfigMismatchError(f"teacher index out of range in {self.pairs}")


def default_layer_map(student_layers: int, teacher_layers: int) -> LayerMap:
    """Uniform stride: student layer j' maps to teacher layer j'*(Lt/Ls)."""
    pairs = tuple(
        (j, round(j * teacher_layers / student_layers)) for j in range(1, student_layers + 1)
    )
    return LayerMap(pairs)


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 8.0
    alpha: float = 1.0   # hidden-state loss weight
    beta: float = 1.0    # softened-logit loss weight
    gamma: float = 1.0   # student mark-prediction loss weight
    lam: float = 0.1
    tau: float = 0.07
    lr: float = 4e-4
    warmup_frac: float = 0.0
    batch_size: int = 16
    steps: int = 2000
    seed: int = 0
    mask_rate: float = 0.15
    balanced_masking: bool = False
    balance_boost: float = 5.0
    scl_include_self: bool = False
    grad_clip: float = 1.0
    weight_decay: float = 0.0
    checkpoint_every: int = 0
    layer_map: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def pretrain_view(self) -> PretrainConfig:
        """The student's own objective expressed as a pre-training config."""
        return PretrainConfig(
            lam=self.lam,
            tau=self.tau,
            lr=self.lr,
            warmup_frac=self.warmup_frac,
            batch_size=self.batch_size,
            steps=self.steps,
            seed=self.seed,
            mask_rate=self.mask_rate,
            balanced_masking=self.balanced_masking,
            balance_boost=self.balance_boost,
            scl_include_self=self.scl_include_self,
            grad_clip=self.grad_clip,
            weight_decay=self.weight_decay,
        )


def hidden_mse_loss(
    student_states: Tensor,
    teacher_states: Tensor,
    projection: Tensor,
    attention_mask: Tensor | None = None,
) -> Tensor:
    """Mean squared error between projected student and teacher hidden states.

    ``projection`` has shape (student width, teacher width); teacher states
    are constants.  With a mask, only real positions enter the mean.
    """
    if student_states.shape[-1] != projection.shape[0]:
        raise ShapeMismatchError(
            f"student width {student_states.shape[-1]} vs projection {tuple(projection.shape)}"
        )
    if teacher_states.shape[-1] != projection.shape[1]:
        raise ShapeMismatchError(
            f"teacher width {teacher_states.shape[-1]} vs projection {tuple(projection.shape)}"
        )
    if student_states.shape[:-1] != teacher_states.shape[:-1]:
        raise ShapeMismatchError("student and teacher batch/position shapes differ")
    diff = student_states @ projection - teacher_states.detach()
    if attention_mask is None:
        return (diff**2).mean()
    if attention_mask.shape != student_states.shape[:-1]:
        raise ShapeMismatchError("attention mask shape must match (batch, n)")
    return (diff[attention_mask.bool()] ** 2).mean()


def logit_kd_loss(student_logits: Tensor, teacher_logits: Tensor, temperature: float) -> Tensor:
    """Temperature-softened KL from teacher to student, scaled by T^2."""
    if student_logits.shape != teacher_logits.shape:
        raise ShapeMismatchError(
            f"{tuple(student_logits.shape)} vs {tuple(teacher_logits.shape)}"
        )
    if student_logits.shape[0] == 0:
        raise EmptyBatchError("logit distillation over zero samples")
    t = temperature
    log_p_student = F.log_softmax(student_logits / t, dim=-1)
    log_p_teacher = F.log_softmax(teacher_logits.detach() / t, dim=-1)
    p_teacher = log_p_teacher.exp()
    kl = (p_teacher * (log_p_teacher - log_p_student)).sum(dim=-1)
    return t * t * kl.mean()


def make_projections(
    student_config: ModelConfig, teacher_config: ModelConfig, n_pairs: int, seed: int
) -> nn.ParameterList:
    """One learnable (d_student, d_teacher) projection per mapped pair."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        params = nn.ParameterList(
            nn.Parameter(
                torch.nn.init.trunc_normal_(
                    torch.empty(student_config.hidden, teacher_config.hidden),
                    std=0.02, a=-0.04, b=0.04,
                )
            )
            for _ in range(n_pairs)
        )
    return params


def distill(
    teacher: Encoder,
    student: Encoder | ModelConfig,
    sequences: Sequence[LabeledSequence],
    config: DistillConfig,
    marks: MarkSet,
    vocab: dict[str, int],
    out_dir: Path | str | None = None,
    log_every: int = 200,
) -> tuple[Encoder, TrainResult]:
    """Train a student against a frozen teacher on freshly masked batches."""
    if not sequences:
        raise EmptyBatchError("distillation corpus is empty")
    if isinstance(student, ModelConfig):
        student = init_student_from_teacher(
            teacher, student, seed=derive_seed(config.seed, "student-init")
        )
    s_cfg, t_cfg = student.config, teacher.config
    if (s_cfg.vocab_size, s_cfg.max_len, s_cfg.num_marks) != (
        t_cfg.vocab_size, t_cfg.max_len, t_cfg.num_marks,
    ):
        raise ConfigMismatchError("student and teacher must share vocab, max_len, and marks")

    layer_map = (
        LayerMap(tuple(tuple(p) for p in config.layer_map))
        if config.layer_map
        else default_layer_map(s_cfg.layers, t_cfg.layers)
    )
    layer_map.validate_for(s_cfg.layers, t_cfg.layers)
    use_hidden = config.alpha > 0
    use_logit_kd = config.beta > 0

    projections: nn.ParameterList | None = None
    trainable: list[nn.Parameter] = list(student.parameters())
    if use_hidden:
        projections = make_projections(
            s_cfg, t_cfg, len(layer_map.with_embedding()), derive_seed(config.seed, "proj")
        )
        trainable += list(projections.parameters())

    data = usable_sequences(sequences, config.mask_rate)
    stream = batch_stream(
        data, vocab, marks, config.pretrain_view(), s_cfg.max_len, s_cfg.mask_id, s_cfg.pad_id
    )
    optimizer = torch.optim.AdamW(trainable, lr=config.lr, weight_decay=config.weight_decay)
    scheduler = make_warmup_schedule(optimizer, config.warmup_frac, config.steps)
    teacher.eval()
    student.train()
    result = TrainResult()
    for step in range(config.steps):
        batch = next(stream)
        student_states = student(batch.input_ids, batch.attention_mask, return_all=True)
        student_reps = gather_positions(
            student_states[-1], batch.batch_index, batch.position_index
        )
        student_logits = pmp_logits(student_reps, student.pmp_head)

        ce = ce_loss(student_logits, batch.mark_labels)
        scl = scl_loss(student_reps, batch.mark_labels, config.tau, config.scl_include_self) \
            if config.lam > 0 else student_logits.new_zeros(())
        pmp = pmp_loss(ce, scl, config.lam) if config.lam > 0 else ce

        loss = config.gamma * pmp if config.gamma > 0 else student_logits.new_zeros(())
        hidden_total = 0.0
        kd_value = 0.0
        if use_hidden or use_logit_kd:
            with torch.no_grad():
                teacher_states = teacher(
                    batch.input_ids, batch.attention_mask, return_all=True
                )
        if use_hidden:
            assert projections is not None
            hidden_sum = student_logits.new_zeros(())
            for proj, (s_idx, t_idx) in zip(projections, layer_map.with_embedding()):
                hidden_sum = hidden_sum + hidden_mse_loss(
                    student_states[s_idx], teacher_states[t_idx], proj, batch.attention_mask
                )
            loss = loss + config.alpha * hidden_sum
            hidden_total = float(hidden_sum.item())
        if use_logit_kd:
            teacher_reps = gather_positions(
                teacher_states[-1], batch.batch_index, batch.position_index
            )
            teacher_logits = pmp_logits(teacher_reps, teacher.pmp_head)
            kd = logit_kd_loss(student_logits, teacher_logits, config.temperature)
            loss = loss + config.beta * kd
            kd_value = float(kd.item())

        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(trainable, config.grad_clip)
        optimizer.step()
        if scheduler is not None:
            scheduler.step()
        with torch.no_grad():
            acc = (student_logits.argmax(dim=-1) == batch.mark_labels).float().mean().item()
        result.history.append(
            {
                "step": step,
                "loss": float(loss.item()),
                "pmp": float(pmp.item()),
                "hidden": hidden_total,
                "kd": kd_value,
                "masked_acc": acc,
            }
        )
        if log_every and (step + 1) % log_every == 0:
            logger.info(
                "distill step %d/%d loss=%.4f acc=%.3f",
                step + 1, config.steps, loss.item(), acc,
            )
        if out_dir and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0 \
                and (step + 1) < config.steps:
            save_checkpoint(
                Path(out_dir) / f"step_{step + 1:06d}",
                student,
                step=step + 1,
                mark_names=list(marks.names),
                vocab=vocab,
            )
    if out_dir is not None:
        save_checkpoint(
            Path(out_dir),
            student,
            step=config.steps,
            history=result.history,
            mark_names=list(marks.names),
            vocab=vocab,
            extra={
                "stage": "distill",
                "config": config.to_dict(),
                "layer_map": [list(p) for p in layer_map.with_embedding()],
            },
        )
    return student, result

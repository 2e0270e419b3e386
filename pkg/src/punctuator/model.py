"""Transformer encoder with a punctuation-mark prediction head.

Post-norm layers (self-attention + GELU FFN with residuals and layer norm),
learned absolute position embeddings, truncated-normal init.  The mark head
is an affine map from hidden states to mark logits and is what fine-tuning
reuses as its slot classifier.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch
from torch import Tensor, nn

from .errors import BadSelectionError, IdOutOfRangeError, ShapeMismatchError

NEG_INF = -1e9

# name -> (layers, hidden, ffn, heads); the first four mirror published
# BERT-family structures, the *-desk pair scales them down for CPU runs.
PRESET_SHAPES: dict[str, tuple[int, int, int, int]] = {
    "teacher": (12, 768, 3072, 12),
    "h768": (6, 768, 3072, 12),
    "h256": (6, 256, 1024, 8),
    "h312": (4, 312, 1200, 12),
    "teacher-desk": (4, 64, 256, 4),
    "student-desk": (2, 32, 128, 2),
}


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    hidden: int
    ffn: int
    heads: int
    vocab_size: int
    max_len: int
    num_marks: int
    pad_id: int = 0
    mask_id: int = 1
    cls_id: int = 2
    sep_id: int = 3
    unk_id: int = 4

    def __post_init__(self) -> None:
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        for name in ("layers", "hidden", "ffn", "heads", "vocab_size", "max_len", "num_marks"):
            if getattr(self, name) < (0 if name == "layers" else 1):
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def preset_config(
    name: str,
    vocab_size: int = 21128,
    max_len: int = 512,
    num_marks: int = 4,
) -> ModelConfig:
    if name not in PRESET_SHAPES:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESET_SHAPES)}")
    layers, hidden, ffn, heads = PRESET_SHAPES[name]
    if name.endswith("-desk") and max_len == 512:
        max_len = 64
    return ModelConfig(layers, hidden, ffn, heads, vocab_size, max_len, num_marks)


def _init_module(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.trunc_normal_(module.weight, std=0.02, a=-0.04, b=0.04)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class TransformerLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.hidden
        self.heads = config.heads
        self.head_dim = d // config.heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.attn_norm = nn.LayerNorm(d)
        self.ffn_in = nn.Linear(d, config.ffn)
        self.ffn_out = nn.Linear(config.ffn, d)
        self.ffn_norm = nn.LayerNorm(d)
        self.act = nn.GELU()

    def forward(self, x: Tensor, additive_mask: Tensor | None) -> Tensor:
        batch, n, d = x.shape
        shape = (batch, n, self.heads, self.head_dim)
        q = self.q(x).view(shape).transpose(1, 2)
        k = self.k(x).view(shape).transpose(1, 2)
        v = self.v(x).view(shape).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if additive_mask is not None:
            scores = scores + additive_mask
        context = scores.softmax(dim=-1) @ v
        context = context.transpose(1, 2).reshape(batch, n, d)
        x = self.attn_norm(x + self.o(context))
        x = self.ffn_norm(x + self.ffn_out(self.act(self.ffn_in(x))))
        return x


class Encoder(nn.Module):
    """Embedding layer, a stack of transformer layers, and the mark head."""

    def __init__(self, config: ModelConfig, seed: int | None = None):
        super().__init__()
        self.config = config
        self.token_embedding = nn.Embedding(config.vocab_size, config.hidden)
        self.position_embedding = nn.Embedding(config.max_len, config.hidden)
        self.layers = nn.ModuleList(TransformerLayer(config) for _ in range(config.layers))
        self.pmp_head = nn.Linear(config.hidden, config.num_marks)
        if seed is None:
            self.apply(_init_module)
        else:
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                self.apply(_init_module)

    def embed(self, token_ids: Tensor) -> Tensor:
        """Token plus position embeddings; ids shape (batch, n), n <= max_len."""
        if token_ids.dim() != 2:
            raise ShapeMismatchError(f"expected (batch, n) ids, got {tuple(token_ids.shape)}")
        n = token_ids.shape[1]
        if n > self.config.max_len:
            raise ShapeMismatchError(f"length {n} exceeds max_len {self.config.max_len}")
        if token_ids.numel() and int(token_ids.max()) >= self.config.vocab_size:
            raise IdOutOfRangeError(
                f"id {int(token_ids.max())} >= vocab size {self.config.vocab_size}"
            )
        if token_ids.numel() and int(token_ids.min()) < 0:
            raise IdOutOfRangeError("negative token id")
        positions = torch.arange(n, device=token_ids.device)
        return self.token_embedding(token_ids) + self.position_embedding(positions)

    def encode(
        self,
        h0: Tensor,
        attention_mask: Tensor | None = None,
        return_all: bool = False,
    ) -> Tensor | list[Tensor]:
        """Apply the layer stack; padded positions are masked out of attention."""
        if h0.dim() != 3 or h0.shape[-1] != self.config.hidden:
            raise ShapeMismatchError(f"expected (batch, n, {self.config.hidden}), got {tuple(h0.shape)}")
        additive = None
        if attention_mask is not None:
            if attention_mask.shape != h0.shape[:2]:
                raise ShapeMismatchError("attention mask shape must match (batch, n)")
            additive = torch.where(attention_mask.bool(), 0.0, NEG_INF)
            additive = additive.to(h0.dtype)[:, None, None, :]
        states = [h0]
        x = h0
        for layer in self.layers:
            x = layer(x, additive)
            states.append(x)
        return states if return_all else x

    def forward(
        self,
        token_ids: Tensor,
        attention_mask: Tensor | None = None,
        return_all: bool = False,
    ) -> Tensor | list[Tensor]:
        return self.encode(self.embed(token_ids), attention_mask, return_all)


def pmp_logits(hidden: Tensor, head: nn.Linear) -> Tensor:
    """Mark logits for gathered hidden rows: ``hidden @ W.T + B``."""
    if hidden.shape[-1] != head.in_features:
        raise ShapeMismatchError(
            f"hidden width {hidden.shape[-1]} vs head width {head.in_features}"
        )
    return head(hidden)


def gather_positions(states: Tensor, batch_index: Tensor, position_index: Tensor) -> Tensor:
    """Rows of ``states`` at (batch, position) pairs; shape (k, hidden)."""
    return states[batch_index, position_index]


def uniform_layer_selection(teacher_layers: int, student_layers: int) -> list[int]:
    """Evenly spaced teacher layer indices (0-based), last layer included."""
    if student_layers < 1 or teacher_layers < 1:
        raise BadSelectionError("layer counts must be positive")
    return [round((j + 1) * teacher_layers / student_layers) - 1 for j in range(student_layers)]


def init_student_from_teacher(
    teacher: Encoder,
    student_config: ModelConfig,
    layer_selection: list[int] | None = None,
    seed: int | None = None,
) -> Encoder:
    """Structure a student from a teacher.

    With matching widths the selected teacher layers, embeddings, and head are
    copied; otherwise only the layer count transfers and the student starts
    from fresh initialization (distillation bridges the width gap).
    """
    t_cfg = teacher.config
    selection = layer_selection
    if selection is None:
        selection = uniform_layer_selection(t_cfg.layers, student_config.layers)
    if len(selection) != student_config.layers:
        raise BadSelectionError(
            f"need {student_config.layers} teacher layers, got {len(selection)}"
        )
    for idx in selection:
        if not 0 <= idx < t_cfg.layers:
            raise BadSelectionError(f"teacher layer index {idx} out of range")

    student = Encoder(student_config, seed=seed)
    same_shape = all(
        getattr(t_cfg, f) == getattr(student_config, f)
        for f in ("hidden", "ffn", "heads", "vocab_size", "max_len", "num_marks")
    )
    if same_shape:
        with torch.no_grad():
            student.token_embedding.load_state_dict(teacher.token_embedding.state_dict())
            student.position_embedding.load_state_dict(teacher.position_embedding.state_dict())
            student.pmp_head.load_state_dict(teacher.pmp_head.state_dict())
            for j, t_idx in enumerate(selection):
                student.layers[j].load_state_dict(teacher.layers[t_idx].state_dict())
    return student


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def parameter_count(config: ModelConfig) -> int:
    """Parameter total computed from shapes alone (no allocation)."""
    d, f = config.hidden, config.ffn
    embeddings = config.vocab_size * d + config.max_len * d
    per_layer = (
        4 * (d * d + d)      # q, k, v, o
        + (d * f + f) + (f * d + d)  # ffn in/out
        + 2 * (2 * d)        # the two layer norms
    )
    head = config.num_marks * d + config.num_marks
    return embeddings + config.layers * per_layer + head


# --- checkpoints -------------------------------------------------------------


def save_checkpoint(
    path: Path | str,
    encoder: Encoder,
    step: int = 0,
    history: list[dict] | None = None,
    mark_names: list[str] | None = None,
    vocab: dict[str, int] | None = None,
    extra: dict | None = None,
) -> Path:
    """Write a checkpoint directory: JSON manifest plus named-array container."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "model_config": encoder.config.to_dict(),
        "step": step,
        "history": history or [],
        "marks": mark_names or [],
        "vocab": vocab or {},
        "extra": extra or {},
    }
    (path / "manifest.json").write_text(
        json.dumps(manifest, ensure_ascii=False), encoding="utf-8"
    )
    arrays = {k: v.detach().cpu().numpy() for k, v in encoder.state_dict().items()}
    np.savez(path / "weights.npz", **arrays)
    return path


def load_checkpoint(path: Path | str) -> tuple[Encoder, dict]:
    """Reload a checkpoint bit-exactly; returns (encoder, manifest)."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    config = ModelConfig.from_dict(manifest["model_config"])
    encoder = Encoder(config)
    with np.load(path / "weights.npz") as arrays:
        state = {k: torch.from_numpy(arrays[k].copy()) for k in arrays.files}
    encoder.load_state_dict(state, strict=True)
    return encoder, manifest


def resize_head(encoder: Encoder, mark_names_old: list[str], mark_names_new: list[str]) -> None:
    """Rebuild the mark head for a new label set, copying rows shared by name."""
    old = encoder.pmp_head
    new = nn.Linear(encoder.config.hidden, len(mark_names_new))
    _init_module(new)
    with torch.no_grad():
        for i, name in enumerate(mark_names_new):
            if name in mark_names_old:
                j = mark_names_old.index(name)
                new.weight[i] = old.weight[j]
                new.bias[i] = old.bias[j]
    encoder.pmp_head = new
    encoder.config = replace(encoder.config, num_marks=len(mark_names_new))

"""Punctuation mark sets: the label alphabet for every stage.

A mark set always contains ``O`` ("no punctuation after this token") plus a
configurable list of named marks, each mapped to exactly one surface
character.  The fine-tuning default is comma/period/colon; pre-training may
add question.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import UnknownMarkError

O_LABEL = "O"

# Canonical full-width surfaces for the supported mark names.
SURFACES = {
    "COMMA": "，",     # ，
    "PERIOD": "。",    # 。
    "COLON": "：",     # ：
    "QUESTION": "？",  # ？
}


@dataclass(frozen=True)
class MarkSet:
    """Ordered label alphabet: ``O`` first, then the active marks."""

    names: tuple[str, ...]
    surfaces: dict[str, str] = field(repr=False)

    def __post_init__(self) -> None:
        if not self.names or self.names[0] != O_LABEL:
            raise UnknownMarkError("mark set must start with O")
        if len(set(self.names)) != len(self.names):
            raise UnknownMarkError(f"duplicate mark names: {self.names}")
        for name in self.names[1:]:
            char = self.surfaces.get(name)
            if char is None or len(char) != 1:
                raise UnknownMarkError(f"mark {name!r} needs a single surface character")
        if len(set(self.surfaces.values())) != len(self.surfaces):
            raise UnknownMarkError("surface characters must be distinct")

    @classmethod
    def from_names(cls, names: list[str] | tuple[str, ...] | str) -> "MarkSet":
        """Build a set from names like ``["comma", "period"]`` or ``"comma,period"``."""
        if isinstance(names, str):
            names = [n for n in names.split(",") if n]
        upper = [n.upper() for n in names]
        if O_LABEL in upper:
            upper.remove(O_LABEL)
        for name in upper:
            if name not in SURFACES:
                raise UnknownMarkError(f"unknown mark name {name!r}")
        return cls((O_LABEL, *upper), {n: SURFACES[n] for n in upper})

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownMarkError(f"label {name!r} not in mark set {self.names}") from None

    def surface_of(self, name: str) -> str:
        if name == O_LABEL or name not in self.surfaces:
            raise UnknownMarkError(f"no surface character for label {name!r}")
        return self.surfaces[name]

    def label_of_surface(self, char: str) -> str | None:
        for name, surface in self.surfaces.items():
            if surface == char:
                return name
        return None

    @property
    def surface_chars(self) -> frozenset[str]:
        return frozenset(self.surfaces.values())

    @property
    def mark_names(self) -> tuple[str, ...]:
        """The non-O class names, in set order."""
        return self.names[1:]


def default_finetune_marks() -> MarkSet:
    return MarkSet.from_names(["comma", "period", "colon"])


def default_pretrain_marks() -> MarkSet:
    # Same as fine-tuning by default; question can be added via configuration.
    return default_finetune_marks()

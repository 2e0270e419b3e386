"""Exception types shared across the package."""
from __future__ import annotations


class PunctuatorError(Exception):
    """Base class for all package errors."""


class EmptyAfterStripError(PunctuatorError):
    """No tokens remain after removing punctuation."""


class AdjacentMarksError(PunctuatorError):
    """Two mark characters are adjacent and the strict policy is active."""


class BadRatiosError(PunctuatorError):
    """Split or class ratios are malformed."""


class UnknownMarkError(PunctuatorError):
    """A label is outside the active mark set."""


class IdOutOfRangeError(PunctuatorError):
    """A token id is not below the vocabulary size."""


class ShapeMismatchError(PunctuatorError):
    """Tensor shapes are inconsistent with the declared contract."""


class BadSelectionError(PunctuatorError):
    """Teacher layer selection has the wrong count or out-of-range indices."""


class TooShortError(PunctuatorError):
    """Sequence too short to select at least one mask position."""


class EmptyBatchError(PunctuatorError):
    """A loss was asked for zero samples."""


class TooLongAfterSlotsError(PunctuatorError):
    """Slot insertion would exceed the maximum sequence length."""


class LengthMismatchError(PunctuatorError):
    """Prediction and gold sequences do not align."""


class ConfigMismatchError(PunctuatorError):
    """A configuration contradicts a checkpoint, layer map, or prior run."""


class EmptyInputError(PunctuatorError):
    """Inference called on text that is empty after stripping."""

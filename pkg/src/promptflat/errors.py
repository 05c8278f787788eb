"""Exception hierarchy.

The CLI maps these to exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3. Everything raised on purpose by this package derives
from PromptFlatError.
"""

from __future__ import annotations


class PromptFlatError(Exception):
    pass


class UsageError(PromptFlatError):
    """Bad command line or bad run configuration."""


class DataError(PromptFlatError):
    """Malformed or inconsistent input data."""


class NumericError(PromptFlatError):
    """A computation produced or would produce an invalid number."""


class ParseError(DataError):
    """Unparseable JSON / JSONL content."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyText(DataError):
    def __init__(self, message: str = "empty text", line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownLabel(DataError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateId(DataError):
    pass


class FormatError(DataError):
    """Weight file does not follow the PFLT1 layout."""


class IoError(DataError):
    """Reading or writing an artifact file failed."""


class ShapeMismatch(DataError):
    """Weight file tensors disagree with the requested model configuration."""


class DimensionMismatch(DataError):
    pass


class MissingLabel(DataError):
    """A verbalizer label has no training example."""


class EmptyDataset(DataError):
    pass


class EmptyPerturbationSet(DataError):
    pass


class EmptyGrid(DataError):
    pass


class NotEnoughOrderings(DataError):
    pass


class InstructionTooShort(DataError):
    pass


class SequenceTooLong(DataError):
    pass


class UnknownLabelToken(DataError):
    """A verbalizer token cannot be represented in the backend vocabulary."""


class NonFiniteLoss(NumericError):
    pass


class NonFiniteDivergence(NumericError):
    pass


class NonFiniteScore(NumericError):
    pass


class NonFiniteGradient(NumericError):
    pass


class DegenerateInput(NumericError):
    """Statistic undefined for this input (constant vector, too few points)."""


class TooManyParamsForFiniteDiff(NumericError):
    pass


class PrefixTooLargeForFiniteDiff(NumericError):
    pass


class BadK(NumericError):
    pass


class NegativeRelevance(NumericError):
    pass


class ZeroBest(NumericError):
    pass


class SelectedExceedsBest(NumericError):
    pass


class PreconditionNotMet(NumericError):
    pass


class LengthMismatch(NumericError):
    pass

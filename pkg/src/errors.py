'''
@file: errors.py
@author: airside-tech

Exception hierarchy shared by every stage of the screening pipeline.
The CLI maps any PipelineError to exit code 1.

'''


class PipelineError(Exception):
    """Base class for every failure raised by the pipeline."""


class SchemaError(PipelineError):
    """Input CSV is missing required columns."""


class RowFormatError(PipelineError):
    """A data row could not be parsed. Carries the 1-based file line number."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class RecordValidationError(PipelineError, ValueError):
    """A parsed record violates a domain invariant (e.g. negative amount)."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class ShapeError(PipelineError, ValueError):
    """Operand dimensions do not agree."""


class ProtocolError(PipelineError):
    """Chronology or linkage contract was broken (non-consecutive windows, too few snapshots)."""


class ConsistencyError(PipelineError):
    """Internal bookkeeping disagrees (entity missing from node index, misaligned views)."""


class TapeStateError(PipelineError):
    """Backward requested without a matching recorded forward pass."""


class NonFiniteError(PipelineError):
    """A gradient or loss became NaN/inf. `diagnostics` names where."""

    def __init__(self, message: str, diagnostics: dict | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BatchError(PipelineError):
    """Contrastive batch cannot provide negatives."""


class ConfigError(PipelineError, ValueError):
    """Configuration value out of range or unknown tag."""


class GenerationError(PipelineError):
    """Synthetic corpus configuration is infeasible."""


class TrainingAbortedError(PipelineError):
    """Training stopped on a non-finite loss."""

    def __init__(self, message: str, diagnostics: dict | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or {}

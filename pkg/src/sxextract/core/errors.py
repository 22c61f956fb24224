"""Error hierarchy for sxextract.

Services raise these; only the CLI turns them into exit codes.
"""

from __future__ import annotations

from collections.abc import Sequence

__all__ = [
    "SxError",
    "ShapeError",
    "ConfigError",
    "CorpusFormatError",
    "AlignmentError",
    "NumericalError",
    "CheckpointError",
    "VerificationError",
    "OntologyError",
    "TagError",
]


class SxError(Exception):
    """Base error for every failure raised by the package."""

    def __init__(self, message: str, component: str | None = None) -> None:
        self.message = message
        self.component = component
        super().__init__(self.message)


class ShapeError(SxError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = "") -> None:
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = " vs ".join(str(s) for s in self.shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message, component="nn")


class ConfigError(SxError):
    """Invalid configuration value or unknown configuration key."""

    def __init__(self, message: str) -> None:
        super().__init__(message, component="config")


class CorpusFormatError(SxError):
    """A corpus or ontology file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None) -> None:
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message, component="corpus")


class AlignmentError(SxError):
    """Parallel transcripts cannot be aligned turn by turn."""

    def __init__(self, message: str) -> None:
        super().__init__(message, component="corpus")


class NumericalError(SxError):
    """A loss or gradient became non-finite."""

    def __init__(
        self,
        message: str,
        step: int | None = None,
        unit_id: str | None = None,
        parameter: str | None = None,
    ) -> None:
        self.step = step
        self.unit_id = unit_id
        self.parameter = parameter
        super().__init__(message, component="training")


class CheckpointError(SxError):
    """A checkpoint is malformed or incompatible with the receiving model."""

    def __init__(self, message: str) -> None:
        super().__init__(message, component="checkpoint")


class VerificationError(SxError):
    """An oracle suite failed."""

    def __init__(self, message: str, failures: Sequence[str] = ()) -> None:
        self.failures = list(failures)
        super().__init__(message, component="verify")


class OntologyError(SxError):
    """A symptom id is not part of the ontology, or the ontology is inconsistent."""

    def __init__(self, message: str) -> None:
        super().__init__(message, component="ontology")


class TagError(SxError):
    """A tag index lies outside the tag set in use."""

    def __init__(self, message: str) -> None:
        super().__init__(message, component="crf")

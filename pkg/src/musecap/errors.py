"""Exception hierarchy for musecap.

Every error carries the exit code the command-line interface maps it to:
2 for configuration and validation problems, 3 for runtime and numeric
failures, 4 for failures of an external chat service.
"""


class MusecapError(Exception):
    """Base class for all musecap errors."""

    exit_code: int = 3


class ConfigError(MusecapError):
    """Invalid or inconsistent run configuration."""

    exit_code = 2

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class ValidationError(MusecapError):
    """Input data violates a documented invariant."""

    exit_code = 2

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ParseError(ValidationError):
    """Input file could not be parsed."""


class InvalidInputError(MusecapError):
    """Audio or text input that cannot be processed."""


class ShapeError(MusecapError):
    """Tensor shapes do not agree."""


class NumericalError(MusecapError):
    """Non-finite values appeared in a computation."""


class AudioReadError(MusecapError):
    """Audio file could not be read."""


class CheckpointError(MusecapError):
    """Checkpoint file is missing or malformed."""


class MetricError(MusecapError):
    """A metric backend (e.g. an embedder) failed."""


class ChainError(MusecapError):
    """The external chat service failed or returned nothing usable."""

    exit_code = 4


class TransportError(ChainError):
    """Retryable transport failure talking to the chat service."""


class JudgeParseError(ChainError):
    """The judge response did not contain a usable verdict."""

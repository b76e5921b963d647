"""Exception taxonomy shared across the package.

Every error raised on purpose derives from NutricastError so the CLI can
turn any failure into a one-line diagnostic instead of a stack trace.
"""


class NutricastError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(NutricastError):
    """Array dimensions do not satisfy an operation's contract."""


class DomainError(NutricastError):
    """A value is outside the mathematical domain of an operation."""


class ConfigError(NutricastError):
    """A configuration object violates its invariants."""


class ContractError(NutricastError):
    """A caller violated an API precondition."""


class IngestError(NutricastError):
    """A manifest or input file failed structural validation."""


class StaleCacheError(NutricastError):
    """A precomputed embedding cache no longer matches its encoders."""


class CheckpointError(NutricastError):
    """A checkpoint file is corrupt, truncated, or version-incompatible."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UndefinedMetricError(NutricastError):
    """A metric is undefined for the given inputs (e.g. one-class AUC)."""


class TrainingDiverged(NutricastError):
    """Training produced a non-finite loss."""

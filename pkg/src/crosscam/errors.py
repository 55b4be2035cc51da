"""Exception hierarchy shared by all crosscam modules.

Every error raised by the package derives from CrosscamError so callers
(and the CLI) can distinguish our failures from programming errors.
"""

from __future__ import annotations


class CrosscamError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(CrosscamError):
    """A precondition or invariant of an operation was violated."""


class FormatError(CrosscamError):
    """A file could not be parsed.

    Carries enough context to name the offending record.
    """

    def __init__(self, path: str, line: int | None, reason: str):
        self.path = str(path)
        self.line = line
        self.reason = reason
        where = f"{self.path}" if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {reason}")


class VersionError(FormatError):
    """A file declared a format version this code does not understand."""


class ConfigError(CrosscamError):
    """A configuration value or key is invalid."""


class AffinityError(CrosscamError):
    """The affinity matrix cannot be built or queried as requested."""


class SelectionError(CrosscamError):
    """A per-anchor sample selection could not be satisfied.

    Raised by positive/negative selection; the trainer catches this and
    skips the anchor, it is never fatal during training.
    """


class TrainingError(CrosscamError):
    """Training hit a non-recoverable numeric problem (NaN/Inf)."""


class EvaluationError(CrosscamError):
    """Retrieval evaluation is impossible (e.g. no query has a match)."""

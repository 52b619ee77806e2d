"""Exception hierarchy for pixcorr.

Every error raised on purpose by the library derives from ``PixcorrError`` so
the CLI can translate it into an exit code without catching unrelated bugs.
"""

from __future__ import annotations


class PixcorrError(Exception):
    """Base class for all pixcorr errors."""


class DimensionError(PixcorrError, ValueError):
    """A tensor or array shape violates an operation's contract."""


class ConfigurationError(PixcorrError):
    """Invalid configuration value or a missing prerequisite artifact."""


class FormatError(PixcorrError):
    """A file on disk is corrupt, truncated or of the wrong kind."""


class DivergenceError(PixcorrError):
    """Training produced a non-finite loss."""

    def __init__(self, phase: str, step: int, detail: str = "") -> None:
        self.phase = phase
        self.step = step
        message = f"{phase}: loss diverged at step {step}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class ClassNotPredictedError(PixcorrError):
    """An attention visualization was requested for a class no pixel predicts."""

    def __init__(self, class_index: int) -> None:
        self.class_index = class_index
        super().__init__(f"class not predicted: {class_index}")

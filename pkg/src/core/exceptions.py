"""
Exception hierarchy shared by every gdgen module.

The CLI maps these onto process exit codes (see src/cli.py).
"""

from typing import Optional


class GdgenError(Exception):
    """Base class for all domain errors."""


class ContractViolation(GdgenError, ValueError):
    """A caller broke a precondition: wrong shapes, invalid arguments."""


class NumericFailure(GdgenError, ArithmeticError):
    """A computation produced non-finite values."""

    def __init__(
        self,
        op: str,
        message: str = "",
        index: Optional[int] = None,
        term: Optional[str] = None,
        frame: Optional[int] = None,
    ):
        self.op = op
        self.index = index
        self.term = term
        self.frame = frame
        details = [f"op={op}"]
        if term is not None:
            details.append(f"term={term}")
        if index is not None:
            details.append(f"index={index}")
        if frame is not None:
            details.append(f"frame={frame}")
        text = message or "non-finite value"
        super().__init__(f"{text} ({', '.join(details)})")


class SceneParseError(GdgenError):
    """A scene manifest or point file could not be read."""

    def __init__(self, path, message: str, line: Optional[int] = None):
        self.path = str(path)
        self.line = line
        location = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{location}: {message}")


class ConfigError(GdgenError):
    """A run config failed validation; `field` is the dotted path of the culprit."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class CheckpointError(GdgenError):
    """A checkpoint is missing, corrupted or lacks required keys."""


class TrainingAborted(GdgenError):
    """Training hit a non-finite loss; the last good parameters were saved."""

    def __init__(self, term: str, epoch: int, checkpoint_path: Optional[str] = None):
        self.term = term
        self.epoch = epoch
        self.checkpoint_path = checkpoint_path
        where = f", last good checkpoint at {checkpoint_path}" if checkpoint_path else ""
        super().__init__(f"non-finite loss term '{term}' at epoch {epoch}{where}")

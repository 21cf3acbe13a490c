"""Exception hierarchy shared by all roadcell modules."""

from __future__ import annotations


class RoadcellError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(RoadcellError):
    """Bad configuration or command-line usage."""


class DataValidationError(RoadcellError):
    """Input data violates a domain invariant."""


class ParseError(DataValidationError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class UnknownDetectorError(DataValidationError):
    def __init__(self, detector_id: str, detail: str = ""):
        msg = f"unknown or missing detector {detector_id!r}"
        super().__init__(f"{msg}: {detail}" if detail else msg)
        self.detector_id = detector_id


class CalendarMismatchError(DataValidationError):
    """Sites of one corridor do not cover the same slots."""


class TrainingDivergedError(RoadcellError):
    def __init__(self, epoch: int, loss: float, context: str = ""):
        msg = f"training loss became non-finite ({loss}) at epoch {epoch}"
        super().__init__(f"{context}: {msg}" if context else msg)
        self.epoch = epoch
        self.loss = loss

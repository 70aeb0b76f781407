"""Exception hierarchy.

``DataError`` subclasses describe bad input (exit code 2 from the CLI),
``UsageError`` bad configuration (exit code 1) and ``InvariantViolation``
an internal bug (exit code 3).
"""

from __future__ import annotations


class GapmarkError(Exception):
    """Base class for every error raised by this package."""


class UsageError(GapmarkError):
    pass


class InvalidConfig(UsageError):
    pass


class InvalidRule(UsageError):
    pass


class DataError(GapmarkError):
    pass


class InvariantViolation(GapmarkError):
    """An internal consistency check failed; this is a bug, not bad input."""


class MalformedLine(DataError):
    def __init__(self, line_no: int | None, reason: str, line: str = "") -> None:
        self.line_no = line_no
        self.reason = reason
        self.line = line
        where = f"line {line_no}" if line_no is not None else "line"
        super().__init__(f"{where}: {reason}: {line!r}")


class UnmatchedBegin(DataError):
    pass


class UnmatchedEnd(DataError):
    pass


class OverlappingIntervals(DataError):
    pass


class EmptyStream(DataError):
    pass


class NonPositiveInterval(DataError):
    pass


class TooFewEvents(DataError):
    pass


class TooManySensors(DataError):
    pass


class EmptySeries(DataError):
    pass


class AllSamplesNull(DataError):
    pass


class NullLabelPresent(DataError):
    pass


class LabelCollision(DataError):
    pass


class UnknownLabelToken(DataError):
    pass


class EmptyObservations(DataError):
    pass


class ImpossibleSequence(DataError):
    pass


class InstanceTooLarge(DataError):
    pass


class CorruptModel(DataError):
    pass


class VersionMismatch(DataError):
    pass


class UnknownActivity(DataError):
    pass


class LengthMismatch(DataError):
    pass

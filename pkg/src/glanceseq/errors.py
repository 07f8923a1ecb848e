"""Exception types raised across the package."""


class GlanceSeqError(Exception):
    """Base class for all package errors."""


class MalformedEpoch(GlanceSeqError, ValueError):
    """An epoch's event list violates the event-encoding invariants."""

    def __init__(self, message, reason="malformed"):
        super().__init__(message)
        self.reason = reason


class MalformedStream(GlanceSeqError, ValueError):
    pass


class EmptyInput(GlanceSeqError, ValueError):
    pass


class EmptyClass(EmptyInput):
    pass


class EmptyMinority(EmptyInput):
    pass


class NonFiniteLikelihood(GlanceSeqError, FloatingPointError):
    pass


class ParseError(GlanceSeqError, ValueError):
    """A CSV row could not be parsed; carries file/row context."""

    def __init__(self, message, path=None, row=None, token=None):
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.row = row
        self.token = token


class DuplicateEpoch(ParseError):
    pass


class DegenerateSplit(GlanceSeqError, ValueError):
    pass

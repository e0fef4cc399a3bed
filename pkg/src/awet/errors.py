"""Exception hierarchy shared by all modules."""


class AwetError(Exception):
    """Base class for every error raised by this package."""


class RejectedInputError(AwetError, ValueError):
    """Input with the wrong shape, range or type."""


class NumericOverflowError(AwetError, FloatingPointError):
    """A non-finite value appeared in a forward or backward pass."""

    def __init__(self, message: str, layer: int | None = None, diagnostics: dict | None = None):
        super().__init__(message)
        self.layer = layer
        self.diagnostics = diagnostics or {}


class GenerationFailureError(AwetError):
    """The scripted expert could not produce enough successful episodes."""


class SignViolationError(AwetError):
    """Expert and agent rewards do not share a single sign."""

    def __init__(self, message: str, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class EmptyBufferError(AwetError):
    pass


class MissingAnnotationError(AwetError):
    """Expert transitions lack Monte-Carlo return annotations."""


class InsufficientCorpusError(AwetError):
    pass


class DegenerateAdvantageError(AwetError, ZeroDivisionError):
    pass


class UndefinedTestError(AwetError):
    """Statistical test undefined, e.g. every paired difference is zero."""


class AlignmentError(AwetError):
    """Metrics files evaluated on different episode grids."""

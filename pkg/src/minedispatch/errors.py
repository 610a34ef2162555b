"""Exception types shared across the package."""


class MineDispatchError(Exception):
    """Base class for all package errors."""


class ParseError(MineDispatchError):
    """A scenario document could not be parsed."""


class ValidationError(MineDispatchError):
    """A scenario violates one of its invariants.

    ``field`` names the offending ScenarioConfig field.
    """

    def __init__(self, field, message=""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)


class IllegalAction(MineDispatchError):
    """The chosen target is masked out for the pending request."""


class EpisodeOver(MineDispatchError):
    """``step`` was called after the episode ended."""


class EpisodeNotFinished(MineDispatchError):
    """Metrics were requested before the episode ended."""


class ShapeMismatch(MineDispatchError):
    """Array or checkpoint dimensions do not match."""


class UnsealedBuffer(MineDispatchError):
    """Advantages were requested from a buffer that is still open."""

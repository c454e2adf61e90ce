"""Exception hierarchy for the memweave engine."""


class MemweaveError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(MemweaveError):
    """A value is incompatible with the graph configuration (e.g. embedding dimension)."""


class InvalidArgumentError(MemweaveError, ValueError):
    """An argument violates an operation precondition."""


class NotFoundError(MemweaveError, LookupError):
    """A referenced node or clip does not exist."""


class ClipConflictError(MemweaveError):
    """A clip index was already ingested."""


class SnapshotFormatError(MemweaveError):
    """A persisted graph stream is malformed or version-incompatible.

    Carries the byte offset and field name where parsing failed.
    """

    def __init__(self, message: str, *, offset: int | None = None, field: str | None = None):
        detail = message
        if field is not None:
            detail += f" (field: {field})"
        if offset is not None:
            detail += f" (offset: {offset})"
        super().__init__(detail)
        self.offset = offset
        self.field = field


class EntryFormatError(MemweaveError):
    """A memory entry violates the expected text format."""


class ActionParseError(MemweaveError):
    """Assistant output contains no recognizable action token."""


class JudgeProtocolError(MemweaveError):
    """An external judge returned something other than the Yes/No protocol tokens."""


class PolicySessionError(MemweaveError):
    """Policy transport failed mid-session; carries the partial trajectory."""

    def __init__(self, message: str, partial_trajectory=None):
        super().__init__(message)
        self.partial_trajectory = partial_trajectory

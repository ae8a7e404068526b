"""Exception types shared across the package."""


class ConvGraphError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ConvGraphError, ValueError):
    """A caller violated an operation's precondition."""


class InvalidStateError(ConvGraphError, RuntimeError):
    """Internal state does not permit the requested operation."""


class GraphParseError(ConvGraphError, ValueError):
    """A serialized graph could not be parsed.

    ``offset`` is the byte offset of the first problem when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class MissingEmbeddingError(ConvGraphError, KeyError):
    """The embedding file has no vector for the requested key."""


class TrainingAbort(ConvGraphError, RuntimeError):
    """Training hit a non-finite loss; carries diagnostics for the dump."""

    def __init__(self, message: str, step: int, example_id: str, param_norms: dict):
        super().__init__(message)
        self.step = step
        self.example_id = example_id
        self.param_norms = param_norms

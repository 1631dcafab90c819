"""Exception types shared across the toolkit."""


class CfexError(Exception):
    pass


class FormatError(CfexError):
    """Malformed or corrupt on-disk artifact.

    ``offset`` is the byte position at which the problem was detected,
    when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(CfexError):
    """Inputs violate a documented precondition or invariant."""


class EmptySelectionError(ValidationError):
    """A subset-selection policy matched no images."""


class DivergenceError(CfexError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch

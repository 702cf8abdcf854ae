"""Exception hierarchy. The CLI maps ValidationError to exit 2 and DataError to exit 3."""


class EmoqError(Exception):
    pass


class ValidationError(EmoqError, ValueError):
    """Bad arguments or violated preconditions."""


class DataError(EmoqError):
    """Malformed or degenerate input data."""


class FormatError(DataError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class ShapeError(ValidationError):
    pass


class QuotaError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class ClassCoverageError(ValidationError):
    pass


class NormalizationError(ValidationError):
    pass


class PreconditionError(ValidationError):
    pass

class InvalidInputError(ValueError):
    """Raised when arguments violate an operation's preconditions."""


class SingularMatrixError(InvalidInputError):
    """A matrix that must be positive definite is not (regularize it first)."""


class UndefinedStatisticError(InvalidInputError):
    """The requested statistic is undefined for the given data (e.g. constant input)."""


class FileFormatError(ValueError):
    """Base class for malformed binary/text files."""


class BadMagicError(FileFormatError):
    pass


class VersionMismatchError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass

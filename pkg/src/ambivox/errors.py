"""Exception types shared across the package.

Each maps to one CLI exit code: InvalidInput/ParseError -> 2,
MissingAsset -> 3, DivergenceError/CheckpointError -> 4.
"""


class AmbivoxError(Exception):
    """Base class for package errors."""

    exit_code = 1


class InvalidInput(AmbivoxError):
    """A precondition on user-supplied data was violated."""

    exit_code = 2


class ParseError(AmbivoxError):
    """A structured text file could not be parsed."""

    exit_code = 2

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingAsset(AmbivoxError):
    """A referenced file does not exist."""

    exit_code = 3

    def __init__(self, path):
        super().__init__(f"missing asset: {path}")
        self.path = str(path)


class DivergenceError(AmbivoxError):
    """Training produced a non-finite loss."""

    exit_code = 4

    def __init__(self, epoch, batch, message="non-finite loss"):
        super().__init__(f"{message} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class CheckpointError(AmbivoxError):
    """A checkpoint or train-state file is missing, corrupt or incompatible."""

    exit_code = 4

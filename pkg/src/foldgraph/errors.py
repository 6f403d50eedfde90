"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An argument lies outside the operation's domain."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed (factorization, convergence)."""


class FileFormatError(ValueError):
    """A text file is malformed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class CheckpointError(ValueError):
    """A checkpoint container is corrupt or has the wrong version."""

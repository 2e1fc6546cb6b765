"""Exception hierarchy shared by all pnfrec modules."""


class PNFRecError(Exception):
    """Base class for all package errors."""


class ShapeError(PNFRecError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(PNFRecError, ValueError):
    pass


class DataError(PNFRecError):
    """Problem with input data (CLI exit code 3)."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyInputError(DataError):
    pass


class SplitError(DataError):
    pass


class InferenceError(PNFRecError):
    pass


class EvaluationError(PNFRecError):
    pass


class DivergenceError(PNFRecError, FloatingPointError):
    """A loss term became non-finite (CLI exit code 4)."""


class CheckpointError(PNFRecError):
    pass

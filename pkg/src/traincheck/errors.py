"""Exception types shared across the package."""


class TraincheckError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(TraincheckError, ValueError):
    """Operands have incompatible shapes; message names both shapes."""


class InvalidParameterError(TraincheckError, ValueError):
    """A numeric parameter is outside its valid domain."""


class EmptyTensorError(TraincheckError, ValueError):
    """An operation that needs data received an empty tensor."""


class DataFormatError(TraincheckError, ValueError):
    """A data file could not be parsed; message carries row/column context."""


class InsufficientClassRowsError(TraincheckError, ValueError):
    """A class has fewer rows than a stratified sample requires."""


class InapplicableFaultError(TraincheckError, ValueError):
    """The requested fault cannot be injected into the given base program."""


class ConfigError(TraincheckError, ValueError):
    """A run configuration is malformed or carries unknown keys."""


class BatchSizeError(TraincheckError, ValueError):
    """A layer received a batch too small for its statistics."""

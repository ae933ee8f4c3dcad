"""Exception types shared across the package."""


class HadamardCNNError(Exception):
    """Base class for all package errors."""


class DimensionError(HadamardCNNError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(HadamardCNNError, ValueError):
    """A layer, model or run configuration is invalid."""


class DataError(HadamardCNNError, ValueError):
    """Input data (labels, values) is out of the accepted range."""


class DataFormatError(DataError):
    """A dataset file is malformed or truncated."""


class IntegrityError(HadamardCNNError):
    """Downloaded content failed checksum verification."""


class AvailabilityError(HadamardCNNError):
    """Required data is missing and cannot be fetched."""


class DivergenceError(HadamardCNNError, FloatingPointError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report

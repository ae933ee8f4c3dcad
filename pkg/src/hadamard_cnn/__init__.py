"""CNN feature extraction in the Walsh-Hadamard domain, with a numpy autodiff core."""

from .errors import (
    AvailabilityError,
    ConfigurationError,
    DataError,
    DataFormatError,
    DimensionError,
    DivergenceError,
    HadamardCNNError,
    IntegrityError,
)
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

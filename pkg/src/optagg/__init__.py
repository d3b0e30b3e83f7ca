"""Optimal convex aggregation of feature attributions."""
from .core import (AttributionMap, AttributionStack, Shape, SimplexWeights,
                   aggregate_linear, normalize)
from .errors import (DegenerateCorrelation, FormatError, InvalidInput, ModelUnavailable,
                     ProtocolError, Unsupported)
from .rng import Rng

__version__ = "0.1.0"

__all__ = [
    "AttributionMap", "AttributionStack", "Shape", "SimplexWeights", "aggregate_linear",
    "normalize", "Rng", "InvalidInput", "Unsupported", "ModelUnavailable", "ProtocolError",
    "DegenerateCorrelation", "FormatError", "__version__",
]

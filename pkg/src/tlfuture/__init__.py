"""Segment-and-measure now/future prediction for time-lapsed sky videos."""
from .tensor import Tensor, backward

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "__version__"]

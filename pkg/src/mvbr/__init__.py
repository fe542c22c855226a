"""Multiview attention fusion for multilabel behavior classification.

Desk-scale pipeline: orthonormal DCT video transforms, per-modality
three-view softmax attention fusion, additive bimodal/trimodal fusion, a
small transformer encoder head, BCE training with SGD/Adam and early
stopping, and multilabel average-precision evaluation. All numerics run in
float64 on a from-scratch reverse-mode autodiff core.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Variable  # noqa: F401
from .errors import (  # noqa: F401
    FormatError,
    InsufficientFramesError,
    NumericError,
    ShapeError,
    ValidationError,
)

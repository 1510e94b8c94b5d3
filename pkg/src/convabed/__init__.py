"""Checksum-based error detection for int8 convolutions."""

from .abed import (
    FilterChecksum,
    InputChecksum,
    PrecisionPlan,
    Scheme,
    Status,
    VerifyOutcome,
    plan_precision,
    verify_layer,
)
from .convolution import EpilogParams, Matrix, conv_direct, epilog
from .tensor import ElemKind, LayerShape, Tensor4D

__version__ = "0.1.0"

__all__ = [
    "ElemKind",
    "EpilogParams",
    "FilterChecksum",
    "InputChecksum",
    "LayerShape",
    "Matrix",
    "PrecisionPlan",
    "Scheme",
    "Status",
    "Tensor4D",
    "VerifyOutcome",
    "conv_direct",
    "epilog",
    "plan_precision",
    "verify_layer",
]

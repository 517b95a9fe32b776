"""Obfuscated-tunnel graphs: construction, classical attacks and spectral checks."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConditioningFailed,
    ConstructionFailed,
    ConstructionViolation,
    InstanceTooLarge,
    InvalidInput,
    InvalidParameter,
    NumericFailure,
    ParseError,
    PredictionMismatch,
    TunnelError,
)
from .graph_core import BuildParams, InstanceLayout, MultiGraph, TreeSpec, build_instance  # noqa: E402

__all__ = [
    "BuildParams",
    "ConditioningFailed",
    "ConstructionFailed",
    "ConstructionViolation",
    "InstanceLayout",
    "InstanceTooLarge",
    "InvalidInput",
    "InvalidParameter",
    "MultiGraph",
    "NumericFailure",
    "ParseError",
    "PredictionMismatch",
    "TreeSpec",
    "TunnelError",
    "build_instance",
]

"""Tensor generalized canonical correlation analysis with CP-structured canonical vectors."""

from .model import BlockSet, ConfigError, SolverOptions, full_design, preprocess
from .solver import FitResult, NumericalAbort, bca_fit, fit, multi_start_fit, prepare
from .tensor import CpVector

__all__ = [
    "BlockSet",
    "ConfigError",
    "CpVector",
    "FitResult",
    "NumericalAbort",
    "SolverOptions",
    "bca_fit",
    "fit",
    "full_design",
    "multi_start_fit",
    "prepare",
    "preprocess",
]
__version__ = "0.1.0"

"""Core modules for Distill Tools"""

from .exceptions import (
    ConfigError,
    ConvergenceError,
    DegenerateError,
    DistillToolsError,
    GridError,
    NumericalError,
    PhysicalityError,
    TruncationError,
)
from .fock import DensityOperator, FockVector, LossChannel

__all__ = [
    'ConfigError',
    'ConvergenceError',
    'DegenerateError',
    'DensityOperator',
    'DistillToolsError',
    'FockVector',
    'GridError',
    'LossChannel',
    'NumericalError',
    'PhysicalityError',
    'TruncationError',
]

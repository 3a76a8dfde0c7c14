"""
Distill Tools
=============
Simulation and analysis toolkit for photon-subtraction squeezing distillation
with pulsed two-mode squeezed light.
"""

__version__ = "0.1.0"
__author__ = "Distill Tools Team"

from .core.config import RunConfig
from .core.fock import DensityOperator, FockVector

__all__ = ['DensityOperator', 'FockVector', 'RunConfig']

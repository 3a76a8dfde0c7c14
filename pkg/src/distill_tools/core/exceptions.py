"""Exception hierarchy for Distill Tools"""


class DistillToolsError(Exception):
    """Base class for all toolkit errors"""


class ConfigError(DistillToolsError, ValueError):
    """Invalid run configuration; the message names the offending field"""


class NumericalError(DistillToolsError, RuntimeError):
    """A computation could not produce a trustworthy result"""


class TruncationError(NumericalError):
    """Fock-space cutoff too small for the requested state"""


class DegenerateError(NumericalError):
    """Zero-probability conditioning or degenerate input data"""


class ConvergenceError(NumericalError):
    """Iterative reconstruction did not converge"""


class GridError(NumericalError):
    """Quadrature or phase-space grid too small or too coarse"""


class PhysicalityError(NumericalError):
    """Density operator has eigenvalues below the clipping tolerance"""

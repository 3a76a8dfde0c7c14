"""Distill Tools Modules"""

from .pdc_model import SchmidtSpectrum
from .distillation import EfficiencyBudget, MixtureWeights, TapConfig
from .homodyne import CumulantSet, MarginalSampler, QuadratureAxis, QuadratureRecord
from .tomography import BinnedData, MaxLikelihoodReconstructor, ReconstructionResult
from .phase_recovery import PhaseAssignment, TraceRecord, VariancePhaseModel

__all__ = [
    'BinnedData',
    'CumulantSet',
    'EfficiencyBudget',
    'MarginalSampler',
    'MaxLikelihoodReconstructor',
    'MixtureWeights',
    'PhaseAssignment',
    'QuadratureAxis',
    'QuadratureRecord',
    'ReconstructionResult',
    'SchmidtSpectrum',
    'TapConfig',
    'TraceRecord',
    'VariancePhaseModel'
]

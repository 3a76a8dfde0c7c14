"""
Distillation Module
===================
Photon subtraction on both arms of a two-mode squeezed state: tap statistics,
heralding loss, the conditioned states, the multimode mixture and the final
detected single-mode state with the setup's losses.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.special import comb
from scipy.stats import binom

from ..core.exceptions import ConfigError, DegenerateError, NumericalError
from ..core.fock import (
    DEFAULT_CUTOFF,
    DensityOperator,
    FockVector,
    LossChannel,
    annihilation,
    apply_loss,
    check_truncation,
    mixed_port,
    tap_kraus,
    trim,
    vacuum,
)
from .pdc_model import SchmidtSpectrum, source_state

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-10
SYMMETRY_TOL = 1e-8
ACCOUNTING_TOL = 1e-9
HOM_MODELS = ('loss', 'mode_mismatch')


@dataclass(frozen=True)
class TapConfig:
    """
    Subtraction beam splitters and heralding detectors.

    ``energy_transmission`` is T² of the tap (0.9 for a 90/10 splitter).
    ``transmission_in_budget`` states that the tap's transmission loss is
    already part of the efficiency budget (``EfficiencyBudget.tap_bs``).
    """

    energy_transmission: float = 0.9
    heralding_efficiency: float = 0.002
    subtract: Tuple[int, int] = (1, 1)
    transmission_in_budget: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'subtract', tuple(int(s) for s in self.subtract))
        if not 0.0 < self.energy_transmission <= 1.0:
            raise ValueError(f"Tap energy transmission must be in (0, 1], got {self.energy_transmission}")
        if not 0.0 <= self.heralding_efficiency <= 1.0:
            raise ValueError(f"Heralding efficiency must be in [0, 1], got {self.heralding_efficiency}")
        if len(self.subtract) != 2 or min(self.subtract) < 0:
            raise ValueError(f"Subtraction order must be two non-negative integers, got {self.subtract}")

    @property
    def transmissivity(self) -> float:
        """Amplitude transmissivity T"""
        return float(np.sqrt(self.energy_transmission))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'tap_energy_transmission': self.energy_transmission,
            'heralding_efficiency': self.heralding_efficiency,
            'subtract': list(self.subtract),
            'transmission_in_budget': self.transmission_in_budget
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TapConfig":
        return cls(
            energy_transmission=float(data.get('tap_energy_transmission', 0.9)),
            heralding_efficiency=float(data.get('heralding_efficiency', 0.002)),
            subtract=tuple(data.get('subtract', (1, 1))),
            transmission_in_budget=bool(data.get('transmission_in_budget', True))
        )


@dataclass(frozen=True)
class MixtureWeights:
    """Weights of the wanted, single-subtracted and undistilled components"""

    alpha0: float
    alpha1: float
    alpha2: float

    def __post_init__(self):
        values = (self.alpha0, self.alpha1, self.alpha2)
        if any(not -WEIGHT_TOL <= a <= 1.0 + WEIGHT_TOL for a in values):
            raise ValueError(f"Mixture weights must lie in [0, 1], got {values}")
        if abs(sum(values) - 1.0) > WEIGHT_TOL:
            raise ValueError(f"Mixture weights must sum to 1, got {sum(values)}")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.alpha0, self.alpha1, self.alpha2)


@dataclass(frozen=True)
class EfficiencyBudget:
    """
    Multiplicative efficiencies of the detection chain.

    The LO visibility enters squared (mode overlap of amplitudes). The product
    is always recomputed; ``reference_total`` records a separately quoted
    total, which takes precedence when present.

    ``hom_model`` selects how the signal/idler visibility acts: ``'loss'``
    keeps it in the loss product, ``'mode_mismatch'`` removes it from the
    product and mixes only the idler fraction overlapping the signal mode
    (``hom_visibility²`` in intensity) at the 50:50 splitter.
    """

    hom_visibility: float = 1.0
    linear_losses: float = 1.0
    tap_bs: float = 1.0
    lo_visibility: float = 1.0
    pd_quantum_efficiency: float = 1.0
    reference_total: Optional[float] = None
    hom_model: str = 'loss'

    FACTORS = ('hom_visibility', 'linear_losses', 'tap_bs', 'lo_visibility', 'pd_quantum_efficiency')

    def __post_init__(self):
        for name in self.FACTORS:
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"budget.{name} must be in (0, 1], got {value}")
        if self.reference_total is not None and not 0.0 < self.reference_total <= 1.0:
            raise ValueError(f"budget.reference_total must be in (0, 1], got {self.reference_total}")
        if self.hom_model not in HOM_MODELS:
            raise ValueError(f"budget.hom_model must be one of {', '.join(HOM_MODELS)}, got {self.hom_model!r}")

    @property
    def idler_matching(self) -> float:
        """Idler intensity that interferes with the signal mode at the 50:50 splitter"""
        if self.hom_model == 'mode_mismatch':
            return float(self.hom_visibility ** 2)
        return 1.0

    @classmethod
    def measured_setup(cls) -> "EfficiencyBudget":
        return cls(0.75, 0.87, 0.9, 0.91, 0.9, reference_total=0.428)

    @property
    def product(self) -> float:
        return float(
            self.hom_visibility * self.linear_losses * self.tap_bs
            * self.lo_visibility ** 2 * self.pd_quantum_efficiency
        )

    def total_efficiency(self, exclude_tap: bool = False) -> float:
        product = self.product
        total = product
        if self.reference_total is not None:
            if abs(self.reference_total - product) > 1e-3:
                logger.warning(
                    f"Budget product {product:.4f} differs from reference total "
                    f"{self.reference_total:.4f}; using the reference"
                )
            total = self.reference_total
        if exclude_tap:
            total /= self.tap_bs
        if self.hom_model == 'mode_mismatch':
            total /= self.hom_visibility
        logger.info(
            f"Total detection efficiency {total:.4f} (product {product:.4f}, "
            f"exclude_tap={exclude_tap}, hom_model={self.hom_model})"
        )
        return float(min(total, 1.0))

    def to_dict(self) -> Dict[str, Any]:
        data = {name: getattr(self, name) for name in self.FACTORS}
        if self.reference_total is not None:
            data['reference_total'] = self.reference_total
        if self.hom_model != 'loss':
            data['hom_model'] = self.hom_model
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EfficiencyBudget":
        kwargs = {name: float(data[name]) for name in cls.FACTORS if name in data}
        if data.get('reference_total') is not None:
            kwargs['reference_total'] = float(data['reference_total'])
        if 'hom_model' in data:
            kwargs['hom_model'] = str(data['hom_model'])
        return cls(**kwargs)


def check_tap_accounting(tap: TapConfig, budget: EfficiencyBudget) -> None:
    """
    A budget that carries the tap transmission must quote the tap's own T².

    Raises ``ConfigError`` otherwise. Without the budget carrying it, states
    are conditioned at the tap transmissivity itself.
    """
    if tap.transmission_in_budget and abs(budget.tap_bs - tap.energy_transmission) > ACCOUNTING_TOL:
        message = (
            f"budget.tap_bs={budget.tap_bs} must equal tap.tap_energy_transmission="
            f"{tap.energy_transmission} when tap.transmission_in_budget is true"
        )
        logger.error(message)
        raise ConfigError(message)


@dataclass(frozen=True)
class MixtureComponents:
    """Lossless detected components of the multimode mixture with their weights"""

    weights: MixtureWeights
    sub2: DensityOperator
    sub1: DensityOperator
    squeezed: DensityOperator

    def mix(self) -> DensityOperator:
        a0, a1, a2 = self.weights.as_tuple()
        entries = a0 * self.sub2.entries + a1 * self.sub1.entries + a2 * self.squeezed.entries
        return DensityOperator(self.sub2.dim, entries).normalized()


# =========================================================================
# Conditioned two-mode states
# =========================================================================

def subtraction_probability(lam: float, transmissivity: float) -> float:
    """Probability of exactly one photon in each tap arm for a TMSV input"""
    r2 = 1.0 - transmissivity ** 2
    mu2 = (lam * transmissivity ** 2) ** 2
    # Σ_n (1−λ²) λ^{2(n+1)} (n+1)² T^{4n} r⁴
    return float((1.0 - lam ** 2) * lam ** 2 * r2 ** 2 * (1.0 + mu2) / (1.0 - mu2) ** 3)


def subtracted_state_ideal(
    lam: float,
    transmissivity: float,
    cutoff: int = DEFAULT_CUTOFF,
    allow_limit: bool = False
) -> FockVector:
    """Closed-form state heralded by one photon in each tap: ∝ Σ λⁿ(n+1)T²ⁿ |n, n⟩"""
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"Squeezing parameter must be in [0, 1), got {lam}")
    if not 0.0 < transmissivity <= 1.0:
        raise ValueError(f"Tap transmissivity must be in (0, 1], got {transmissivity}")
    if transmissivity == 1.0 and not allow_limit:
        raise DegenerateError("Tap transmissivity T=1 never subtracts a photon; pass allow_limit for the T->1 shape")
    if lam == 0.0:
        logger.warning("Subtraction from vacuum has success probability 0; returning |0,0>")
        return vacuum(cutoff, modes=2)
    n = np.arange(cutoff)
    mu = lam * transmissivity ** 2
    coefficients = (n + 1) * mu ** n
    check_truncation((coefficients / np.linalg.norm(coefficients)) ** 2, "subtracted_state_ideal")
    return FockVector.from_matrix(np.diag(coefficients)).normalize()


def _tap_branch(state: FockVector, transmissivity: float, m: int, n: int) -> np.ndarray:
    """Unnormalized transmitted amplitudes with m and n photons projected in the tap arms"""
    kraus = tap_kraus(float(transmissivity), state.dim)
    if max(m, n) >= state.dim:
        raise ValueError(f"Subtraction order {(m, n)} exceeds cutoff {state.dim}")
    return kraus[m] @ state.as_matrix() @ kraus[n].T


def tap_outcome_probabilities(
    state: FockVector,
    tap: TapConfig,
    max_subtracted: Optional[int] = None
) -> np.ndarray:
    """
    Joint photon-number statistics p_mn of the signal and idler tap arms.

    Each arm is mixed with a vacuum ancilla on the tap splitter and the
    ancillas are projected on |m⟩ and |n⟩.
    """
    if state.modes != 2:
        raise ValueError("Tap statistics need a two-mode state")
    size = state.dim if max_subtracted is None else min(max_subtracted + 1, state.dim)
    kraus = tap_kraus(tap.transmissivity, state.dim)
    matrix = state.as_matrix()
    probabilities = np.zeros((size, size))
    for m in range(size):
        left = kraus[m] @ matrix
        for n in range(size):
            branch = left @ kraus[n].T
            probabilities[m, n] = float(np.sum(np.abs(branch) ** 2))
    return probabilities


def tap_outcome_probabilities_analytic(lam: float, energy_transmission: float, size: int) -> np.ndarray:
    """Binomial splitting of the pair number j: Σ_j (1−λ²)λ²ʲ Bin(m; j, 1−T²) Bin(n; j, 1−T²)"""
    j = np.arange(size)
    pairs = (1.0 - lam ** 2) * lam ** (2 * j)
    splits = binom.pmf(j[:, None], j[None, :], 1.0 - energy_transmission)  # [m, j]
    return splits @ np.diag(pairs) @ splits.T


def detection_matrix(eta: float, size: int) -> np.ndarray:
    """L[i, j] = C(j, i) ηⁱ (1−η)^{j−i}: probability of detecting i out of j photons"""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"Heralding efficiency must be in [0, 1], got {eta}")
    i = np.arange(size)[:, None]
    j = np.arange(size)[None, :]
    with np.errstate(invalid='ignore'):
        matrix = comb(j, i) * np.power(eta, i) * np.power(1.0 - eta, np.clip(j - i, 0, None))
    return np.where(i <= j, matrix, 0.0)


def heralding_rescale(probabilities: np.ndarray, eta: float) -> np.ndarray:
    """p′ = L p Lᵀ with the binomial detection matrix on both arms"""
    probabilities = np.asarray(probabilities, dtype=float)
    if np.any(probabilities < 0):
        raise ValueError("Tap probabilities must be non-negative")
    detection = detection_matrix(eta, probabilities.shape[0])
    return detection @ probabilities @ detection.T


def mixture_weights(p_mode0: np.ndarray, p_mode1: np.ndarray) -> MixtureWeights:
    """α weights from the heralded statistics of the first two Schmidt modes"""
    wanted = p_mode0[1, 1] * p_mode1[0, 0]
    mixed = 2.0 * p_mode0[1, 0] * p_mode1[0, 1]
    unwanted = p_mode0[0, 0] * p_mode1[1, 1]
    denominator = wanted + mixed + unwanted
    if denominator <= 0.0:
        raise DegenerateError("No coincidence events are possible: all heralding probabilities vanish")
    weights = MixtureWeights(wanted / denominator, mixed / denominator, unwanted / denominator)
    logger.info(f"Mixture weights alpha = ({weights.alpha0:.6f}, {weights.alpha1:.6f}, {weights.alpha2:.6f})")
    return weights


def conditional_two_mode_state(
    state: FockVector,
    tap: TapConfig,
    subtract: Optional[Tuple[int, int]] = None
) -> DensityOperator:
    """State transmitted past the taps given m and n photons in the signal and idler taps"""
    m, n = tap.subtract if subtract is None else subtract
    branch = _tap_branch(state, tap.transmissivity, m, n)
    probability = float(np.sum(np.abs(branch) ** 2))
    if probability <= 0.0:
        raise DegenerateError(f"Heralding outcome {(m, n)} has zero probability")
    conditioned = FockVector.from_matrix(branch).normalize()
    return conditioned.to_density()


def annihilated_state(state: FockVector, subtract: Tuple[int, int]) -> FockVector:
    """T→1 limit of the conditioned state: a^m b^n |ψ⟩ normalized"""
    m, n = subtract
    a = annihilation(state.dim)
    matrix = np.linalg.matrix_power(a, m) @ state.as_matrix() @ np.linalg.matrix_power(a, n).T
    if not np.any(np.abs(matrix) > 0):
        raise DegenerateError(f"Annihilating {(m, n)} photons leaves nothing of the input state")
    return FockVector.from_matrix(matrix).normalize()


def _conditioned(state: FockVector, tap: TapConfig, subtract: Tuple[int, int]) -> FockVector:
    """aᵐbⁿ shape when the budget carries the tap transmission, otherwise the branch at T"""
    if tap.transmission_in_budget:
        return annihilated_state(state, subtract)
    branch = _tap_branch(state, tap.transmissivity, *subtract)
    if not np.any(np.abs(branch) > 0):
        raise DegenerateError(f"Heralding outcome {subtract} has zero probability")
    return FockVector.from_matrix(branch).normalize()


def detected_single_mode_state(state, idler_matching: float = 1.0) -> DensityOperator:
    """
    Interfere both modes on a 50:50 splitter and keep the X-squeezed output port.

    The port carries up to twice the photons of either input mode, so the
    result has cutoff ``2·dim − 1``. With ``idler_matching`` < 1 only that
    intensity fraction of the idler shares the signal's mode; the rest leaves
    the detected mode.
    """
    return mixed_port(state, 1.0 / np.sqrt(2.0), keep=0, idler_efficiency=idler_matching).normalized()


# =========================================================================
# Assembled detected states
# =========================================================================

def distilled_single_mode_state(
    lam: float,
    tap: TapConfig,
    budget: EfficiencyBudget,
    cutoff: int = DEFAULT_CUTOFF
) -> DensityOperator:
    """Pure single-Schmidt-mode model: condition on ``tap.subtract``, interfere, apply losses"""
    check_tap_accounting(tap, budget)
    source = source_state(lam, cutoff, margin=4 * max(tap.subtract))
    if lam == 0.0:
        logger.warning("Zero gain: nothing to subtract, the detected state is vacuum")
        conditioned = source
    else:
        conditioned = _conditioned(source, tap, tap.subtract)
    detected = detected_single_mode_state(conditioned, budget.idler_matching)
    efficiency = budget.total_efficiency(exclude_tap=not tap.transmission_in_budget)
    return trim(apply_loss(detected, LossChannel(efficiency)), cutoff)


def undistilled_state(lam: float, budget: EfficiencyBudget, cutoff: int = DEFAULT_CUTOFF) -> DensityOperator:
    """Detected squeezed state without subtraction, through the full budget"""
    detected = detected_single_mode_state(source_state(lam, cutoff), budget.idler_matching)
    return trim(apply_loss(detected, LossChannel(budget.total_efficiency())), cutoff)


def mixture_components(
    spectrum: SchmidtSpectrum,
    tap: TapConfig,
    cutoff: int = DEFAULT_CUTOFF,
    idler_matching: float = 1.0
) -> MixtureComponents:
    """Weights and lossless detected components of the two-Schmidt-mode coincidence mixture"""
    if tuple(tap.subtract) != (1, 1):
        raise ValueError(f"The coincidence mixture is defined for single subtractions, got {tap.subtract}")
    modes = spectrum.n_modes
    if modes > 2:
        logger.info(f"Using the first two of {modes} Schmidt modes for the coincidence mixture")
    lambdas = list(spectrum.squeezing_parameters[:2]) + [0.0] * max(0, 2 - modes)
    states = [source_state(float(lam), cutoff, margin=4) for lam in lambdas]
    heralded = []
    for k, state in enumerate(states):
        try:
            p = tap_outcome_probabilities(state, tap)
            heralded.append(heralding_rescale(p, tap.heralding_efficiency))
        except Exception as e:
            logger.error(f"Failed to compute tap statistics of Schmidt mode {k}: {e}")
            raise
    weights = mixture_weights(heralded[0], heralded[1])

    signal_mode = states[0]
    sub2 = detected_single_mode_state(_conditioned(signal_mode, tap, (1, 1)), idler_matching)
    sub1_signal = detected_single_mode_state(_conditioned(signal_mode, tap, (1, 0)), idler_matching)
    sub1_idler = detected_single_mode_state(_conditioned(signal_mode, tap, (0, 1)), idler_matching)
    mismatch = float(np.max(np.abs(sub1_signal.entries - sub1_idler.entries)))
    if mismatch > SYMMETRY_TOL:
        raise NumericalError(f"Single-subtraction orderings disagree after interference (max deviation {mismatch:.3e})")
    sub1 = DensityOperator(sub1_signal.dim, 0.5 * (sub1_signal.entries + sub1_idler.entries))
    squeezed = detected_single_mode_state(signal_mode, idler_matching)
    return MixtureComponents(weights=weights, sub2=sub2, sub1=sub1, squeezed=squeezed)


def assemble_detected_mixture(
    spectrum: SchmidtSpectrum,
    tap: TapConfig,
    budget: EfficiencyBudget,
    cutoff: int = DEFAULT_CUTOFF
) -> DensityOperator:
    """α₀ρ_sub(2) + α₁ρ_sub(1) + α₂ρ_sq of Schmidt mode 0, then the total-efficiency loss"""
    check_tap_accounting(tap, budget)
    if spectrum.gain == 0.0:
        logger.warning("Zero gain: no coincidences occur, the detected state is vacuum")
        return vacuum(cutoff).to_density()
    try:
        components = mixture_components(spectrum, tap, cutoff, budget.idler_matching)
    except Exception as e:
        logger.error(f"Failed to assemble the detected mixture: {e}")
        raise
    efficiency = budget.total_efficiency(exclude_tap=not tap.transmission_in_budget)
    return trim(apply_loss(components.mix(), LossChannel(efficiency)), cutoff)

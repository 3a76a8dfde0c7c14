"""
PDC Source Model
================
Two-mode squeezed vacuum in one or several Schmidt modes, and the conversions
between the quantities used to characterize a source: mean photon number,
squeezing in dB, marginal g² and effective mode number K.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from ..core.fock import DEFAULT_CUTOFF, FockVector, check_truncation

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-10
SOURCE_TAIL = 1e-16
MAX_CUTOFF_FACTOR = 4


@dataclass(frozen=True)
class SchmidtSpectrum:
    """Parametric gain ``B`` and descending Schmidt coefficients ``c_k`` with Σ c_k² = 1"""

    gain: float
    coefficients: Tuple[float, ...] = (1.0,)

    def __post_init__(self):
        coefficients = tuple(float(c) for c in self.coefficients)
        object.__setattr__(self, 'coefficients', coefficients)
        if self.gain < 0:
            raise ValueError(f"Gain B must be >= 0, got {self.gain}")
        if not coefficients:
            raise ValueError("At least one Schmidt coefficient is required")
        if any(c < 0 for c in coefficients):
            raise ValueError(f"Schmidt coefficients must be non-negative, got {coefficients}")
        if any(b > a for a, b in zip(coefficients, coefficients[1:])):
            raise ValueError(f"Schmidt coefficients must be in descending order, got {coefficients}")
        total = sum(c * c for c in coefficients)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"Schmidt coefficients must satisfy sum c_k^2 = 1, got {total}")

    @property
    def n_modes(self) -> int:
        return len(self.coefficients)

    @property
    def squeezing_parameters(self) -> np.ndarray:
        """Per-mode λ_k = tanh(c_k B)"""
        return np.tanh(np.asarray(self.coefficients) * self.gain)

    @property
    def mode_number(self) -> float:
        return mode_number_from_coefficients(self.coefficients)

    @property
    def mean_photons(self) -> float:
        return float(np.sum(np.sinh(np.asarray(self.coefficients) * self.gain) ** 2))

    @classmethod
    def from_characterization(
        cls,
        mean_photons: float,
        mode_number: float,
        n_modes: int = 2,
        split_gain: bool = True
    ) -> "SchmidtSpectrum":
        """
        Build a spectrum from a measured mean photon number and mode number K.

        With ``split_gain`` the gain solves Σ_k sinh²(c_k B) = n̄, so the photon
        budget is shared between the Schmidt modes; otherwise B = asinh(√n̄).
        """
        coefficients = schmidt_from_mode_number(mode_number, n_modes=n_modes)
        if mean_photons < 0:
            raise ValueError(f"Mean photon number must be >= 0, got {mean_photons}")
        if mean_photons == 0:
            return cls(0.0, coefficients)
        if not split_gain:
            return cls(gain_from_mean_photons(mean_photons), coefficients)
        c = np.asarray(coefficients)

        def excess(gain: float) -> float:
            return float(np.sum(np.sinh(c * gain) ** 2)) - mean_photons

        upper = gain_from_mean_photons(mean_photons) / c[0]
        gain = brentq(excess, 0.0, upper, xtol=1e-14)
        logger.info(f"Gain B={gain:.6f} reproduces n={mean_photons} across {n_modes} Schmidt modes")
        return cls(float(gain), coefficients)

    def to_dict(self) -> Dict[str, Any]:
        return {'gain_B': self.gain, 'coefficients': list(self.coefficients)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SchmidtSpectrum":
        has_gain = 'gain_B' in data or 'coefficients' in data
        has_characterization = 'mean_photons' in data or 'mode_number_K' in data
        if has_gain and has_characterization:
            raise ValueError("Use either {gain_B, coefficients} or {mean_photons, mode_number_K}, not both")
        if has_characterization:
            return cls.from_characterization(
                float(data['mean_photons']),
                float(data.get('mode_number_K', 1.0)),
                n_modes=int(data.get('n_modes', 2))
            )
        return cls(float(data.get('gain_B', 0.0)), tuple(data.get('coefficients', (1.0,))))


# =========================================================================
# States
# =========================================================================

def tmsv(lam: float, cutoff: int = DEFAULT_CUTOFF, strict: bool = True) -> FockVector:
    """√(1−λ²) Σ λⁿ |n, n⟩ on the truncated two-mode basis"""
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"Squeezing parameter must be in [0, 1), got {lam}")
    n = np.arange(cutoff)
    coefficients = np.sqrt(1.0 - lam ** 2) * lam ** n
    check_truncation(coefficients ** 2, f"tmsv(lambda={lam:.4f}, cutoff={cutoff})", strict=strict)
    matrix = np.diag(coefficients)
    # The truncated tail is below the truncation tolerance; renormalize onto the cutoff
    return FockVector.from_matrix(matrix).normalize()


def working_cutoff(lam: float, cutoff: int = DEFAULT_CUTOFF, margin: int = 0) -> int:
    """
    Smallest cutoff ≥ ``cutoff`` whose discarded TMSV tail λ²ᵈ stays below
    ``SOURCE_TAIL``, plus ``margin`` levels; capped at ``MAX_CUTOFF_FACTOR·cutoff``.
    """
    if lam == 0.0:
        return cutoff
    needed = int(np.ceil(np.log(SOURCE_TAIL) / (2.0 * np.log(lam)))) + margin
    return int(max(cutoff, min(needed, MAX_CUTOFF_FACTOR * cutoff)))


def source_state(lam: float, cutoff: int = DEFAULT_CUTOFF, margin: int = 0) -> FockVector:
    """TMSV checked against the configured ``cutoff``, built at ``working_cutoff``"""
    checked = tmsv(lam, cutoff)
    dim = working_cutoff(lam, cutoff, margin)
    if dim == cutoff:
        return checked
    logger.debug(f"Building the source at cutoff {dim} (configured {cutoff})")
    return tmsv(lam, dim)


def multimode_state(spectrum: SchmidtSpectrum, cutoff: int = DEFAULT_CUTOFF) -> List[FockVector]:
    """One independent TMSV per Schmidt mode; the product state is kept as a list"""
    states = []
    for k, lam in enumerate(spectrum.squeezing_parameters):
        try:
            states.append(tmsv(float(lam), cutoff))
        except Exception as e:
            logger.error(f"Failed to build Schmidt mode {k} (lambda={lam:.4f}): {e}")
            raise
    return states


# =========================================================================
# Characterization relations
# =========================================================================

def gain_from_mean_photons(mean_photons: float) -> float:
    """B = asinh(√n̄) for a single-mode source with n̄ = sinh² B"""
    if mean_photons < 0:
        raise ValueError(f"Mean photon number must be >= 0, got {mean_photons}")
    return float(np.arcsinh(np.sqrt(mean_photons)))


def mean_photons_from_gain(gain: float) -> float:
    return float(np.sinh(gain) ** 2)


def squeezing_db_from_gain(gain: float) -> float:
    """Squeezing magnitude −10·log₁₀(e^{−2B}) of the symmetrized single-mode state"""
    return float(-10.0 * np.log10(np.exp(-2.0 * gain)))


def lambda_from_squeezing_db(squeezing_db: float) -> float:
    """λ of the TMSV whose 50:50-symmetrized output has the given squeezing (sign ignored)"""
    return float(np.tanh(abs(squeezing_db) * np.log(10.0) / 20.0))


def mode_number_from_g2(g2: float) -> float:
    """K = 1/(g² − 1) for g² ∈ (1, 2]"""
    if not 1.0 < g2 <= 2.0:
        raise ValueError(f"Marginal g2 must be in (1, 2], got {g2}")
    return 1.0 / (g2 - 1.0)


def g2_from_mode_number(mode_number: float) -> float:
    if mode_number < 1.0:
        raise ValueError(f"Mode number must be >= 1, got {mode_number}")
    return 1.0 + 1.0 / mode_number


def mode_number_from_coefficients(coefficients: Sequence[float]) -> float:
    """Schmidt number K = 1/Σ c_k⁴"""
    c = np.asarray(coefficients, dtype=float)
    return float(1.0 / np.sum(c ** 4))


def schmidt_from_mode_number(mode_number: float, n_modes: int = 2) -> Tuple[float, ...]:
    """
    Descending Schmidt coefficients with 1/Σc⁴ = K.

    Two modes have the closed form c₀² = (1 + √(2/K − 1))/2. More modes use a
    geometric profile c_k² ∝ rᵏ with r chosen to match K.
    """
    if n_modes < 1:
        raise ValueError(f"n_modes must be >= 1, got {n_modes}")
    if not 1.0 <= mode_number <= n_modes:
        raise ValueError(f"Mode number {mode_number} not representable with {n_modes} Schmidt modes")
    if n_modes == 1 or mode_number == 1.0:
        return (1.0,) + (0.0,) * (n_modes - 1)
    if n_modes == 2:
        x = 0.5 * (1.0 + np.sqrt(max(0.0, 2.0 / mode_number - 1.0)))
        return (float(np.sqrt(x)), float(np.sqrt(1.0 - x)))
    if mode_number == n_modes:
        return (float(np.sqrt(1.0 / n_modes)),) * n_modes
    k = np.arange(n_modes)

    def profile(ratio: float) -> np.ndarray:
        weights = ratio ** k
        return weights / weights.sum()

    ratio = brentq(lambda r: 1.0 / np.sum(profile(r) ** 2) - mode_number, 1e-12, 1.0 - 1e-12, xtol=1e-15)
    return tuple(float(c) for c in np.sqrt(profile(ratio)))

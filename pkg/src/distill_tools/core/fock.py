"""
Truncated Fock-Space Engine
===========================
States, operators and channels over a truncated photon-number basis of one or
two optical modes.

Conventions used everywhere in the package:

* quadrature ``X = (a + a†)/√2``, so the vacuum variance is ``1/2``;
* two-mode amplitudes are row-major in ``(n_signal, n_idler)``;
* beam splitters mix real-orthogonally: ``|1,0⟩ → t|1,0⟩ + r|0,1⟩`` and
  ``|0,1⟩ → −r|1,0⟩ + t|0,1⟩`` with ``r = √(1 − t²)``.
"""

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from scipy.linalg import expm
from scipy.special import comb

from .exceptions import PhysicalityError, TruncationError

logger = logging.getLogger(__name__)

VACUUM_VARIANCE = 0.5
DEFAULT_CUTOFF = 24

NORM_TOL = 1e-12
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
PSD_TOL = 1e-9
TRUNCATION_TOL = 1e-6


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.complex128, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class FockVector:
    """Pure state over ``modes`` truncated modes of ``dim`` levels each"""

    dim: int
    amplitudes: np.ndarray
    modes: int = 1

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"Fock cutoff must be >= 2, got {self.dim}")
        if self.modes not in (1, 2):
            raise ValueError(f"Only one- and two-mode states are supported, got {self.modes}")
        amplitudes = np.asarray(self.amplitudes, dtype=np.complex128).reshape(-1)
        if amplitudes.size != self.dim ** self.modes:
            raise ValueError(
                f"Expected {self.dim ** self.modes} amplitudes for dim={self.dim}, "
                f"modes={self.modes}, got {amplitudes.size}"
            )
        object.__setattr__(self, 'amplitudes', _frozen(amplitudes))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "FockVector":
        """Build a two-mode state from an ``(n_signal, n_idler)`` amplitude matrix"""
        matrix = np.asarray(matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"Two-mode amplitude matrix must be square, got {matrix.shape}")
        return cls(dim=matrix.shape[0], amplitudes=matrix.reshape(-1), modes=2)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> "FockVector":
        norm = self.norm
        if norm == 0.0:
            raise PhysicalityError("Cannot normalize the zero vector")
        return FockVector(self.dim, self.amplitudes / norm, self.modes)

    def as_matrix(self) -> np.ndarray:
        """Two-mode amplitudes as a ``dim x dim`` matrix (signal rows, idler columns)"""
        if self.modes != 2:
            raise ValueError("as_matrix is only defined for two-mode states")
        return self.amplitudes.reshape(self.dim, self.dim)

    def to_density(self) -> "DensityOperator":
        return DensityOperator(
            dim=self.dim,
            entries=np.outer(self.amplitudes, self.amplitudes.conj()),
            modes=self.modes
        )

    def populations(self) -> np.ndarray:
        """Photon-number probabilities, shaped ``(dim,)`` or ``(dim, dim)``"""
        probs = np.abs(self.amplitudes) ** 2
        return probs if self.modes == 1 else probs.reshape(self.dim, self.dim)


@dataclass(frozen=True)
class DensityOperator:
    """Hermitian density matrix over ``modes`` truncated modes"""

    dim: int
    entries: np.ndarray
    modes: int = 1

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"Fock cutoff must be >= 2, got {self.dim}")
        if self.modes not in (1, 2):
            raise ValueError(f"Only one- and two-mode states are supported, got {self.modes}")
        size = self.dim ** self.modes
        entries = np.asarray(self.entries, dtype=np.complex128)
        if entries.shape != (size, size):
            raise ValueError(f"Expected a {size}x{size} matrix, got {entries.shape}")
        scale = max(1.0, float(np.max(np.abs(entries)))) if entries.size else 1.0
        if np.max(np.abs(entries - entries.conj().T)) > HERMITIAN_TOL * scale:
            raise PhysicalityError("Density operator is not Hermitian")
        # Remove round-off asymmetry so eigh and trace stay exact
        entries = 0.5 * (entries + entries.conj().T)
        object.__setattr__(self, 'entries', _frozen(entries))

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    def normalized(self) -> "DensityOperator":
        trace = self.trace
        if trace <= 0.0:
            raise PhysicalityError(f"Cannot normalize a state with trace {trace}")
        return DensityOperator(self.dim, self.entries / trace, self.modes)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def photon_distribution(self) -> np.ndarray:
        """Diagonal of a one-mode state"""
        if self.modes != 1:
            raise ValueError("photon_distribution is only defined for one-mode states")
        return np.clip(np.diag(self.entries).real, 0.0, None)

    def mean_photons(self) -> float:
        return float(np.dot(np.arange(self.dim), self.photon_distribution()))

    def is_real(self, tol: float = HERMITIAN_TOL) -> bool:
        return bool(np.max(np.abs(self.entries.imag)) < tol)

    def to_dict(self) -> Dict[str, Any]:
        flat = self.entries.reshape(-1)
        return {
            'dim': self.dim,
            'modes': self.modes,
            'entries': [[float(z.real), float(z.imag)] for z in flat]
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DensityOperator":
        dim = int(data['dim'])
        modes = int(data.get('modes', 1))
        size = dim ** modes
        raw = np.asarray(data['entries'], dtype=float)
        if raw.shape != (size * size, 2):
            raise ValueError(f"Expected {size * size} [re, im] pairs, got shape {raw.shape}")
        entries = (raw[:, 0] + 1j * raw[:, 1]).reshape(size, size)
        return cls(dim=dim, entries=entries, modes=modes)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DensityOperator":
        with open(path, 'r') as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class LossChannel:
    """Pure-loss channel of total energy efficiency ``efficiency``"""

    efficiency: float

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"Loss-channel efficiency must be in [0, 1], got {self.efficiency}")


State = Union[FockVector, DensityOperator]


# =========================================================================
# Constructors
# =========================================================================

def vacuum(dim: int = DEFAULT_CUTOFF, modes: int = 1) -> FockVector:
    amplitudes = np.zeros(dim ** modes, dtype=np.complex128)
    amplitudes[0] = 1.0
    return FockVector(dim, amplitudes, modes)


def fock_state(n: int, dim: int = DEFAULT_CUTOFF) -> FockVector:
    if not 0 <= n < dim:
        raise ValueError(f"Photon number {n} outside cutoff {dim}")
    amplitudes = np.zeros(dim, dtype=np.complex128)
    amplitudes[n] = 1.0
    return FockVector(dim, amplitudes)


def thermal_state(mean_photons: float, dim: int = DEFAULT_CUTOFF) -> DensityOperator:
    """Thermal state p_n = n̄ⁿ/(1+n̄)ⁿ⁺¹, renormalized on the cutoff"""
    if mean_photons < 0:
        raise ValueError(f"Mean photon number must be >= 0, got {mean_photons}")
    ratio = mean_photons / (1.0 + mean_photons)
    probs = (1.0 - ratio) * ratio ** np.arange(dim)
    check_truncation(probs, "thermal_state")
    return DensityOperator(dim, np.diag(probs / probs.sum()))


def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim)), k=1).astype(np.complex128)


def as_density(state: State) -> DensityOperator:
    return state.to_density() if isinstance(state, FockVector) else state


# =========================================================================
# Truncation bookkeeping
# =========================================================================

def top_population(populations: np.ndarray) -> float:
    """Probability carried by the two highest Fock levels of any mode"""
    populations = np.asarray(populations, dtype=float)
    if populations.ndim == 1:
        return float(populations[-2:].sum())
    signal = populations.sum(axis=1)
    idler = populations.sum(axis=0)
    return float(max(signal[-2:].sum(), idler[-2:].sum()))


def check_truncation(populations: np.ndarray, where: str, strict: bool = False) -> float:
    """
    Check the top-two-level population against ``TRUNCATION_TOL``.

    Logs a warning when exceeded, or raises ``TruncationError`` in strict mode.
    """
    top = top_population(populations)
    if top >= TRUNCATION_TOL:
        message = f"{where}: top Fock levels carry population {top:.3e} (>= {TRUNCATION_TOL:g})"
        if strict:
            logger.error(message)
            raise TruncationError(message)
        logger.warning(message)
    return top


def pad(state: DensityOperator, dim: int) -> DensityOperator:
    """Embed a one-mode state into a larger cutoff (or cut it down to a smaller one)"""
    if state.modes != 1:
        raise ValueError("pad is only defined for one-mode states")
    if dim == state.dim:
        return state
    entries = np.zeros((dim, dim), dtype=np.complex128)
    keep = min(dim, state.dim)
    entries[:keep, :keep] = state.entries[:keep, :keep]
    return DensityOperator(dim, entries)


def trim(state: State, min_dim: int, tol: float = 1e-13) -> DensityOperator:
    """
    Cut a one-mode state to the smallest cutoff ≥ ``min_dim`` whose discarded
    population stays below ``tol``, then renormalize.
    """
    rho = as_density(state)
    if rho.modes != 1:
        raise ValueError("trim is only defined for one-mode states")
    if rho.dim <= min_dim:
        return rho
    probs = rho.photon_distribution()
    # tail[d] = population at levels >= d
    tail = np.concatenate([np.cumsum(probs[::-1])[::-1], [0.0]])
    dim = next(d for d in range(min_dim, rho.dim + 1) if tail[d] < tol)
    if dim < rho.dim:
        logger.debug(f"Trimmed state from cutoff {rho.dim} to {dim}")
    return pad(rho, dim).normalized()


# =========================================================================
# Operations
# =========================================================================

def tensor(a: State, b: State) -> State:
    """Kronecker product of two one-mode states of equal cutoff"""
    if a.dim != b.dim:
        raise ValueError(f"Cutoff mismatch in tensor product: {a.dim} vs {b.dim}")
    if a.modes != 1 or b.modes != 1:
        raise ValueError("tensor combines two one-mode states")
    if isinstance(a, FockVector) and isinstance(b, FockVector):
        return FockVector(a.dim, np.kron(a.amplitudes, b.amplitudes), modes=2)
    left, right = as_density(a), as_density(b)
    return DensityOperator(a.dim, np.kron(left.entries, right.entries), modes=2)


@lru_cache(maxsize=32)
def beam_splitter_unitary(transmissivity: float, dim: int) -> np.ndarray:
    """
    Two-mode beam-splitter unitary ``exp(θ(a b† − a† b))`` with ``cos θ = t``.

    Exact for total photon number below ``dim``; the truncated generator is
    antisymmetric, so the result is orthogonal for every input.
    """
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError(f"Transmissivity amplitude must be in [0, 1], got {transmissivity}")
    a = annihilation(dim).real
    identity = np.eye(dim)
    a_signal = np.kron(a, identity)
    a_idler = np.kron(identity, a)
    generator = a_signal @ a_idler.T - a_signal.T @ a_idler
    theta = float(np.arccos(transmissivity))
    unitary = expm(theta * generator)
    unitary.setflags(write=False)
    return unitary


def beam_splitter(state: State, transmissivity: float) -> State:
    """Mix the two modes of ``state`` on a beam splitter of amplitude transmissivity ``t``"""
    if state.modes != 2:
        raise ValueError("beam_splitter acts on two-mode states")
    unitary = beam_splitter_unitary(float(transmissivity), state.dim)
    if isinstance(state, FockVector):
        return FockVector(state.dim, unitary @ state.amplitudes, modes=2)
    return DensityOperator(state.dim, unitary @ state.entries @ unitary.T, modes=2)


@lru_cache(maxsize=8)
def beam_splitter_blocks(transmissivity: float, max_total: int) -> tuple:
    """
    Beam-splitter unitary restricted to each total photon number N ≤ ``max_total``.

    Block N acts on ``|k, N−k⟩`` for k = 0..N; the blocks are exact, so no
    truncation enters.
    """
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError(f"Transmissivity amplitude must be in [0, 1], got {transmissivity}")
    theta = float(np.arccos(transmissivity))
    blocks = []
    for total in range(max_total + 1):
        k = np.arange(total + 1)
        generator = np.zeros((total + 1, total + 1))
        # a b† lowers k, a† b raises it
        generator[k[1:] - 1, k[1:]] = np.sqrt(k[1:] * (total - k[1:] + 1))
        generator[k[:-1] + 1, k[:-1]] = -np.sqrt((k[:-1] + 1) * (total - k[:-1]))
        block = expm(theta * generator)
        block.setflags(write=False)
        blocks.append(block)
    return tuple(blocks)


def _mix_exact(matrix: np.ndarray, transmissivity: float) -> np.ndarray:
    dim = matrix.shape[0]
    out_dim = 2 * dim - 1
    blocks = beam_splitter_blocks(float(transmissivity), out_dim - 1)
    out = np.zeros((out_dim, out_dim), dtype=np.complex128)
    for total, block in enumerate(blocks):
        low, high = max(0, total - dim + 1), min(total, dim - 1)
        k_in = np.arange(low, high + 1)
        amplitudes = matrix[k_in, total - k_in]
        k_out = np.arange(total + 1)
        out[k_out, total - k_out] = block[:, k_in] @ amplitudes
    return out


def beam_splitter_exact(state: State, transmissivity: float) -> State:
    """
    Beam splitter without truncation: the output cutoff grows to ``2·dim − 1``.

    Mixed inputs are split into their eigenvectors, each mixed exactly.
    """
    if state.modes != 2:
        raise ValueError("beam_splitter_exact acts on two-mode states")
    if isinstance(state, FockVector):
        return FockVector.from_matrix(_mix_exact(state.as_matrix(), transmissivity))
    values, vectors = _clipped_spectrum(state)
    dim = state.dim
    out_dim = 2 * dim - 1
    entries = np.zeros((out_dim ** 2, out_dim ** 2), dtype=np.complex128)
    for weight, vector in zip(values, vectors.T):
        if weight < PSD_TOL:
            continue
        mixed = _mix_exact(vector.reshape(dim, dim), transmissivity).reshape(-1)
        entries += weight * np.outer(mixed, mixed.conj())
    return DensityOperator(out_dim, entries, modes=2)


def mixed_port(state: State, transmissivity: float, keep: int = 0, idler_efficiency: float = 1.0) -> DensityOperator:
    """
    Reduced state of one output port of ``beam_splitter_exact``.

    Equivalent to ``partial_trace(beam_splitter_exact(state, t), keep)`` without
    building the enlarged two-mode operator. ``idler_efficiency`` < 1 passes
    the idler through a loss channel before the splitter.
    """
    if state.modes != 2:
        raise ValueError("mixed_port acts on two-mode states")
    if keep not in (0, 1):
        raise ValueError(f"Mode index must be 0 or 1, got {keep}")
    LossChannel(idler_efficiency)
    if isinstance(state, FockVector):
        components = [(1.0, state.as_matrix())]
    else:
        values, vectors = _clipped_spectrum(state)
        components = [(w, v.reshape(state.dim, state.dim)) for w, v in zip(values, vectors.T) if w >= PSD_TOL]
    if idler_efficiency < 1.0:
        # unnormalized pure branches, one per photon number lost from the idler
        kraus = tap_kraus(float(np.sqrt(idler_efficiency)), state.dim)
        components = [(w, matrix @ k.T) for w, matrix in components for k in kraus]
    out_dim = 2 * state.dim - 1
    reduced = np.zeros((out_dim, out_dim), dtype=np.complex128)
    for weight, matrix in components:
        mixed = _mix_exact(matrix, transmissivity)
        if keep == 1:
            mixed = mixed.T
        reduced += weight * (mixed @ mixed.conj().T)
    return DensityOperator(out_dim, reduced)


@lru_cache(maxsize=32)
def tap_kraus(transmissivity: float, dim: int) -> np.ndarray:
    """
    Kraus operators of a beam splitter whose second input is vacuum.

    ``K[m]`` maps the input mode to the transmitted mode conditioned on ``m``
    photons leaving the other port: ``K[m][n−m, n] = √C(n, m) tⁿ⁻ᵐ rᵐ``,
    which equals ``⟨n−m, m|U|n, 0⟩``.
    """
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError(f"Transmissivity amplitude must be in [0, 1], got {transmissivity}")
    reflectivity = np.sqrt(max(0.0, 1.0 - transmissivity ** 2))
    kraus = np.zeros((dim, dim, dim))
    n = np.arange(dim)
    for m in range(dim):
        columns = n[m:]
        kraus[m, columns - m, columns] = (
            np.sqrt(comb(columns, m)) * transmissivity ** (columns - m) * reflectivity ** m
        )
    kraus.setflags(write=False)
    return kraus


def partial_trace(state: State, keep: int = 0) -> DensityOperator:
    """Reduce a two-mode state to mode ``keep`` (0 = signal, 1 = idler)"""
    if state.modes != 2:
        raise ValueError("partial_trace expects a two-mode state")
    if keep not in (0, 1):
        raise ValueError(f"Mode index must be 0 or 1, got {keep}")
    dim = state.dim
    if isinstance(state, FockVector):
        matrix = state.as_matrix()
        reduced = matrix @ matrix.conj().T if keep == 0 else matrix.T @ matrix.conj()
        return DensityOperator(dim, reduced)
    tensor4 = state.entries.reshape(dim, dim, dim, dim)
    if keep == 0:
        reduced = np.einsum('ikjk->ij', tensor4)
    else:
        reduced = np.einsum('kikj->ij', tensor4)
    return DensityOperator(dim, reduced)


def apply_loss(state: State, channel: Union[LossChannel, float]) -> DensityOperator:
    """Couple a one-mode state to vacuum on a beam splitter of energy transmission η and trace the loss port"""
    if not isinstance(channel, LossChannel):
        channel = LossChannel(float(channel))
    rho = as_density(state)
    if rho.modes != 1:
        raise ValueError("apply_loss acts on one-mode states")
    if channel.efficiency == 1.0:
        return rho
    kraus = tap_kraus(float(np.sqrt(channel.efficiency)), rho.dim)
    out = np.einsum('mij,jk,mlk->il', kraus, rho.entries, kraus.conj())
    return DensityOperator(rho.dim, out)


def phase_rotate(state: State, phi: float) -> DensityOperator:
    """Apply ``exp(−iφ n̂)``: quadrature X_θ of the result equals X_{θ+φ} of the input"""
    rho = as_density(state)
    if rho.modes != 1:
        raise ValueError("phase_rotate acts on one-mode states")
    phases = np.exp(-1j * phi * np.arange(rho.dim))
    return DensityOperator(rho.dim, phases[:, None] * rho.entries * phases.conj()[None, :])


def _clipped_spectrum(rho: DensityOperator) -> tuple:
    values, vectors = np.linalg.eigh(rho.entries)
    if values.min() < -PSD_TOL:
        raise PhysicalityError(f"Density operator has eigenvalue {values.min():.3e} below -{PSD_TOL:g}")
    return np.clip(values, 0.0, None), vectors


def purity(state: State) -> float:
    """tr(ρ²) after clipping round-off negative eigenvalues"""
    rho = as_density(state)
    values, _ = _clipped_spectrum(rho)
    return float(np.sum(values ** 2) / np.sum(values) ** 2)


def fidelity(a: State, b: State) -> float:
    """Uhlmann fidelity (tr √(√a b √a))²; one-mode states of different cutoffs are padded"""
    rho, sigma = as_density(a), as_density(b)
    if rho.modes != sigma.modes:
        raise ValueError("Fidelity needs states with the same number of modes")
    if rho.dim != sigma.dim:
        if rho.modes != 1:
            raise ValueError(f"Cutoff mismatch: {rho.dim} vs {sigma.dim}")
        dim = max(rho.dim, sigma.dim)
        rho, sigma = pad(rho, dim), pad(sigma, dim)
    values, vectors = _clipped_spectrum(rho)
    _clipped_spectrum(sigma)
    sqrt_rho = (vectors * np.sqrt(values)) @ vectors.conj().T
    middle = sqrt_rho @ sigma.entries @ sqrt_rho
    middle = 0.5 * (middle + middle.conj().T)
    root_values = np.sqrt(np.clip(np.linalg.eigvalsh(middle), 0.0, None))
    return float(min(1.0, np.sum(root_values) ** 2))


def overlap(a: FockVector, b: FockVector) -> complex:
    if a.dim != b.dim or a.modes != b.modes:
        raise ValueError("overlap needs states of identical shape")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def load_state(path: Union[str, Path]) -> DensityOperator:
    return DensityOperator.load(path)


def save_state(state: State, path: Union[str, Path]) -> Optional[Path]:
    try:
        return as_density(state).save(path)
    except Exception as e:
        logger.error(f"Failed to save state to {path}: {e}")
        raise

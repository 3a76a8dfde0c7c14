"""
Homodyne Tomography
===================
Maximum-likelihood density-matrix reconstruction from phase-tagged quadrature
samples, and Wigner functions of one-mode states.

The reconstruction iterates ρ → RρR/tr(RρR) over binned data, starting from
the maximally mixed state. When a plain step would lower the likelihood it is
diluted to (I + εR)ρ(I + εR) with ε halved until the likelihood no longer
decreases.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from ..core.exceptions import ConvergenceError, DegenerateError, GridError
from ..core.fock import DensityOperator, State, as_density, fidelity, purity
from ..utils.helpers import write_csv
from .homodyne import hermite_functions

logger = logging.getLogger(__name__)

MIN_PROBABILITY = 1e-300
MAX_DILUTIONS = 40


@dataclass(frozen=True)
class BinnedData:
    """Counts on a (θ, x) histogram; θ centres lie in [0, π)"""

    theta: np.ndarray
    x: np.ndarray
    counts: np.ndarray
    theta_width: float
    x_width: float

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if np.any(counts < 0):
            raise ValueError("Bin counts must be non-negative")
        if not (len(self.theta) == len(self.x) == len(counts)):
            raise ValueError("Bin arrays must have equal length")
        object.__setattr__(self, 'theta', np.asarray(self.theta, dtype=float))
        object.__setattr__(self, 'x', np.asarray(self.x, dtype=float))
        object.__setattr__(self, 'counts', counts)

    @property
    def total(self) -> int:
        return int(round(self.counts.sum()))

    @property
    def bins(self) -> List[Tuple[float, float, int]]:
        return [(float(t), float(x), int(c)) for t, x, c in zip(self.theta, self.x, self.counts)]

    def __len__(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class ReconstructionResult:
    """Reconstructed state with its likelihood history"""

    rho: DensityOperator
    iterations: int
    log_likelihood: float
    converged: bool
    log_likelihood_trace: Tuple[float, ...] = field(default_factory=tuple)
    # stopped because no diluted step raised the likelihood, before reaching tol
    stationary: bool = False

    @property
    def purity(self) -> float:
        return purity(self.rho)

    def fidelity_to(self, reference: State) -> float:
        return fidelity(self.rho, reference)


def fold_tags(thetas: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Map phases into [0, π) using X_{θ+π} = −X_θ"""
    thetas = np.mod(np.asarray(thetas, dtype=float), 2.0 * np.pi)
    values = np.asarray(values, dtype=float).copy()
    upper = thetas >= np.pi
    thetas[upper] -= np.pi
    values[upper] *= -1.0
    return thetas, values


def bin_samples(
    thetas: Sequence[float],
    values: Sequence[float],
    theta_bin_deg: float = 2.0,
    x_bin_width: float = 0.1
) -> BinnedData:
    """2-D histogram of phase-tagged samples; x bins are centred on multiples of the width"""
    thetas = np.asarray(thetas, dtype=float)
    values = np.asarray(values, dtype=float)
    if thetas.shape != values.shape:
        raise ValueError("Phase tags and values must have the same length")
    if thetas.size == 0:
        raise DegenerateError("No samples to bin")
    if np.any(~np.isfinite(thetas)):
        raise ValueError(f"{int(np.sum(~np.isfinite(thetas)))} samples carry no phase tag")
    thetas, values = fold_tags(thetas, values)
    theta_width = np.deg2rad(theta_bin_deg)
    n_theta = int(np.ceil(np.pi / theta_width - 1e-9))
    theta_index = np.clip(np.floor(thetas / theta_width).astype(np.int64), 0, n_theta - 1)
    x_index = np.rint(values / x_bin_width).astype(np.int64)
    offset = x_index.min()
    span = x_index.max() - offset + 1
    keys, counts = np.unique(theta_index * span + (x_index - offset), return_counts=True)
    return BinnedData(
        theta=(keys // span + 0.5) * theta_width,
        x=(keys % span + offset) * x_bin_width,
        counts=counts,
        theta_width=float(theta_width),
        x_width=float(x_bin_width)
    )


class MaxLikelihoodReconstructor:
    """Iterative maximum-likelihood estimator over binned homodyne data"""

    def __init__(
        self,
        cutoff: int = 14,
        tol: float = 1e-9,
        max_iter: int = 5000,
        require_convergence: bool = False
    ):
        if cutoff < 2:
            raise ValueError(f"Reconstruction cutoff must be >= 2, got {cutoff}")
        self.cutoff = cutoff
        self.tol = tol
        self.max_iter = max_iter
        self.require_convergence = require_convergence

    def _projectors(self, data: BinnedData) -> np.ndarray:
        """Rows ⟨x_θ|m⟩ = ψ_m(x) e^{−iθm} for every bin"""
        psi = hermite_functions(data.x, self.cutoff).T
        phases = np.exp(-1j * np.outer(data.theta, np.arange(self.cutoff)))
        return psi * phases

    @staticmethod
    def _probabilities(rows: np.ndarray, rho: np.ndarray, x_width: float) -> np.ndarray:
        values = np.real(np.sum((rows @ rho) * rows.conj(), axis=1)) * x_width
        return np.clip(values, MIN_PROBABILITY, None)

    @staticmethod
    def _log_likelihood(frequencies: np.ndarray, probabilities: np.ndarray) -> float:
        return float(np.dot(frequencies, np.log(probabilities)))

    @staticmethod
    def _update(rho: np.ndarray, operator: np.ndarray) -> np.ndarray:
        out = operator @ rho @ operator.conj().T
        out = 0.5 * (out + out.conj().T)
        return out / np.trace(out).real

    def reconstruct(self, data: BinnedData, reference: Optional[State] = None) -> ReconstructionResult:
        if len(data) == 0 or data.total == 0:
            raise DegenerateError("Reconstruction needs non-empty data")
        rows = self._projectors(data)
        frequencies = data.counts / data.counts.sum()
        identity = np.eye(self.cutoff, dtype=np.complex128)
        rho = identity / self.cutoff
        probabilities = self._probabilities(rows, rho, data.x_width)
        likelihood = self._log_likelihood(frequencies, probabilities)
        trace = [likelihood]
        converged = False
        stationary = False
        iteration = 0

        for iteration in range(1, self.max_iter + 1):
            weights = frequencies / probabilities * data.x_width
            r_operator = (rows.conj().T * weights) @ rows
            candidate = self._update(rho, r_operator)
            candidate_p = self._probabilities(rows, candidate, data.x_width)
            candidate_l = self._log_likelihood(frequencies, candidate_p)
            epsilon = 1.0
            dilutions = 0
            while candidate_l < likelihood and dilutions < MAX_DILUTIONS:
                candidate = self._update(rho, identity + epsilon * r_operator)
                candidate_p = self._probabilities(rows, candidate, data.x_width)
                candidate_l = self._log_likelihood(frequencies, candidate_p)
                epsilon *= 0.5
                dilutions += 1
            if candidate_l < likelihood:
                # No step size raises the likelihood: stationary point
                logger.debug(f"Likelihood stationary at iteration {iteration}")
                stationary = True
                break
            change = abs(candidate_l - likelihood) / max(abs(likelihood), 1e-300)
            rho, probabilities, likelihood = candidate, candidate_p, candidate_l
            trace.append(likelihood)
            if change < self.tol:
                converged = True
                break

        result = ReconstructionResult(
            rho=DensityOperator(self.cutoff, rho),
            iterations=iteration,
            log_likelihood=likelihood,
            converged=converged,
            log_likelihood_trace=tuple(trace),
            stationary=stationary
        )
        message = (
            f"Reconstruction: {iteration} iterations, log-likelihood {likelihood:.8f}, "
            f"purity {result.purity:.4f}, converged={converged}, stationary={stationary}"
        )
        if reference is not None:
            message += f", fidelity {result.fidelity_to(reference):.5f}"
        logger.info(message)
        if not converged:
            if stationary:
                reason = f"stalled at a stationary point after {iteration} iterations above tol={self.tol:g}"
            else:
                reason = f"did not converge within {self.max_iter} iterations"
            if self.require_convergence:
                raise ConvergenceError(f"Reconstruction {reason}")
            logger.warning(f"Reconstruction {reason}")
        return result


def reconstruct(
    data: BinnedData,
    cutoff: int = 14,
    tol: float = 1e-9,
    max_iter: int = 5000,
    reference: Optional[State] = None
) -> ReconstructionResult:
    return MaxLikelihoodReconstructor(cutoff, tol, max_iter).reconstruct(data, reference=reference)


# =========================================================================
# Wigner function
# =========================================================================

def _check_resolution(axis: np.ndarray, dim: int, name: str):
    if axis.size < 2:
        raise GridError(f"Wigner {name} grid needs at least two points")
    spacing = float(np.max(np.diff(axis)))
    limit = 0.5 * np.pi / np.sqrt(2.0 * dim + 1.0)
    if spacing > limit:
        raise GridError(f"Wigner {name} spacing {spacing:.3f} too coarse for cutoff {dim} (max {limit:.3f})")


def wigner(state: State, x: Sequence[float], p: Sequence[float]) -> np.ndarray:
    """
    W(x, p) on the product grid, shape ``(len(x), len(p))``.

    Laguerre series: W_mn = e^{−r²}/π (−1)ⁿ (x − ip)^{m−n} √(2^{m−n} n!/m!) L_n^{m−n}(2r²)
    for m ≥ n, with the vacuum normalized to 1/π at the origin.
    """
    rho = as_density(state)
    if rho.modes != 1:
        raise ValueError("wigner expects a one-mode state")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    _check_resolution(x, rho.dim, 'x')
    _check_resolution(p, rho.dim, 'p')
    grid_x, grid_p = np.meshgrid(x, p, indexing='ij')
    r2 = grid_x ** 2 + grid_p ** 2
    envelope = np.exp(-r2) / np.pi
    z = grid_x - 1j * grid_p
    surface = np.zeros(grid_x.shape)
    for n in range(rho.dim):
        for m in range(n, rho.dim):
            element = rho.entries[m, n]
            if element == 0:
                continue
            k = m - n
            coefficient = (-1) ** n * np.exp(0.5 * (k * np.log(2.0) + gammaln(n + 1) - gammaln(m + 1)))
            term = coefficient * z ** k * eval_genlaguerre(n, k, 2.0 * r2)
            weight = 1.0 if k == 0 else 2.0
            surface += weight * np.real(element * term)
    return envelope * surface


def write_wigner_csv(x: Sequence[float], p: Sequence[float], surface: np.ndarray, path: Union[str, Path]) -> Path:
    x = np.asarray(x)
    p = np.asarray(p)
    rows = ((x[i], p[j], surface[i, j]) for i in range(len(x)) for j in range(len(p)))
    try:
        return write_csv(path, ['x', 'p', 'W'], rows)
    except Exception as e:
        logger.error(f"Failed to write Wigner surface to {path}: {e}")
        raise

"""
Homodyne Statistics
===================
Quadrature marginals of one-mode states, variances in dB, inverse-CDF
sampling, cumulants κ₁–κ₄ and the quadrature sample CSV format.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from ..core.exceptions import DegenerateError, GridError
from ..core.fock import (
    VACUUM_VARIANCE,
    State,
    annihilation,
    as_density,
    pad,
)
from ..utils.helpers import read_csv, to_db, write_csv

logger = logging.getLogger(__name__)

MAX_SPACING = 0.05
TAIL_TOL = 1e-6
SAMPLING_POINTS = 4096
QUADRATURE_COLUMNS = ['trace_id', 'pulse_index', 'theta_assigned', 'x_value', 'is_distilled']

SeedLike = Union[None, int, np.random.SeedSequence, np.random.Generator]


@dataclass(frozen=True)
class QuadratureAxis:
    """Phase θ and a uniform grid of x values symmetric about zero"""

    theta: float
    grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size < 3:
            raise GridError("Quadrature grid needs at least three points")
        steps = np.diff(grid)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12) or steps[0] <= 0:
            raise GridError("Quadrature grid must be uniform and increasing")
        if abs(grid[0] + grid[-1]) > 1e-9:
            raise GridError("Quadrature grid must be symmetric about x = 0")
        if steps[0] > MAX_SPACING + 1e-12:
            raise GridError(f"Quadrature grid spacing {steps[0]:.4f} exceeds {MAX_SPACING}")
        grid.setflags(write=False)
        object.__setattr__(self, 'grid', grid)

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def half_extent(self) -> float:
        return float(self.grid[-1])

    @classmethod
    def symmetric(cls, theta: float, half_extent: float, points: int) -> "QuadratureAxis":
        return cls(theta, np.linspace(-half_extent, half_extent, points))

    @classmethod
    def for_state(cls, state: State, theta: float = 0.0, spacing: float = 0.02) -> "QuadratureAxis":
        """Grid reaching 6 standard deviations of the widest quadrature and past the cutoff's classical turning point"""
        rho = as_density(state)
        widest = float(np.max(np.linalg.eigvalsh(covariance(rho))))
        half_extent = max(6.0 * np.sqrt(widest), np.sqrt(2.0 * rho.dim + 1.0) + 3.0)
        points = 2 * int(np.ceil(half_extent / spacing)) + 1
        return cls.symmetric(theta, half_extent, points)


@dataclass(frozen=True)
class CumulantSet:
    """κ₁..κ₄ at phase θ; ``n_samples`` is None for exact state cumulants"""

    kappa1: float
    kappa2: float
    kappa3: float
    kappa4: float
    theta: float = float('nan')
    n_samples: Optional[int] = None

    def __post_init__(self):
        if not self.kappa2 > 0:
            raise ValueError(f"Second cumulant must be positive, got {self.kappa2}")

    def as_tuple(self):
        return (self.kappa1, self.kappa2, self.kappa3, self.kappa4)


@dataclass(frozen=True)
class QuadratureRecord:
    """One homodyne outcome; ``theta_assigned`` stays None until phase assignment"""

    trace_id: int
    pulse_index: int
    x_value: float
    is_distilled: bool = False
    theta_assigned: Optional[float] = None


# =========================================================================
# Wavefunctions and operators
# =========================================================================

def hermite_functions(x: np.ndarray, dim: int) -> np.ndarray:
    """Position wavefunctions ψ₀..ψ_{dim−1} evaluated on ``x``, shape ``(dim, len(x))``"""
    x = np.asarray(x, dtype=float)
    psi = np.zeros((dim,) + x.shape)
    psi[0] = np.pi ** -0.25 * np.exp(-0.5 * x ** 2)
    if dim > 1:
        psi[1] = np.sqrt(2.0) * x * psi[0]
    for n in range(1, dim - 1):
        psi[n + 1] = np.sqrt(2.0 / (n + 1)) * x * psi[n] - np.sqrt(n / (n + 1)) * psi[n - 1]
    return psi


def quadrature_operator(dim: int, theta: float = 0.0) -> np.ndarray:
    """X_θ = (a e^{−iθ} + a† e^{iθ})/√2 on the truncated basis"""
    a = annihilation(dim) * np.exp(-1j * theta)
    return (a + a.conj().T) / np.sqrt(2.0)


def _raw_moments(state: State, theta: float, order: int = 4) -> np.ndarray:
    rho = as_density(state)
    if rho.modes != 1:
        raise ValueError("Quadrature moments are defined for one-mode states")
    # Padding keeps powers of X exact on the populated levels
    padded = pad(rho, rho.dim + order)
    x_theta = quadrature_operator(padded.dim, theta)
    moments = np.empty(order + 1)
    power = np.eye(padded.dim, dtype=np.complex128)
    for k in range(order + 1):
        moments[k] = float(np.trace(padded.entries @ power).real)
        power = power @ x_theta
    return moments


def variance(state: State, theta: float = 0.0) -> float:
    """tr(ρX_θ²) − tr(ρX_θ)²"""
    m = _raw_moments(state, theta, order=2)
    return float(m[2] - m[1] ** 2)


def variance_db(state: State, theta: float = 0.0) -> float:
    return to_db(variance(state, theta), VACUUM_VARIANCE)


def covariance(state: State) -> np.ndarray:
    """Symmetrized (X, P) covariance matrix"""
    rho = as_density(state)
    padded = pad(rho, rho.dim + 2)
    x_op = quadrature_operator(padded.dim, 0.0)
    p_op = quadrature_operator(padded.dim, np.pi / 2)

    def expect(op):
        return float(np.trace(padded.entries @ op).real)

    mx, mp = expect(x_op), expect(p_op)
    vx = expect(x_op @ x_op) - mx ** 2
    vp = expect(p_op @ p_op) - mp ** 2
    cxp = 0.5 * expect(x_op @ p_op + p_op @ x_op) - mx * mp
    return np.array([[vx, cxp], [cxp, vp]])


# =========================================================================
# Marginals and sampling
# =========================================================================

def _density_on(rho_entries: np.ndarray, theta: float, x: np.ndarray, psi: Optional[np.ndarray] = None) -> np.ndarray:
    dim = rho_entries.shape[0]
    if psi is None:
        psi = hermite_functions(x, dim)
    phases = np.exp(-1j * theta * np.arange(dim))
    rotated = phases[:, None] * rho_entries * phases.conj()[None, :]
    return np.sum(psi * (rotated @ psi), axis=0).real


def marginal(state: State, axis: QuadratureAxis) -> np.ndarray:
    """Quadrature probability density p(x) = Σ ψ_m(x) ρ_mn e^{−iθ(m−n)} ψ_n(x) on the axis grid"""
    rho = as_density(state)
    if rho.modes != 1:
        raise ValueError("marginal expects a one-mode state")
    density = _density_on(rho.entries, axis.theta, axis.grid)
    mass = float(trapezoid(density, axis.grid))
    if abs(rho.trace - mass) > TAIL_TOL:
        message = f"Quadrature grid of half extent {axis.half_extent:.2f} misses probability {1.0 - mass:.3e}"
        logger.error(message)
        raise GridError(message)
    return density


def _phase_harmonics(rho_entries: np.ndarray, psi: np.ndarray):
    """
    Split the quadrature density by photon-number difference d = m − n:
    p_θ(x) = Re Σ_d e^{−iθd} H_d(x).
    """
    dim = rho_entries.shape[0]
    offsets = np.arange(-(dim - 1), dim)
    harmonics = np.empty((offsets.size, psi.shape[1]), dtype=np.complex128)
    for k, d in enumerate(offsets):
        rows = np.arange(max(0, d), min(dim, dim + d))
        cols = rows - d
        coefficients = rho_entries[rows, cols]
        harmonics[k] = np.sum(coefficients[:, None] * psi[rows] * psi[cols], axis=0)
    return offsets, harmonics


def _normalized_cdf(density: np.ndarray, grid: np.ndarray) -> np.ndarray:
    cdf = cumulative_trapezoid(np.clip(density, 0.0, None), grid, initial=0.0)
    if cdf[-1] <= 0:
        raise DegenerateError("Quadrature density vanishes on the sampling grid")
    return np.maximum.accumulate(cdf / cdf[-1])


def sample(state: State, theta: float, n: int, rng_seed: SeedLike = None) -> np.ndarray:
    """i.i.d. quadrature values by inverse CDF on a 4096-point grid, deterministic per seed"""
    if n < 1:
        raise ValueError(f"Sample count must be >= 1, got {n}")
    rho = as_density(state)
    reference = QuadratureAxis.for_state(rho, theta)
    axis = QuadratureAxis.symmetric(theta, reference.half_extent, SAMPLING_POINTS)
    # Validates the tail mass on the finer grid
    marginal(rho, axis)
    cdf = _normalized_cdf(_density_on(rho.entries, theta, axis.grid), axis.grid)
    rng = np.random.default_rng(rng_seed)
    return np.interp(rng.random(n), cdf, axis.grid)


class MarginalSampler:
    """
    Inverse-CDF tables on a phase grid over [0, π) for repeated sampling of one state.

    Phases outside the grid range are folded with X_{θ+π} = −X_θ; a requested
    phase uses the nearest tabulated one.
    """

    def __init__(self, state: State, n_phases: int = 720, points: int = SAMPLING_POINTS):
        rho = as_density(state)
        if n_phases < 1:
            raise ValueError(f"n_phases must be >= 1, got {n_phases}")
        reference = QuadratureAxis.for_state(rho)
        self.grid = np.linspace(-reference.half_extent, reference.half_extent, points)
        self.n_phases = n_phases
        self.phases = np.arange(n_phases) * np.pi / n_phases
        psi = hermite_functions(self.grid, rho.dim)
        offsets, harmonics = _phase_harmonics(rho.entries, psi)
        densities = (np.exp(-1j * np.outer(self.phases, offsets)) @ harmonics).real
        self.tables = np.stack([_normalized_cdf(d, self.grid) for d in densities])
        logger.debug(f"Built {n_phases} inverse-CDF tables on {points} points")

    def _locate(self, theta: float):
        theta = float(np.mod(theta, 2.0 * np.pi))
        sign = 1.0
        if theta >= np.pi:
            theta -= np.pi
            sign = -1.0
        index = int(np.rint(theta * self.n_phases / np.pi))
        if index == self.n_phases:
            index = 0
            sign = -sign
        return index, sign

    def sample(self, theta: float, n: int, rng: np.random.Generator) -> np.ndarray:
        index, sign = self._locate(theta)
        return sign * np.interp(rng.random(n), self.tables[index], self.grid)

    def sample_at(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One value per requested phase"""
        thetas = np.mod(np.asarray(thetas, dtype=float), 2.0 * np.pi)
        upper = thetas >= np.pi
        reduced = np.where(upper, thetas - np.pi, thetas)
        index = np.rint(reduced * self.n_phases / np.pi).astype(int)
        wrapped = index == self.n_phases
        index[wrapped] = 0
        signs = np.where(upper ^ wrapped, -1.0, 1.0)
        u = rng.random(thetas.size)
        values = np.empty(thetas.size)
        for k in np.unique(index):
            members = index == k
            values[members] = np.interp(u[members], self.tables[k], self.grid)
        return signs * values


def derive_seeds(root: Union[int, np.random.SeedSequence], count: int) -> List[np.random.SeedSequence]:
    """Child seeds for independent tasks: ``SeedSequence(root).spawn(count)``; repeatable for the same root"""
    if isinstance(root, np.random.SeedSequence):
        # A fresh copy, so spawning twice from one root gives the same children
        sequence = np.random.SeedSequence(root.entropy, spawn_key=root.spawn_key)
    else:
        sequence = np.random.SeedSequence(root)
    return sequence.spawn(count)


# =========================================================================
# Cumulants
# =========================================================================

def _cumulants_from_moments(m1: float, mu2: float, mu3: float, mu4: float, **kwargs) -> CumulantSet:
    return CumulantSet(kappa1=m1, kappa2=mu2, kappa3=mu3, kappa4=mu4 - 3.0 * mu2 ** 2, **kwargs)


def cumulants(samples: Sequence[float], theta: float = float('nan')) -> CumulantSet:
    """κ₁ = m₁, κ₂ = μ₂, κ₃ = μ₃, κ₄ = μ₄ − 3μ₂² from central sample moments"""
    values = np.asarray(samples, dtype=float)
    if values.size < 2:
        raise DegenerateError(f"Cumulants need at least two samples, got {values.size}")
    m1 = float(values.mean())
    centered = values - m1
    mu2 = float(np.mean(centered ** 2))
    if mu2 <= 0:
        raise DegenerateError("All samples are identical")
    mu3 = float(np.mean(centered ** 3))
    mu4 = float(np.mean(centered ** 4))
    return _cumulants_from_moments(m1, mu2, mu3, mu4, theta=theta, n_samples=int(values.size))


def cumulants_exact(state: State, theta: float = 0.0) -> CumulantSet:
    m = _raw_moments(state, theta, order=4)
    m1 = m[1]
    mu2 = m[2] - m1 ** 2
    mu3 = m[3] - 3 * m1 * m[2] + 2 * m1 ** 3
    mu4 = m[4] - 4 * m1 * m[3] + 6 * m1 ** 2 * m[2] - 3 * m1 ** 4
    return _cumulants_from_moments(float(m1), float(mu2), float(mu3), float(mu4), theta=theta)


def cumulant_standard_errors(samples: Sequence[float], n_batches: int = 20) -> np.ndarray:
    """Batch-means standard errors of κ₁..κ₄"""
    values = np.asarray(samples, dtype=float)
    if n_batches < 2 or values.size < 2 * n_batches:
        raise DegenerateError(f"Need at least {2 * n_batches} samples for {n_batches} batches")
    batches = np.array_split(values, n_batches)
    estimates = np.array([cumulants(b).as_tuple() for b in batches])
    return estimates.std(axis=0, ddof=1) / np.sqrt(n_batches)


def binned_cumulants(
    thetas: Sequence[float],
    values: Sequence[float],
    bin_deg: float = 0.5,
    span: float = np.pi / 2,
    min_count: int = 2
) -> List[CumulantSet]:
    """Cumulants of phase-tagged samples in bins of ``bin_deg`` over [0, span]"""
    thetas = np.asarray(thetas, dtype=float)
    values = np.asarray(values, dtype=float)
    if thetas.shape != values.shape:
        raise ValueError("Phase tags and values must have the same length")
    width = np.deg2rad(bin_deg)
    n_bins = int(np.ceil(span / width - 1e-9))
    index = np.clip((thetas / width).astype(int), 0, n_bins - 1)
    curve = []
    for b in range(n_bins):
        members = values[index == b]
        if members.size < min_count:
            continue
        curve.append(cumulants(members, theta=(b + 0.5) * width))
    return curve


# =========================================================================
# Sample export
# =========================================================================

def write_quadrature_csv(records: Iterable[QuadratureRecord], path: Union[str, Path]) -> Path:
    rows = (
        (r.trace_id, r.pulse_index, r.theta_assigned, r.x_value, r.is_distilled)
        for r in records
    )
    try:
        return write_csv(path, QUADRATURE_COLUMNS, rows)
    except Exception as e:
        logger.error(f"Failed to write quadrature samples to {path}: {e}")
        raise


def read_quadrature_csv(path: Union[str, Path]) -> List[QuadratureRecord]:
    records = []
    for row in read_csv(path):
        theta = row['theta_assigned']
        records.append(QuadratureRecord(
            trace_id=int(row['trace_id']),
            pulse_index=int(row['pulse_index']),
            x_value=float(row['x_value']),
            is_distilled=row['is_distilled'] == '1',
            theta_assigned=float(theta) if theta != '' else None
        ))
    return records


def records_to_arrays(records: Sequence[QuadratureRecord]) -> Dict[str, np.ndarray]:
    """Column arrays of tagged records; untagged phases become NaN"""
    return {
        'theta': np.array([np.nan if r.theta_assigned is None else r.theta_assigned for r in records]),
        'x': np.array([r.x_value for r in records]),
        'is_distilled': np.array([r.is_distilled for r in records], dtype=bool),
    }

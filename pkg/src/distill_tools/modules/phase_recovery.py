"""
Phase Recovery
==============
Relative-phase assignment for homodyne traces whose local-oscillator phase
was not recorded.

Each trace holds one distilled pulse surrounded by thousands of undistilled
reference pulses taken at the same (unknown) phase. The variance of the
references locates the trace on the squeezing ellipse:

1. fit the ellipse (V_x, V_p) to the distribution of per-trace variances;
2. simulate the per-trace variance distribution on a phase grid;
3. invert it with a uniform phase prior into phase distributions per variance;
4. draw a phase for each trace and sort the distilled pulses by phase.

Phases are folded into [0, π/2], which is only valid for states whose
quadrature statistics are symmetric under θ → −θ and θ → π − θ.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.exceptions import DegenerateError, GridError
from ..core.fock import State, as_density
from ..utils.helpers import to_db
from .homodyne import MarginalSampler, derive_seeds

logger = logging.getLogger(__name__)

HALF_PI = np.pi / 2
MIN_TRACES_FOR_FIT = 100
MIN_DRAWS_PER_PHASE_BIN = 100


@dataclass(frozen=True)
class TraceRecord:
    """
    One homodyne trace.

    ``reference_values`` may be dropped after generation; the per-trace
    variance and count are what the estimator uses. ``true_phase`` is only
    known for synthetic data.
    """

    trace_id: int
    distilled_value: float
    reference_variance: float
    n_reference: int
    reference_values: Optional[np.ndarray] = None
    true_phase: Optional[float] = None

    @classmethod
    def from_values(
        cls,
        trace_id: int,
        reference_values: np.ndarray,
        distilled_value: float,
        true_phase: Optional[float] = None,
        keep_values: bool = True
    ) -> "TraceRecord":
        values = np.asarray(reference_values, dtype=float)
        if values.size < 1:
            raise ValueError("A trace needs at least one reference pulse")
        return cls(
            trace_id=trace_id,
            distilled_value=float(distilled_value),
            reference_variance=float(np.var(values)),
            n_reference=int(values.size),
            reference_values=values if keep_values else None,
            true_phase=true_phase
        )

    def without_truth(self) -> "TraceRecord":
        return TraceRecord(self.trace_id, self.distilled_value, self.reference_variance, self.n_reference,
                           self.reference_values, None)


@dataclass(frozen=True)
class PhaseAssignment:
    trace_id: int
    theta_assigned: float
    reference_variance: float
    iteration: int = 0
    out_of_support: bool = False

    def __post_init__(self):
        if not 0.0 <= self.theta_assigned <= HALF_PI:
            raise ValueError(f"Assigned phase {self.theta_assigned} outside [0, pi/2]")


@dataclass(frozen=True)
class PhaseDriftModel:
    """
    Trace phases: ``uniform`` over [0, 2π) or a ``sinusoidal`` piezo sweep.

    The sweep is φ(t) = offset + amplitude·sin(2π f t + φ₀) sampled at the trace
    repetition rate, with random offset and start phase.
    """

    kind: str = 'uniform'
    frequency_hz: float = 10.0
    amplitude: float = np.pi
    trace_rate_hz: float = 1000.0

    def __post_init__(self):
        if self.kind not in ('uniform', 'sinusoidal'):
            raise ValueError(f"Unknown phase drift model '{self.kind}'")
        if self.trace_rate_hz <= 0:
            raise ValueError("Trace rate must be positive")

    def phases(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == 'uniform':
            return rng.uniform(0.0, 2.0 * np.pi, n)
        offset, start = rng.uniform(0.0, 2.0 * np.pi, 2)
        times = np.arange(n) / self.trace_rate_hz
        return np.mod(offset + self.amplitude * np.sin(2.0 * np.pi * self.frequency_hz * times + start), 2.0 * np.pi)


@dataclass(frozen=True)
class EllipseFit:
    v_x: float
    v_p: float
    distance: float


@dataclass(frozen=True)
class SpreadStatistics:
    """Squeezed-quadrature variances over repeated assignments"""

    distilled: np.ndarray
    reference: np.ndarray
    window_deg: float

    @property
    def distilled_mean(self) -> float:
        return float(np.mean(self.distilled))

    @property
    def distilled_std(self) -> float:
        return float(np.std(self.distilled, ddof=1))

    @property
    def reference_mean(self) -> float:
        return float(np.mean(self.reference))

    @property
    def reference_std(self) -> float:
        return float(np.std(self.reference, ddof=1))

    def summary(self) -> Dict[str, float]:
        return {
            'distilled_mean_db': to_db(self.distilled_mean),
            'distilled_std_db': float(10.0 / np.log(10.0) * self.distilled_std / self.distilled_mean),
            'reference_mean_db': to_db(self.reference_mean),
            'reference_std_db': float(10.0 / np.log(10.0) * self.reference_std / self.reference_mean),
            'iterations': int(len(self.distilled)),
            'window_deg': self.window_deg
        }


# =========================================================================
# Phase folding
# =========================================================================

def fold_phase(theta):
    """Map phases onto [0, π/2] using the symmetries θ → −θ and θ → π − θ"""
    folded = np.mod(np.asarray(theta, dtype=float), np.pi)
    folded = np.where(folded > HALF_PI, np.pi - folded, folded)
    return float(folded) if folded.ndim == 0 else folded


def check_phase_symmetry(state: State, tol: float = 1e-10) -> None:
    """Folding needs a density matrix that is real in the Fock basis"""
    rho = as_density(state)
    if not rho.is_real(tol):
        raise DegenerateError("State is not symmetric under theta -> -theta; phase folding would bias the estimate")


def rms_phase_error(assignments: Sequence[PhaseAssignment], truth: Dict[int, float]) -> float:
    """RMS difference between assigned phases and folded ground truth"""
    errors = [a.theta_assigned - fold_phase(truth[a.trace_id]) for a in assignments if a.trace_id in truth]
    if not errors:
        raise DegenerateError("No ground truth available for the assigned traces")
    return float(np.sqrt(np.mean(np.square(errors))))


# =========================================================================
# Synthetic traces
# =========================================================================

class TraceGenerator:
    """Draws traces of reference pulses plus one distilled pulse at a shared phase"""

    def __init__(
        self,
        initial_state: State,
        distilled_state: State,
        pulses_per_trace: int = 8000,
        drift: Optional[PhaseDriftModel] = None,
        n_phases: int = 720
    ):
        if pulses_per_trace < 1:
            raise ValueError(f"pulses_per_trace must be >= 1, got {pulses_per_trace}")
        self.pulses_per_trace = pulses_per_trace
        self.drift = drift or PhaseDriftModel()
        self.reference_sampler = MarginalSampler(initial_state, n_phases=n_phases)
        self.distilled_sampler = MarginalSampler(distilled_state, n_phases=n_phases)

    def iter_traces(self, n_traces: int, seed: int = 0, keep_values: bool = False) -> Iterator[TraceRecord]:
        """Child seed 0 drives the phase drift, child ``i + 1`` drives trace ``i``"""
        seeds = derive_seeds(seed, n_traces + 1)
        phases = self.drift.phases(n_traces, np.random.default_rng(seeds[0]))
        for trace_id in range(n_traces):
            rng = np.random.default_rng(seeds[trace_id + 1])
            phase = float(phases[trace_id])
            references = self.reference_sampler.sample(phase, self.pulses_per_trace, rng)
            distilled = self.distilled_sampler.sample(phase, 1, rng)[0]
            yield TraceRecord.from_values(trace_id, references, distilled, true_phase=phase, keep_values=keep_values)


def generate_traces(
    initial_state: State,
    distilled_state: State,
    n_traces: int,
    pulses_per_trace: int = 8000,
    phase_drift_model: Optional[PhaseDriftModel] = None,
    seed: int = 0,
    keep_values: bool = True
) -> List[TraceRecord]:
    try:
        generator = TraceGenerator(initial_state, distilled_state, pulses_per_trace, phase_drift_model)
        traces = list(generator.iter_traces(n_traces, seed=seed, keep_values=keep_values))
    except Exception as e:
        logger.error(f"Failed to generate {n_traces} traces: {e}")
        raise
    logger.info(f"Generated {len(traces)} traces of {pulses_per_trace} reference pulses")
    return traces


def write_truth_sidecar(traces: Sequence[TraceRecord], path: Union[str, Path]) -> Path:
    """Ground-truth phases, kept apart from the trace data the estimator reads"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    truth = {str(t.trace_id): t.true_phase for t in traces if t.true_phase is not None}
    with open(path, 'w') as f:
        json.dump({'true_phase': truth}, f, indent=2, sort_keys=True)
    return path


def read_truth_sidecar(path: Union[str, Path]) -> Dict[int, float]:
    with open(path, 'r') as f:
        data = json.load(f)
    return {int(k): float(v) for k, v in data['true_phase'].items()}


def _observed(traces: Sequence[TraceRecord]) -> Tuple[np.ndarray, np.ndarray, int]:
    if not traces:
        raise DegenerateError("No traces given")
    variances = np.array([t.reference_variance for t in traces])
    distilled = np.array([t.distilled_value for t in traces])
    counts = {t.n_reference for t in traces}
    if len(counts) != 1:
        raise DegenerateError(f"Traces hold different numbers of reference pulses: {sorted(counts)}")
    return variances, distilled, counts.pop()


# =========================================================================
# Step 1: ellipse fit
# =========================================================================

def fit_ellipse(
    traces: Sequence[TraceRecord],
    n_sim: int = 20000,
    n_bins: int = 100,
    grid_points: int = 41,
    seed: int = 0
) -> EllipseFit:
    """
    (V_x, V_p) whose simulated per-trace variance distribution under uniform
    phase is closest in binned L2 distance to the observed one.

    A coarse grid is refined once around its best point; the same random
    numbers are reused for every candidate.
    """
    variances, _, pulses = _observed(traces)
    if pulses < 2:
        raise DegenerateError("Traces with a single reference pulse carry no variance information")
    if len(variances) < MIN_TRACES_FOR_FIT:
        raise DegenerateError(f"Ellipse fit needs at least {MIN_TRACES_FOR_FIT} traces, got {len(variances)}")
    if np.ptp(variances) <= 0:
        raise DegenerateError("All trace variances are equal")
    low, median, high = np.quantile(variances, [0.001, 0.5, 0.999])
    pad = 0.05 * (high - low)
    edges = np.linspace(low - pad, high + pad, n_bins + 1)
    observed, _ = np.histogram(variances, bins=edges)
    observed = observed / len(variances)

    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, HALF_PI, n_sim)
    scale = rng.chisquare(pulses - 1, n_sim) / pulses

    def distance(v_x: float, v_p: float) -> float:
        simulated = (v_x * np.cos(phases) ** 2 + v_p * np.sin(phases) ** 2) * scale
        counts, _ = np.histogram(simulated, bins=edges)
        return float(np.sum((counts / n_sim - observed) ** 2))

    def search(x_range, p_range):
        best = (np.inf, None, None)
        for v_x in np.linspace(*x_range, grid_points):
            for v_p in np.linspace(*p_range, grid_points):
                if v_p < v_x:
                    continue
                d = distance(v_x, v_p)
                if d < best[0]:
                    best = (d, v_x, v_p)
        return best

    x_range = (max(0.5 * low, 1e-12), median)
    p_range = (median, 1.5 * high)
    d, v_x, v_p = search(x_range, p_range)
    x_step = (x_range[1] - x_range[0]) / (grid_points - 1)
    p_step = (p_range[1] - p_range[0]) / (grid_points - 1)
    d, v_x, v_p = search(
        (max(v_x - 2 * x_step, 1e-12), v_x + 2 * x_step),
        (max(v_p - 2 * p_step, 1e-12), v_p + 2 * p_step)
    )
    fit = EllipseFit(v_x=float(v_x), v_p=float(v_p), distance=d)
    logger.info(f"Fitted squeezing ellipse V_x={fit.v_x:.5f}, V_p={fit.v_p:.5f} (distance {d:.3e})")
    return fit


# =========================================================================
# Steps 2-3: phase-resolved variance model and its inversion
# =========================================================================

@dataclass(frozen=True)
class VariancePhaseModel:
    """
    Monte-Carlo table of per-trace variance estimates on a phase grid over
    [0, π/2] and its Bayes inversion under a uniform phase prior.
    """

    v_x: float
    v_p: float
    pulses_per_trace: int
    phase_edges: np.ndarray
    variance_edges: np.ndarray
    counts: np.ndarray  # [phase_bin, variance_bin]
    posterior: np.ndarray = field(init=False)  # [variance_bin, phase_bin]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        column = counts.T
        totals = column.sum(axis=1, keepdims=True)
        with np.errstate(invalid='ignore', divide='ignore'):
            posterior = np.where(totals > 0, column / totals, 0.0)
        object.__setattr__(self, 'posterior', posterior)

    @property
    def phase_centers(self) -> np.ndarray:
        return 0.5 * (self.phase_edges[:-1] + self.phase_edges[1:])

    @property
    def variance_centers(self) -> np.ndarray:
        return 0.5 * (self.variance_edges[:-1] + self.variance_edges[1:])

    def mean_variance(self) -> np.ndarray:
        """Mean simulated variance per phase bin"""
        weights = self.counts / self.counts.sum(axis=1, keepdims=True)
        return weights @ self.variance_centers

    def variance_bins(self, variances: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Variance-bin index per value, snapped to the nearest populated bin; second array flags snaps"""
        variances = np.asarray(variances, dtype=float)
        n_bins = len(self.variance_edges) - 1
        raw = np.searchsorted(self.variance_edges, variances, side='right') - 1
        outside = (raw < 0) | (raw >= n_bins)
        index = np.clip(raw, 0, n_bins - 1)
        populated = np.flatnonzero(self.posterior.sum(axis=1) > 0)
        empty = ~np.isin(index, populated)
        if np.any(empty):
            nearest = populated[np.abs(populated[None, :] - index[empty][:, None]).argmin(axis=1)]
            index[empty] = nearest
        return index, outside | empty

    def phase_distribution(self, variance: float) -> np.ndarray:
        index, _ = self.variance_bins(np.array([variance]))
        return self.posterior[index[0]]

    def draw(self, variances: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """One phase per variance from φ(V); uniform within the chosen phase bin"""
        index, flagged = self.variance_bins(variances)
        cdf = np.cumsum(self.posterior[index], axis=1)
        u = rng.random(len(index)) * cdf[:, -1]
        phase_bin = np.minimum((cdf < u[:, None]).sum(axis=1), len(self.phase_edges) - 2)
        low = self.phase_edges[phase_bin]
        width = self.phase_edges[phase_bin + 1] - low
        phases = np.clip(low + rng.random(len(index)) * width, 0.0, HALF_PI)
        return phases, flagged


def variance_phase_model(
    v_x: float,
    v_p: float,
    pulses_per_trace: int = 8000,
    n_mc: int = 200000,
    seed: int = 0,
    n_phase_bins: int = 90,
    n_variance_bins: int = 200
) -> VariancePhaseModel:
    """
    Simulate per-trace variance estimates V(φ)·χ²_{n−1}/n with an equal number
    of draws in every phase bin, so normalizing each variance bin over phase
    applies the uniform prior.
    """
    if v_x <= 0 or v_p < v_x:
        raise ValueError(f"Need 0 < V_x <= V_p, got V_x={v_x}, V_p={v_p}")
    if pulses_per_trace < 2:
        raise ValueError(f"A per-trace variance needs at least two pulses, got {pulses_per_trace}")
    if n_mc < MIN_DRAWS_PER_PHASE_BIN * n_phase_bins:
        raise GridError(
            f"n_mc={n_mc} too small for {n_phase_bins} phase bins "
            f"(need >= {MIN_DRAWS_PER_PHASE_BIN * n_phase_bins})"
        )
    rng = np.random.default_rng(seed)
    phase_edges = np.linspace(0.0, HALF_PI, n_phase_bins + 1)
    width = phase_edges[1]
    per_bin = n_mc // n_phase_bins
    phase_bin = np.repeat(np.arange(n_phase_bins), per_bin)
    phases = (phase_bin + rng.random(phase_bin.size)) * width
    scale = rng.chisquare(pulses_per_trace - 1, phase_bin.size) / pulses_per_trace
    spread = np.sqrt(2.0 / pulses_per_trace)
    simulated = (v_x * np.cos(phases) ** 2 + v_p * np.sin(phases) ** 2) * scale
    low = max(0.0, v_x * (1.0 - 6.0 * spread))
    high = v_p * (1.0 + 6.0 * spread)
    variance_edges = np.linspace(low, high, n_variance_bins + 1)
    counts, _, _ = np.histogram2d(phases, simulated, bins=[phase_edges, variance_edges])
    logger.info(
        f"Variance model: V_x={v_x:.5f}, V_p={v_p:.5f}, {per_bin * n_phase_bins} draws, "
        f"{n_phase_bins}x{n_variance_bins} bins"
    )
    return VariancePhaseModel(
        v_x=float(v_x),
        v_p=float(v_p),
        pulses_per_trace=pulses_per_trace,
        phase_edges=phase_edges,
        variance_edges=variance_edges,
        counts=counts
    )


# =========================================================================
# Step 4: assignment and sorting
# =========================================================================

def assign_phases(
    traces: Sequence[TraceRecord],
    model: VariancePhaseModel,
    seed: Union[int, np.random.SeedSequence] = 0,
    iteration: int = 0
) -> List[PhaseAssignment]:
    variances, _, pulses = _observed(traces)
    if pulses != model.pulses_per_trace:
        logger.warning(f"Traces hold {pulses} pulses but the model assumes {model.pulses_per_trace}")
    rng = np.random.default_rng(seed)
    phases, flagged = model.draw(variances, rng)
    n_flagged = int(flagged.sum())
    if n_flagged:
        logger.warning(f"{n_flagged} trace variances fall outside the model support; assigned the nearest bin")
    return [
        PhaseAssignment(
            trace_id=t.trace_id,
            theta_assigned=float(phi),
            reference_variance=t.reference_variance,
            iteration=iteration,
            out_of_support=bool(flag)
        )
        for t, phi, flag in zip(traces, phases, flagged)
    ]


def sorted_variance(
    traces: Sequence[TraceRecord],
    assignments: Sequence[PhaseAssignment],
    center: float = 0.0,
    window_deg: float = 5.0
) -> Tuple[float, float]:
    """
    Distilled-pulse variance and mean reference variance of the traces
    assigned within ``window_deg`` of ``center``.
    """
    phases = np.array([a.theta_assigned for a in assignments])
    variances, distilled, _ = _observed(traces)
    selected = np.abs(phases - center) <= np.deg2rad(window_deg)
    count = int(selected.sum())
    if count < 2:
        raise DegenerateError(f"Only {count} traces assigned within {window_deg} deg of {center:.3f} rad")
    return float(np.var(distilled[selected], ddof=1)), float(np.mean(variances[selected]))


def posterior_variance_estimate(traces: Sequence[TraceRecord], model: VariancePhaseModel) -> Tuple[float, float]:
    """
    Distilled-state (V_x, V_p) by regressing squared distilled values on the
    posterior expectations of cos²φ and sin²φ; assumes zero-mean quadratures.
    """
    variances, distilled, _ = _observed(traces)
    index, _ = model.variance_bins(variances)
    posterior = model.posterior[index]
    weights = np.cos(model.phase_centers) ** 2
    design = np.column_stack([posterior @ weights, posterior @ (1.0 - weights)])
    solution, *_ = np.linalg.lstsq(design, distilled ** 2, rcond=None)
    return float(solution[0]), float(solution[1])


def assignment_spread(
    traces: Sequence[TraceRecord],
    model: VariancePhaseModel,
    n_iterations: int = 80,
    seed: int = 0,
    window_deg: float = 5.0,
    center: float = 0.0
) -> SpreadStatistics:
    """Repeat the assignment with child seeds and collect the sorted variances"""
    if n_iterations < 2:
        raise ValueError(f"n_iterations must be >= 2, got {n_iterations}")
    distilled = np.empty(n_iterations)
    reference = np.empty(n_iterations)
    for i, child in enumerate(derive_seeds(seed, n_iterations)):
        assignments = assign_phases(traces, model, seed=child, iteration=i)
        distilled[i], reference[i] = sorted_variance(traces, assignments, center=center, window_deg=window_deg)
    stats = SpreadStatistics(distilled=distilled, reference=reference, window_deg=window_deg)
    summary = stats.summary()
    logger.info(
        f"Spread over {n_iterations} assignments: distilled {summary['distilled_mean_db']:.3f} "
        f"+/- {summary['distilled_std_db']:.3f} dB, reference {summary['reference_mean_db']:.3f} "
        f"+/- {summary['reference_std_db']:.3f} dB"
    )
    return stats

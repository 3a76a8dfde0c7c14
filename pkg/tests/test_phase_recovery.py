import numpy as np
import pytest

from distill_tools.core.exceptions import DegenerateError, GridError
from distill_tools.core.fock import phase_rotate
from distill_tools.modules.distillation import EfficiencyBudget, TapConfig, assemble_detected_mixture
from distill_tools.modules.homodyne import MarginalSampler, variance, variance_db
from distill_tools.modules.pdc_model import SchmidtSpectrum
from distill_tools.modules.phase_recovery import (
    PhaseAssignment,
    PhaseDriftModel,
    TraceGenerator,
    TraceRecord,
    assign_phases,
    assignment_spread,
    check_phase_symmetry,
    fit_ellipse,
    fold_phase,
    generate_traces,
    posterior_variance_estimate,
    read_truth_sidecar,
    rms_phase_error,
    sorted_variance,
    variance_phase_model,
    write_truth_sidecar,
)

REFERENCE = (0.34, 1.14)
DISTILLED = (0.2, 2.0)
PULSES = 500


def ellipse(v, phi):
    return v[0] * np.cos(phi) ** 2 + v[1] * np.sin(phi) ** 2


def synthetic_traces(n, seed, pulses=PULSES):
    """Per-trace statistics drawn directly: V(φ)·χ²/n for the references, one normal value for the distilled pulse"""
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2 * np.pi, n)
    variances = ellipse(REFERENCE, phases) * rng.chisquare(pulses - 1, n) / pulses
    distilled = rng.normal(0.0, np.sqrt(ellipse(DISTILLED, phases)))
    return [
        TraceRecord(i, float(d), float(v), pulses, true_phase=float(phi))
        for i, (d, v, phi) in enumerate(zip(distilled, variances, phases))
    ]


@pytest.fixture(scope="module")
def traces():
    return synthetic_traces(3000, seed=13)


@pytest.fixture(scope="module")
def model():
    return variance_phase_model(*REFERENCE, pulses_per_trace=PULSES, n_mc=180_000, seed=1)


class TestFolding:
    @pytest.mark.parametrize("theta, expected", [
        (0.3, 0.3),
        (-0.3, 0.3),
        (np.pi - 0.2, 0.2),
        (np.pi + 0.1, 0.1),
        (2 * np.pi - 0.4, 0.4),
    ])
    def test_symmetries(self, theta, expected):
        assert fold_phase(theta) == pytest.approx(expected)

    def test_arrays(self):
        folded = fold_phase(np.linspace(-7, 7, 101))
        assert folded.shape == (101,)
        assert np.all((folded >= 0) & (folded <= np.pi / 2))

    def test_real_states_are_symmetric(self, lossy_6db_state):
        check_phase_symmetry(lossy_6db_state)

    def test_rotated_state_is_not(self, lossy_6db_state):
        with pytest.raises(DegenerateError, match="phase folding"):
            check_phase_symmetry(phase_rotate(lossy_6db_state, 0.3))


class TestRecords:
    def test_from_values(self):
        record = TraceRecord.from_values(4, np.array([1.0, -1.0, 1.0, -1.0]), 0.5, true_phase=0.2)
        assert record.reference_variance == pytest.approx(1.0)
        assert record.n_reference == 4
        assert record.without_truth().true_phase is None

    def test_values_can_be_dropped(self):
        record = TraceRecord.from_values(0, np.ones(3), 0.0, keep_values=False)
        assert record.reference_values is None

    def test_empty_trace(self):
        with pytest.raises(ValueError):
            TraceRecord.from_values(0, np.array([]), 0.0)

    def test_assignment_range(self):
        with pytest.raises(ValueError):
            PhaseAssignment(0, 1.7, 0.5)


class TestDrift:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            PhaseDriftModel(kind='random_walk')

    def test_uniform_covers_the_circle(self):
        phases = PhaseDriftModel().phases(10_000, np.random.default_rng(0))
        assert phases.min() >= 0 and phases.max() < 2 * np.pi
        assert np.mean(phases) == pytest.approx(np.pi, abs=0.1)

    def test_sinusoidal_sweep_is_continuous(self):
        drift = PhaseDriftModel(kind='sinusoidal', frequency_hz=10.0, amplitude=1.0, trace_rate_hz=1000.0)
        phases = drift.phases(500, np.random.default_rng(2))
        steps = np.abs(np.angle(np.exp(1j * np.diff(phases))))
        assert steps.max() <= 2 * np.pi * 10.0 / 1000.0 + 1e-12


class TestTraceGenerator:
    @pytest.fixture(scope="class")
    def generator(self, lossy_6db_state):
        return TraceGenerator(lossy_6db_state, lossy_6db_state, pulses_per_trace=50)

    def test_reproducible(self, generator):
        first = list(generator.iter_traces(5, seed=3))
        second = list(generator.iter_traces(5, seed=3))
        assert [t.distilled_value for t in first] == [t.distilled_value for t in second]
        assert [t.true_phase for t in first] == [t.true_phase for t in second]

    def test_record_shape(self, generator):
        record = next(generator.iter_traces(1, seed=0))
        assert record.n_reference == 50
        assert record.reference_values is None
        assert 0.0 <= record.true_phase < 2 * np.pi

    def test_rejects_empty_traces(self, lossy_6db_state):
        with pytest.raises(ValueError):
            TraceGenerator(lossy_6db_state, lossy_6db_state, pulses_per_trace=0)

    def test_generate_keeps_values(self, lossy_6db_state):
        traces = generate_traces(lossy_6db_state, lossy_6db_state, 3, pulses_per_trace=20, seed=1)
        assert [t.trace_id for t in traces] == [0, 1, 2]
        assert all(t.reference_values.shape == (20,) for t in traces)

    def test_truth_sidecar(self, tmp_path, generator):
        traces = list(generator.iter_traces(4, seed=8))
        path = write_truth_sidecar(traces, tmp_path / "truth" / "phases.json")
        truth = read_truth_sidecar(path)
        assert truth == {t.trace_id: pytest.approx(t.true_phase) for t in traces}


class TestEllipseFit:
    def test_recovers_the_reference_ellipse(self, traces):
        fit = fit_ellipse(traces, seed=3)
        assert fit.v_x == pytest.approx(REFERENCE[0], rel=0.15)
        assert fit.v_p == pytest.approx(REFERENCE[1], rel=0.15)
        assert fit.v_x < fit.v_p

    def test_single_pulse_traces(self):
        traces = [TraceRecord(i, 0.0, 0.0, 1) for i in range(200)]
        with pytest.raises(DegenerateError):
            fit_ellipse(traces)

    def test_too_few_traces(self, traces):
        with pytest.raises(DegenerateError, match="at least 100"):
            fit_ellipse(traces[:50])

    def test_constant_variances(self):
        traces = [TraceRecord(i, 0.0, 0.5, 10) for i in range(150)]
        with pytest.raises(DegenerateError):
            fit_ellipse(traces)

    def test_mixed_pulse_counts(self):
        traces = [TraceRecord(i, 0.0, 0.5 + i, 10 + i % 2) for i in range(150)]
        with pytest.raises(DegenerateError, match="different numbers"):
            fit_ellipse(traces)


class TestVariancePhaseModel:
    def test_needs_enough_draws_per_bin(self):
        with pytest.raises(GridError, match="too small"):
            variance_phase_model(*REFERENCE, n_mc=1000)

    def test_needs_ordered_ellipse(self):
        with pytest.raises(ValueError):
            variance_phase_model(1.0, 0.5)

    def test_mean_variance_follows_the_ellipse(self, model):
        scale = (PULSES - 1) / PULSES
        mean = model.mean_variance()
        assert mean[0] == pytest.approx(REFERENCE[0] * scale, rel=0.02)
        assert mean[-1] == pytest.approx(REFERENCE[1] * scale, rel=0.02)
        assert np.all(np.diff(mean[::10]) > 0)

    def test_posterior_rows_are_distributions(self, model):
        totals = model.posterior.sum(axis=1)
        populated = totals > 0
        assert np.allclose(totals[populated], 1.0)
        assert model.posterior.shape == (200, 90)

    def test_small_variance_means_small_phase(self, model):
        low = model.phase_distribution(REFERENCE[0])
        high = model.phase_distribution(REFERENCE[1])
        assert low @ model.phase_centers < np.pi / 8
        assert high @ model.phase_centers > 3 * np.pi / 8

    def test_out_of_support_values_are_flagged(self, model):
        _, flagged = model.variance_bins(np.array([0.7, 50.0]))
        assert flagged.tolist() == [False, True]


class TestAssignment:
    def test_phases_stay_folded(self, traces, model):
        assignments = assign_phases(traces, model, seed=4)
        assert [a.trace_id for a in assignments] == [t.trace_id for t in traces]
        assert all(0.0 <= a.theta_assigned <= np.pi / 2 for a in assignments)

    def test_reproducible(self, traces, model):
        first = [a.theta_assigned for a in assign_phases(traces, model, seed=5)]
        second = [a.theta_assigned for a in assign_phases(traces, model, seed=5)]
        assert first == second

    def test_beats_random_guessing(self, traces, model):
        truth = {t.trace_id: t.true_phase for t in traces}
        error = rms_phase_error(assign_phases(traces, model, seed=6), truth)
        # Two independent uniform phases on [0, π/2] differ by π/(2√6) in RMS
        assert error < 0.5 * np.pi / (2 * np.sqrt(6))

    def test_assigned_phases_are_uniform(self, traces, model):
        assigned = np.array([a.theta_assigned for a in assign_phases(traces, model, seed=8)])
        counts, _ = np.histogram(assigned, bins=9, range=(0.0, np.pi / 2))
        expected = len(assigned) / 9
        sigma = np.sqrt(len(assigned) * (1 / 9) * (8 / 9))
        assert np.all(np.abs(counts - expected) < 5 * sigma)

    def test_rms_error_folds_truth(self):
        assignments = [PhaseAssignment(0, 0.1, 0.3), PhaseAssignment(1, 0.5, 0.3)]
        assert rms_phase_error(assignments, {0: -0.1, 1: np.pi - 0.5}) == pytest.approx(0.0, abs=1e-12)

    def test_rms_error_needs_truth(self):
        with pytest.raises(DegenerateError):
            rms_phase_error([PhaseAssignment(0, 0.1, 0.3)], {})


class TestSorting:
    def test_squeezed_side_is_quieter(self, traces, model):
        assignments = assign_phases(traces, model, seed=7)
        squeezed, reference = sorted_variance(traces, assignments, center=0.0)
        anti, _ = sorted_variance(traces, assignments, center=np.pi / 2)
        assert squeezed < 0.5 * anti
        assert reference == pytest.approx(REFERENCE[0], rel=0.1)

    def test_empty_window(self, traces, model):
        assignments = assign_phases(traces, model, seed=7)
        with pytest.raises(DegenerateError):
            sorted_variance(traces, assignments, center=0.0, window_deg=1e-9)

    def test_posterior_regression(self, traces, model):
        v_x, v_p = posterior_variance_estimate(traces, model)
        assert v_x < 0.6
        assert v_p == pytest.approx(DISTILLED[1], rel=0.2)

    def test_spread_over_iterations(self, traces, model):
        stats = assignment_spread(traces, model, n_iterations=5, seed=2)
        assert stats.distilled.shape == (5,)
        assert stats.distilled_std > 0
        summary = stats.summary()
        assert summary['iterations'] == 5
        assert summary['reference_mean_db'] < 0

    def test_spread_needs_repeats(self, traces, model):
        with pytest.raises(ValueError):
            assignment_spread(traces, model, n_iterations=1)


@pytest.mark.slow
class TestFullScale:
    """25000 traces of 8000 reference pulses around the measured operating point"""

    N_TRACES = 25_000
    PULSES = 8_000

    @pytest.fixture(scope="class")
    def distilled_state(self):
        spectrum = SchmidtSpectrum.from_characterization(mean_photons=0.56, mode_number=1.23, n_modes=2)
        return assemble_detected_mixture(spectrum, TapConfig(), EfficiencyBudget.measured_setup())

    @pytest.fixture(scope="class")
    def full_traces(self, lossy_6db_state, distilled_state):
        rng = np.random.default_rng(25_000)
        phases = rng.uniform(0.0, 2 * np.pi, self.N_TRACES)
        axes = (variance(lossy_6db_state, 0.0), variance(lossy_6db_state, np.pi / 2))
        variances = ellipse(axes, phases) * rng.chisquare(self.PULSES - 1, self.N_TRACES) / self.PULSES
        distilled = MarginalSampler(distilled_state).sample_at(phases, rng)
        return [
            TraceRecord(i, float(d), float(v), self.PULSES)
            for i, (d, v) in enumerate(zip(distilled, variances))
        ]

    def test_recovered_variances(self, full_traces, lossy_6db_state, distilled_state):
        fit = fit_ellipse(full_traces, seed=3)
        model = variance_phase_model(fit.v_x, fit.v_p, pulses_per_trace=self.PULSES, n_mc=200_000, seed=4)
        summary = assignment_spread(full_traces, model, n_iterations=80, seed=5).summary()
        assert summary['reference_mean_db'] == pytest.approx(variance_db(lossy_6db_state, 0.0), abs=0.1)
        assert summary['distilled_mean_db'] == pytest.approx(variance_db(distilled_state, 0.0), abs=0.15)

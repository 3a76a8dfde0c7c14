import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from distill_tools.core.exceptions import DegenerateError, GridError
from distill_tools.core.fock import fock_state, vacuum
from distill_tools.modules.distillation import (
    EfficiencyBudget,
    assemble_detected_mixture,
    detected_single_mode_state,
    undistilled_state,
)
from distill_tools.modules.homodyne import (
    MarginalSampler,
    QuadratureAxis,
    QuadratureRecord,
    binned_cumulants,
    covariance,
    cumulant_standard_errors,
    cumulants,
    cumulants_exact,
    derive_seeds,
    marginal,
    read_quadrature_csv,
    records_to_arrays,
    sample,
    variance,
    variance_db,
    write_quadrature_csv,
)
from distill_tools.modules.pdc_model import lambda_from_squeezing_db, tmsv


@pytest.fixture(scope="module")
def squeezed():
    """Pure symmetrized TMSV with λ = 0.3"""
    return detected_single_mode_state(tmsv(0.3, 24))


class TestQuadratureAxis:
    def test_spacing_limit(self):
        with pytest.raises(GridError):
            QuadratureAxis.symmetric(0.0, 5.0, 101)

    def test_grid_must_be_symmetric(self):
        with pytest.raises(GridError):
            QuadratureAxis(0.0, np.linspace(-4.0, 5.0, 1001))

    def test_grid_must_be_uniform(self):
        grid = np.concatenate([np.linspace(-1, 0, 50), np.linspace(0.01, 1, 30)])
        with pytest.raises(GridError):
            QuadratureAxis(0.0, grid)

    def test_state_grid_covers_the_cutoff(self):
        axis = QuadratureAxis.for_state(vacuum(24))
        assert axis.half_extent >= np.sqrt(49) + 3
        assert axis.spacing <= 0.05


class TestMarginal:
    def test_vacuum_is_gaussian(self):
        axis = QuadratureAxis.for_state(vacuum(10), theta=0.7)
        density = marginal(vacuum(10), axis)
        assert np.allclose(density, np.exp(-axis.grid ** 2) / np.sqrt(np.pi), atol=1e-12)

    def test_single_photon(self):
        axis = QuadratureAxis.for_state(fock_state(1, 10))
        density = marginal(fock_state(1, 10), axis)
        x = axis.grid
        assert np.allclose(density, 2 * x ** 2 * np.exp(-x ** 2) / np.sqrt(np.pi), atol=1e-12)

    def test_normalized(self, lossy_6db_state):
        axis = QuadratureAxis.for_state(lossy_6db_state, theta=1.1)
        assert trapezoid(marginal(lossy_6db_state, axis), axis.grid) == pytest.approx(1.0, abs=1e-6)

    def test_half_turn_mirrors_the_density(self, lossy_6db_state):
        axis = QuadratureAxis.for_state(lossy_6db_state, theta=0.4)
        flipped = QuadratureAxis(0.4 + np.pi, axis.grid)
        assert np.allclose(marginal(lossy_6db_state, flipped), marginal(lossy_6db_state, axis)[::-1], atol=1e-8)

    def test_integrated_variance_matches_operator(self, squeezed):
        for theta in (0.0, 0.5, np.pi / 2):
            axis = QuadratureAxis.for_state(squeezed, theta=theta)
            density = marginal(squeezed, axis)
            assert trapezoid(axis.grid ** 2 * density, axis.grid) == pytest.approx(variance(squeezed, theta), abs=1e-7)

    def test_grid_too_narrow(self):
        with pytest.raises(GridError):
            marginal(vacuum(6), QuadratureAxis.symmetric(0.0, 1.0, 101))


class TestVariance:
    def test_vacuum_is_zero_db(self):
        assert variance_db(vacuum(8)) == pytest.approx(0.0, abs=1e-12)

    def test_phase_dependence(self, squeezed):
        r = np.arctanh(0.3)
        v_x, v_p = 0.5 * np.exp(-2 * r), 0.5 * np.exp(2 * r)
        for theta in np.linspace(0, np.pi, 7):
            expected = v_x * np.cos(theta) ** 2 + v_p * np.sin(theta) ** 2
            assert variance(squeezed, theta) == pytest.approx(expected, rel=1e-8)

    def test_covariance_is_diagonal_for_real_states(self, squeezed):
        cov = covariance(squeezed)
        assert cov[0, 1] == pytest.approx(0.0, abs=1e-12)
        assert np.linalg.det(cov) == pytest.approx(0.25, rel=1e-8)


class TestSampling:
    def test_vacuum_variance(self):
        values = sample(vacuum(10), 0.0, 1_000_000, rng_seed=1)
        assert np.var(values) == pytest.approx(0.5, abs=0.003)

    def test_reproducible_per_seed(self, squeezed):
        first = sample(squeezed, 0.3, 1000, rng_seed=42)
        second = sample(squeezed, 0.3, 1000, rng_seed=42)
        assert np.array_equal(first, second)

    def test_squeezed_marginal_is_normal(self, lossy_6db_state):
        sigma = np.sqrt(variance(lossy_6db_state, 0.0))
        values = sample(lossy_6db_state, 0.0, 20000, rng_seed=3)
        assert stats.kstest(values, 'norm', args=(0.0, sigma)).pvalue > 0.01

    def test_rejects_empty_request(self, squeezed):
        with pytest.raises(ValueError):
            sample(squeezed, 0.0, 0)


class TestMarginalSampler:
    @pytest.fixture(scope="class")
    def sampler(self, lossy_6db_state):
        return MarginalSampler(lossy_6db_state)

    def test_tabulated_variance(self, sampler, lossy_6db_state):
        values = sampler.sample(0.0, 200_000, np.random.default_rng(5))
        assert np.var(values) == pytest.approx(variance(lossy_6db_state, 0.0), abs=0.005)

    def test_half_turn_flips_sign(self, sampler):
        a = sampler.sample(0.3, 100, np.random.default_rng(9))
        b = sampler.sample(0.3 + np.pi, 100, np.random.default_rng(9))
        assert np.allclose(a, -b)

    def test_per_phase_sampling(self, sampler, lossy_6db_state):
        rng = np.random.default_rng(11)
        near_x = sampler.sample_at(np.full(50_000, 0.01), rng)
        near_p = sampler.sample_at(np.full(50_000, np.pi / 2), rng)
        assert np.var(near_x) < np.var(near_p)
        assert np.var(near_p) == pytest.approx(variance(lossy_6db_state, np.pi / 2), rel=0.03)


class TestSeeds:
    def test_children_repeat_for_the_same_root(self):
        first = [s.generate_state(2) for s in derive_seeds(17, 3)]
        second = [s.generate_state(2) for s in derive_seeds(17, 3)]
        assert all(np.array_equal(a, b) for a, b in zip(first, second))

    def test_children_differ(self):
        a, b = derive_seeds(17, 2)
        assert not np.array_equal(a.generate_state(2), b.generate_state(2))

    def test_sequence_root_is_not_consumed(self):
        root = np.random.SeedSequence(5)
        first = derive_seeds(root, 2)[1].generate_state(1)
        assert np.array_equal(derive_seeds(root, 2)[1].generate_state(1), first)


class TestCumulants:
    def test_gaussian_samples(self, rng):
        sigma, n = 0.7, 100_000
        result = cumulants(rng.normal(0.0, sigma, n))
        assert result.kappa2 == pytest.approx(sigma ** 2, rel=0.02)
        assert abs(result.kappa3) < 5 * np.sqrt(6 * sigma ** 6 / n)
        assert abs(result.kappa4) < 5 * np.sqrt(24 * sigma ** 8 / n)

    def test_identical_samples(self):
        with pytest.raises(DegenerateError):
            cumulants(np.ones(10))

    def test_single_photon_kurtosis(self):
        # x² e^{−x²} has μ₂ = 3/2, μ₄ = 15/4
        result = cumulants_exact(fock_state(1, 8))
        assert result.kappa2 == pytest.approx(1.5)
        assert result.kappa4 == pytest.approx(15 / 4 - 3 * 1.5 ** 2)

    def test_gaussian_states_have_no_higher_cumulants(self):
        lam = lambda_from_squeezing_db(6.0)
        state = undistilled_state(lam, EfficiencyBudget(linear_losses=0.428), cutoff=24)
        for theta in np.linspace(0, np.pi, 9):
            exact = cumulants_exact(state, theta)
            assert abs(exact.kappa3) < 1e-8
            assert abs(exact.kappa4) < 1e-8

    def test_distilled_kurtosis_signs(self, source_spectrum, default_tap, measured_budget):
        state = assemble_detected_mixture(source_spectrum, default_tap, measured_budget)
        assert cumulants_exact(state, np.pi / 2).kappa4 < 0
        assert cumulants_exact(state, 0.0).kappa4 >= 0
        assert abs(cumulants_exact(state, 0.8).kappa3) < 1e-10

    def test_samples_agree_with_exact(self, lossy_6db_state):
        theta = 0.6
        values = sample(lossy_6db_state, theta, 100_000, rng_seed=8)
        sampled = np.array(cumulants(values).as_tuple())
        errors = cumulant_standard_errors(values)
        exact = np.array(cumulants_exact(lossy_6db_state, theta).as_tuple())
        assert np.all(np.abs(sampled - exact) < 5 * errors)

    @pytest.mark.parametrize("theta", [0.0, np.pi / 2])
    def test_distilled_samples_agree_with_exact(self, theta, source_spectrum, default_tap, measured_budget):
        state = assemble_detected_mixture(source_spectrum, default_tap, measured_budget)
        values = sample(state, theta, 100_000, rng_seed=12)
        sampled = np.array(cumulants(values).as_tuple())
        errors = cumulant_standard_errors(values)
        exact = np.array(cumulants_exact(state, theta).as_tuple())
        assert np.all(np.abs(sampled - exact) < 5 * errors)

    def test_estimator_spread_shrinks_as_root_n(self, squeezed):
        spreads = []
        for n in (1_000, 10_000):
            estimates = [cumulants(sample(squeezed, 0.0, n, rng_seed=(n, k))).kappa2 for k in range(30)]
            spreads.append(np.std(estimates))
        assert np.sqrt(10) / 2 < spreads[0] / spreads[1] < 2 * np.sqrt(10)

    def test_binned_curve(self, rng):
        thetas = rng.uniform(0, np.pi / 2, 20_000)
        values = rng.normal(size=20_000)
        curve = binned_cumulants(thetas, values, bin_deg=5.0)
        assert len(curve) == 18
        assert curve[0].theta == pytest.approx(np.deg2rad(2.5))
        assert sum(c.n_samples for c in curve) == 20_000


class TestQuadratureCsv:
    def test_records_keep_their_columns(self, tmp_path):
        records = [
            QuadratureRecord(0, 0, 0.25, False, None),
            QuadratureRecord(0, 4000, -1.5, True, 0.3)
        ]
        path = write_quadrature_csv(records, tmp_path / "samples.csv")
        assert path.read_text().splitlines()[0] == "trace_id,pulse_index,theta_assigned,x_value,is_distilled"
        loaded = read_quadrature_csv(path)
        assert loaded == records
        arrays = records_to_arrays(loaded)
        assert np.isnan(arrays['theta'][0])
        assert arrays['is_distilled'].tolist() == [False, True]

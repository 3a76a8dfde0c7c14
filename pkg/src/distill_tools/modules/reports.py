"""
Experiment Reports
==================
Assembles the states of a run and produces the tabular outputs: the
variance/purity comparison table, cumulant curves, Wigner surfaces, the
phase-recovery pipeline and parameter sweeps.
"""

import asyncio
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tabulate import tabulate

from ..core.config import RunConfig
from ..core.exceptions import ConfigError
from ..core.fock import DensityOperator, purity, save_state
from ..utils.helpers import format_db, to_db, write_csv
from .distillation import (
    EfficiencyBudget,
    TapConfig,
    assemble_detected_mixture,
    distilled_single_mode_state,
    undistilled_state,
)
from .homodyne import (
    MarginalSampler,
    binned_cumulants,
    cumulants_exact,
    derive_seeds,
    variance_db,
    write_quadrature_csv,
    QuadratureRecord,
)
from .pdc_model import (
    SchmidtSpectrum,
    gain_from_mean_photons,
    lambda_from_squeezing_db,
)
from .phase_recovery import (
    PhaseDriftModel,
    TraceGenerator,
    assign_phases,
    assignment_spread,
    check_phase_symmetry,
    fit_ellipse,
    posterior_variance_estimate,
    rms_phase_error,
    variance_phase_model,
    write_truth_sidecar,
)
from .tomography import MaxLikelihoodReconstructor, bin_samples, wigner, write_wigner_csv

logger = logging.getLogger(__name__)

# Child-seed slots of the run seed
SEED_SAMPLES_UNDISTILLED = 0
SEED_SAMPLES_DISTILLED = 1
SEED_CUMULANTS_UNDISTILLED = 2
SEED_CUMULANTS_DISTILLED = 3
SEED_TRACES = 4
SEED_ELLIPSE = 5
SEED_MODEL = 6
SEED_ASSIGNMENT = 7
SEED_SLOTS = 8


class ExperimentReport:
    """Builds and caches the states of one run configuration"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.settings = config.simulation
        self.out_dir = config.output_dir
        self.seeds = derive_seeds(self.settings.seed, SEED_SLOTS)
        self._states: Optional[Dict[str, DensityOperator]] = None

    # =====================================================================
    # States
    # =====================================================================

    @property
    def initial_squeezing(self) -> float:
        """λ of the single-mode-equivalent source with the configured mean photon number"""
        return float(np.tanh(gain_from_mean_photons(self.config.source.mean_photons)))

    def states(self) -> Dict[str, DensityOperator]:
        if self._states is None:
            cutoff = self.settings.cutoff
            try:
                lam = self.initial_squeezing
                self._states = {
                    'undistilled': undistilled_state(lam, self.config.budget, cutoff),
                    'distilled': assemble_detected_mixture(self.config.source, self.config.tap, self.config.budget, cutoff),
                    'single_mode': distilled_single_mode_state(
                        float(self.config.source.squeezing_parameters[0]), self.config.tap, self.config.budget, cutoff
                    )
                }
            except Exception as e:
                logger.error(f"Failed to build the detected states: {e}")
                raise
        return self._states

    def simulate(self) -> Dict[str, Any]:
        states = self.states()
        files = {}
        for name, state in states.items():
            files[name] = str(save_state(state, self.out_dir / f"{name}.json"))
        summary = {
            'files': files,
            'gain_B': self.config.source.gain,
            'total_efficiency': self.config.budget.total_efficiency(
                exclude_tap=not self.config.tap.transmission_in_budget
            ),
            'budget_product': self.config.budget.product,
            'states': {name: self._describe(state) for name, state in states.items()}
        }
        self.write_summary('simulate', summary)
        return summary

    @staticmethod
    def _describe(state: DensityOperator) -> Dict[str, float]:
        return {
            'var_x_db': variance_db(state, 0.0),
            'var_p_db': variance_db(state, np.pi / 2),
            'purity': purity(state),
            'mean_photons': state.mean_photons()
        }

    # =====================================================================
    # Variance / purity table
    # =====================================================================

    def _tagged_samples(self, state: DensityOperator, n: int, seed) -> Tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(seed)
        thetas = rng.uniform(0.0, np.pi, n)
        sampler = MarginalSampler(state)
        return thetas, sampler.sample_at(thetas, rng)

    def reconstruct(self, name: str, seed) -> Dict[str, Any]:
        state = self.states()[name]
        thetas, values = self._tagged_samples(state, self.settings.samples_per_state, seed)
        data = bin_samples(thetas, values, self.settings.theta_bin_deg, self.settings.x_bin_width)
        reconstructor = MaxLikelihoodReconstructor(
            cutoff=self.settings.reconstruction_cutoff,
            tol=self.settings.tol,
            max_iter=self.settings.max_iter,
            require_convergence=self.settings.require_convergence
        )
        result = reconstructor.reconstruct(data, reference=state)
        save_state(result.rho, self.out_dir / f"{name}_reconstructed.json")
        return {
            'result': result,
            'fidelity': result.fidelity_to(state),
            **self._describe(result.rho)
        }

    def table1(self, with_reconstruction: bool = True) -> Dict[str, Any]:
        states = self.states()
        simulated = {name: self._describe(states[name]) for name in ('undistilled', 'distilled')}
        reconstructed = {}
        if with_reconstruction:
            reconstructed['undistilled'] = self.reconstruct('undistilled', self.seeds[SEED_SAMPLES_UNDISTILLED])
            reconstructed['distilled'] = self.reconstruct('distilled', self.seeds[SEED_SAMPLES_DISTILLED])

        header = ['quantity', 'undistilled_sim', 'distilled_sim']
        if reconstructed:
            header += ['undistilled_rec', 'distilled_rec']
        rows = []
        for key, label in (('var_x_db', 'Var(X) [dB]'), ('var_p_db', 'Var(P) [dB]'), ('purity', 'purity'),
                           ('fidelity', 'fidelity')):
            row = [label,
                   simulated['undistilled'].get(key),
                   simulated['distilled'].get(key)]
            if reconstructed:
                row += [reconstructed['undistilled'][key], reconstructed['distilled'][key]]
            rows.append(row)

        write_csv(self.out_dir / "table1.csv", header, rows)
        text = tabulate(rows, headers=header, floatfmt=".3f")
        (self.out_dir / "table1.txt").write_text(text + "\n")
        summary = {
            'simulated': simulated,
            'reconstructed': {
                name: {k: v for k, v in values.items() if k != 'result'} | {
                    'iterations': values['result'].iterations,
                    'converged': values['result'].converged,
                    'stationary': values['result'].stationary
                }
                for name, values in reconstructed.items()
            },
            'table': text
        }
        self.write_summary('table1', summary)
        return summary

    # =====================================================================
    # Cumulants
    # =====================================================================

    def cumulant_curves(self) -> List[Dict[str, Any]]:
        states = self.states()
        rows = []
        seeds = {'undistilled': self.seeds[SEED_CUMULANTS_UNDISTILLED], 'distilled': self.seeds[SEED_CUMULANTS_DISTILLED]}
        for name in ('undistilled', 'distilled'):
            state = states[name]
            rng = np.random.default_rng(seeds[name])
            thetas = rng.uniform(0.0, np.pi / 2, self.settings.cumulant_samples)
            values = MarginalSampler(state).sample_at(thetas, rng)
            sampled = binned_cumulants(thetas, values, bin_deg=self.settings.cumulant_bin_deg)
            for entry in sampled:
                exact = cumulants_exact(state, entry.theta)
                rows.append({'state': name, 'theta_deg': np.rad2deg(entry.theta), 'kind': 'exact',
                             'kappa': exact.as_tuple(), 'n_samples': None})
                rows.append({'state': name, 'theta_deg': np.rad2deg(entry.theta), 'kind': 'sampled',
                             'kappa': entry.as_tuple(), 'n_samples': entry.n_samples})
        write_csv(
            self.out_dir / "cumulants.csv",
            ['state', 'theta_deg', 'kind', 'kappa1', 'kappa2', 'kappa3', 'kappa4', 'n_samples'],
            ([r['state'], r['theta_deg'], r['kind'], *r['kappa'], r['n_samples']] for r in rows)
        )
        distilled_exact = {
            'kappa4_at_0deg': cumulants_exact(states['distilled'], 0.0).kappa4,
            'kappa4_at_90deg': cumulants_exact(states['distilled'], np.pi / 2).kappa4
        }
        self.write_summary('cumulants', {'rows': len(rows), 'distilled_exact': distilled_exact})
        return rows

    # =====================================================================
    # Wigner surfaces
    # =====================================================================

    def wigner_surfaces(self) -> Dict[str, np.ndarray]:
        states = self.states()
        axis = np.linspace(-self.settings.wigner_extent, self.settings.wigner_extent, self.settings.wigner_points)
        surfaces = {}
        for name in ('undistilled', 'distilled'):
            surfaces[name] = wigner(states[name], axis, axis)
            write_wigner_csv(axis, axis, surfaces[name], self.out_dir / f"wigner_{name}.csv")
        self.write_summary('wigner', {
            name: {'min': float(s.min()), 'max': float(s.max())} for name, s in surfaces.items()
        })
        return surfaces

    # =====================================================================
    # Phase recovery
    # =====================================================================

    def phase_pipeline(self) -> Dict[str, Any]:
        states = self.states()
        initial, distilled = states['undistilled'], states['distilled']
        for state in (initial, distilled):
            check_phase_symmetry(state)
        s = self.settings
        generator = TraceGenerator(initial, distilled, s.pulses_per_trace, PhaseDriftModel(kind=s.phase_drift))
        traces = list(generator.iter_traces(s.n_traces, seed=self.seeds[SEED_TRACES], keep_values=False))
        write_truth_sidecar(traces, self.out_dir / "truth.json")
        truth = {t.trace_id: t.true_phase for t in traces}
        observed = [t.without_truth() for t in traces]

        fit = fit_ellipse(observed, seed=self.seeds[SEED_ELLIPSE])
        model = variance_phase_model(fit.v_x, fit.v_p, s.pulses_per_trace, s.n_mc, seed=self.seeds[SEED_MODEL])
        spread = assignment_spread(observed, model, s.n_iterations, seed=self.seeds[SEED_ASSIGNMENT],
                                   window_deg=s.phase_window_deg)
        first = assign_phases(observed, model, seed=self.seeds[SEED_ASSIGNMENT], iteration=0)
        posterior_x, posterior_p = posterior_variance_estimate(observed, model)

        write_csv(
            self.out_dir / "spread.csv",
            ['iteration', 'distilled_variance', 'reference_variance'],
            zip(range(len(spread.distilled)), spread.distilled, spread.reference)
        )
        write_quadrature_csv(
            (QuadratureRecord(a.trace_id, s.pulses_per_trace // 2, t.distilled_value, True, a.theta_assigned)
             for a, t in zip(first, observed)),
            self.out_dir / "distilled_pulses.csv"
        )
        summary = {
            'ellipse': {'v_x': fit.v_x, 'v_p': fit.v_p},
            'spread': spread.summary(),
            'rms_phase_error_rad': rms_phase_error(first, truth),
            'posterior_distilled_db': {'x': _db_or_none(posterior_x), 'p': _db_or_none(posterior_p)},
            'ground_truth_db': {
                'reference_x': variance_db(initial, 0.0),
                'distilled_x': variance_db(distilled, 0.0)
            }
        }
        self.write_summary('phase_pipeline', summary)
        return summary

    # =====================================================================
    # Sweeps
    # =====================================================================

    def _swept_tap_and_budget(self, value: float, tap: TapConfig, budget: EfficiencyBudget):
        """Apply a tap or efficiency sweep value, keeping the budget's tap factor equal to T²"""
        parameter = self.config.sweep.parameter
        try:
            if parameter == 'tap_energy_transmission':
                tap = replace(tap, energy_transmission=value)
                if tap.transmission_in_budget:
                    reference = budget.reference_total
                    if reference is not None:
                        reference = reference * value / budget.tap_bs
                    budget = replace(budget, tap_bs=value, reference_total=reference)
            elif parameter == 'heralding_efficiency':
                tap = replace(tap, heralding_efficiency=value)
            elif parameter == 'total_efficiency':
                if tap.transmission_in_budget:
                    if value > tap.energy_transmission:
                        raise ConfigError(
                            f"sweep.values for total_efficiency must not exceed the tap transmission "
                            f"{tap.energy_transmission} it includes, got {value}"
                        )
                    budget = EfficiencyBudget(linear_losses=value / tap.energy_transmission,
                                              tap_bs=tap.energy_transmission)
                else:
                    budget = EfficiencyBudget(linear_losses=value)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"sweep value {value} for {parameter}: {e}") from e
        return tap, budget

    def _sweep_point(self, value: float) -> Dict[str, Any]:
        sweep = self.config.sweep
        tap = self.config.tap
        if sweep.subtract is not None:
            tap = replace(tap, subtract=tuple(sweep.subtract))
        tap, budget = self._swept_tap_and_budget(value, tap, self.config.budget)
        lam = lambda_from_squeezing_db(sweep.squeezing_db)
        spectrum = self.config.source
        cutoff = self.settings.cutoff

        if sweep.parameter == 'squeezing_db':
            lam = lambda_from_squeezing_db(value)
            spectrum = SchmidtSpectrum.from_characterization(
                float(np.sinh(np.arctanh(lam)) ** 2), spectrum.mode_number, n_modes=spectrum.n_modes
            )
        elif sweep.parameter == 'mean_photons':
            lam = float(np.tanh(gain_from_mean_photons(value)))
            spectrum = SchmidtSpectrum.from_characterization(value, spectrum.mode_number, n_modes=spectrum.n_modes)

        if sweep.model == 'single_mode':
            state = distilled_single_mode_state(lam, tap, budget, cutoff)
            reference = undistilled_state(lam, budget, cutoff)
        else:
            state = assemble_detected_mixture(spectrum, tap, budget, cutoff)
            reference = undistilled_state(float(np.tanh(gain_from_mean_photons(spectrum.mean_photons))), budget, cutoff)
        return {
            'value': value,
            'subtract': f"{tap.subtract[0]}x{tap.subtract[1]}",
            'var_x_db': variance_db(state, 0.0),
            'var_p_db': variance_db(state, np.pi / 2),
            'purity': purity(state),
            'undistilled_var_x_db': variance_db(reference, 0.0)
        }

    async def run_sweep(self) -> List[Dict[str, Any]]:
        """Evaluate sweep points in the default executor, results in input order"""
        if self.config.sweep is None:
            raise ConfigError("Configuration has no sweep section")
        loop = asyncio.get_running_loop()
        tasks = [loop.run_in_executor(None, self._sweep_point, float(v)) for v in self.config.sweep.values]
        try:
            results = await asyncio.gather(*tasks)
        except Exception as e:
            logger.error(f"Sweep over {self.config.sweep.parameter} failed: {e}")
            raise
        write_csv(
            self.out_dir / "sweep.csv",
            ['parameter', 'value', 'subtract', 'var_x_db', 'var_p_db', 'purity', 'undistilled_var_x_db'],
            ([self.config.sweep.parameter, r['value'], r['subtract'], r['var_x_db'], r['var_p_db'], r['purity'],
              r['undistilled_var_x_db']] for r in results)
        )
        self.write_summary('sweep', {'parameter': self.config.sweep.parameter, 'points': results})
        for r in results:
            logger.info(f"{self.config.sweep.parameter}={r['value']:g}: Var(X) {format_db(r['var_x_db'])}")
        return list(results)

    def sweep(self) -> List[Dict[str, Any]]:
        return asyncio.run(self.run_sweep())

    # =====================================================================
    # Output
    # =====================================================================

    def write_summary(self, command: str, data: Dict[str, Any]) -> Path:
        path = self.out_dir / f"summary_{command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        return path


def _db_or_none(value: float) -> Optional[float]:
    """dB of a fitted variance; None when the fit is not positive"""
    return to_db(value) if value > 0 else None


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialize {type(value).__name__}")

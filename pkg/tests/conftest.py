"""Shared fixtures: the published operating point and small deterministic states"""

import logging

import numpy as np
import pytest

from distill_tools.core.config import RunConfig
from distill_tools.modules.distillation import EfficiencyBudget, TapConfig, undistilled_state
from distill_tools.modules.pdc_model import SchmidtSpectrum, lambda_from_squeezing_db

MEASURED_EFFICIENCY = 0.428


@pytest.fixture(autouse=True)
def quiet_logging(caplog):
    caplog.set_level(logging.WARNING)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def measured_budget():
    return EfficiencyBudget.measured_setup()


@pytest.fixture
def default_tap():
    return TapConfig()


@pytest.fixture
def source_spectrum():
    return SchmidtSpectrum.from_characterization(mean_photons=0.56, mode_number=1.23, n_modes=2)


@pytest.fixture
def default_config():
    return RunConfig.defaults()


@pytest.fixture(scope="session")
def lossy_6db_state():
    """6 dB squeezed vacuum through the 0.428 detection efficiency"""
    lam = lambda_from_squeezing_db(6.0)
    return undistilled_state(lam, EfficiencyBudget(linear_losses=MEASURED_EFFICIENCY))


@pytest.fixture
def small_config(tmp_path):
    """Measured setup at reduced sample sizes, writing into a temporary directory"""
    config = RunConfig.defaults().to_dict()
    config['simulation'].update({
        'n_traces': 400,
        'pulses_per_trace': 64,
        'samples_per_state': 20000,
        'cumulant_samples': 20000,
        'n_iterations': 4,
        'n_mc': 20000,
        'seed': 7
    })
    config['output'] = {'directory': str(tmp_path / 'results')}
    return RunConfig.from_dict(config)

import json

import pytest

from distill_tools.core import config as config_module
from distill_tools.core.config import RunConfig, SimulationSettings, SweepSettings
from distill_tools.core.exceptions import ConfigError


class TestDefaults:
    def test_operating_point(self, default_config):
        assert default_config.source.mean_photons == pytest.approx(0.56, abs=1e-10)
        assert default_config.tap.energy_transmission == 0.9
        assert default_config.tap.heralding_efficiency == 0.002
        assert default_config.budget.reference_total == 0.428
        assert default_config.sweep is None

    def test_empty_mapping_gives_defaults(self, default_config):
        assert RunConfig.from_dict({}) == default_config

    def test_simulation_defaults(self):
        settings = SimulationSettings()
        assert settings.cutoff == 24
        assert settings.phase_window_deg == 5.0


class TestValidation:
    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="Unknown key"):
            RunConfig.from_dict({'detector': {}})

    def test_unknown_key_names_its_section(self):
        with pytest.raises(ConfigError, match="section 'tap'"):
            RunConfig.from_dict({'tap': {'reflectivity': 0.1}})

    @pytest.mark.parametrize("section, data, field_name", [
        ('tap', {'tap_energy_transmission': 0.0}, 'tap.tap_energy_transmission'),
        ('tap', {'heralding_efficiency': 1.5}, 'tap.heralding_efficiency'),
        ('budget', {'linear_losses': 1.2}, 'budget.linear_losses'),
        ('budget', {'reference_total': 'high'}, 'budget.reference_total'),
        ('simulation', {'cutoff': 0}, 'simulation.cutoff'),
        ('simulation', {'tol': -1.0}, 'simulation.tol'),
        ('simulation', {'seed': -3}, 'simulation.seed'),
        ('simulation', {'phase_drift': 'random'}, 'simulation.phase_drift'),
    ])
    def test_errors_name_the_field(self, section, data, field_name):
        with pytest.raises(ConfigError, match=field_name.replace('.', r'\.')):
            RunConfig.from_dict({section: data})

    def test_subtraction_order(self):
        with pytest.raises(ConfigError, match="tap.subtract"):
            RunConfig.from_dict({'tap': {'subtract': [1]}})

    def test_source_forms_are_exclusive(self):
        with pytest.raises(ConfigError, match="source"):
            RunConfig.from_dict({'source': {'gain_B': 0.7, 'mean_photons': 0.56}})

    def test_section_must_be_a_mapping(self):
        with pytest.raises(ConfigError, match="must be a mapping"):
            RunConfig.from_dict({'simulation': [1, 2]})

    def test_sweep_needs_values(self):
        with pytest.raises(ConfigError, match="sweep.values"):
            SweepSettings(parameter='squeezing_db', values=[])

    def test_sweep_parameter(self):
        with pytest.raises(ConfigError, match="sweep.parameter"):
            SweepSettings(parameter='temperature', values=[1.0])

    @pytest.mark.parametrize("parameter, value", [
        ('tap_energy_transmission', 1.5),
        ('heralding_efficiency', -0.1),
        ('total_efficiency', 0.0),
        ('mean_photons', -1.0),
    ])
    def test_sweep_values_are_range_checked(self, parameter, value):
        with pytest.raises(ConfigError, match=f"sweep.values for {parameter}"):
            SweepSettings(parameter=parameter, values=[value])

    def test_sweep_values_must_be_numbers(self):
        with pytest.raises(ConfigError, match="finite numbers"):
            SweepSettings(parameter='squeezing_db', values=[float('nan')])

    def test_budget_must_carry_the_tap_transmission(self):
        with pytest.raises(ConfigError, match="tap_bs"):
            RunConfig.from_dict({'tap': {'tap_energy_transmission': 0.8}})

    def test_tap_outside_the_budget(self):
        config = RunConfig.from_dict({'tap': {'tap_energy_transmission': 0.8, 'transmission_in_budget': False}})
        assert config.tap.energy_transmission == 0.8
        assert not config.tap.transmission_in_budget

    def test_hom_model(self):
        config = RunConfig.from_dict({'budget': {'tap_bs': 0.9, 'hom_model': 'mode_mismatch'}})
        assert config.budget.hom_model == 'mode_mismatch'
        with pytest.raises(ConfigError, match="budget.hom_model"):
            RunConfig.from_dict({'budget': {'hom_model': 'bad'}})

    @pytest.mark.parametrize("name", ['pulses_per_trace', 'n_iterations'])
    def test_phase_recovery_sizes(self, name):
        with pytest.raises(ConfigError, match=f"simulation.{name}"):
            RunConfig.from_dict({'simulation': {name: 1}})

    def test_sweep_section(self):
        config = RunConfig.from_dict({'sweep': {'parameter': 'heralding_efficiency', 'values': [0.001, 0.01]}})
        assert config.sweep.model == 'single_mode'
        assert config.sweep.values == [0.001, 0.01]


class TestFiles:
    def test_yaml_exponent_is_coerced(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("simulation:\n  tol: 1e-9\n  cutoff: 20\n")
        config = RunConfig.load(path)
        assert config.simulation.tol == pytest.approx(1e-9)
        assert config.simulation.cutoff == 20
        assert config.path == str(path)

    def test_unparseable_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="Could not parse"):
            RunConfig.load(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            RunConfig.load(tmp_path / "absent.json")

    def test_save_and_load(self, tmp_path, default_config):
        path = default_config.with_overrides(seed=11).save(tmp_path / "nested" / "config.json")
        loaded = RunConfig.load(path)
        assert loaded == default_config.with_overrides(seed=11)
        assert 'reference_total' in json.loads(path.read_text())['budget']

    def test_locate_prefers_working_directory(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        (tmp_path / "distill.json").write_text(json.dumps({'simulation': {'seed': 99}}))
        monkeypatch.setattr(config_module, 'DEFAULT_LOCATIONS', (config_module.Path("distill.json"),))
        assert RunConfig.locate().simulation.seed == 99

    def test_locate_falls_back_to_defaults(self, tmp_path, monkeypatch, default_config):
        monkeypatch.setattr(config_module, 'DEFAULT_LOCATIONS', (tmp_path / "missing.json",))
        assert RunConfig.locate() == default_config


class TestOverrides:
    def test_cli_overrides(self, default_config):
        config = default_config.with_overrides(seed=5, cutoff=30, out="elsewhere")
        assert config.simulation.seed == 5
        assert config.simulation.cutoff == 30
        assert str(config.output_dir) == "elsewhere"
        assert config.source == default_config.source

    def test_no_overrides(self, default_config):
        assert default_config.with_overrides() == default_config

"""
Run Configuration
=================
One configuration file per run, JSON or YAML, with sections ``source``,
``tap``, ``budget``, ``simulation``, ``sweep`` (optional) and ``output``.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from ..modules.distillation import HOM_MODELS, EfficiencyBudget, TapConfig, check_tap_accounting
from ..modules.pdc_model import SchmidtSpectrum
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

CONFIG_DIR = Path.home() / ".distill-tools"
DEFAULT_LOCATIONS = (Path("distill.json"), CONFIG_DIR / "config.json")
SECTIONS = ('source', 'tap', 'budget', 'simulation', 'sweep', 'output')
SWEEP_PARAMETERS = ('squeezing_db', 'mean_photons', 'tap_energy_transmission', 'heralding_efficiency', 'total_efficiency')
SWEEP_MODELS = ('single_mode', 'mixture')
# lower bound and whether it is included; every range ends at 1
SWEEP_RANGES = {
    'tap_energy_transmission': (0.0, False),
    'heralding_efficiency': (0.0, True),
    'total_efficiency': (0.0, False),
}


@dataclass(frozen=True)
class SimulationSettings:
    cutoff: int = 24
    reconstruction_cutoff: int = 14
    seed: int = 0
    samples_per_state: int = 250000
    cumulant_samples: int = 100000
    cumulant_bin_deg: float = 0.5
    n_traces: int = 25000
    pulses_per_trace: int = 8000
    n_iterations: int = 80
    n_mc: int = 200000
    tol: float = 1e-9
    max_iter: int = 5000
    wigner_extent: float = 4.0
    wigner_points: int = 161
    require_convergence: bool = False
    theta_bin_deg: float = 2.0
    x_bin_width: float = 0.1
    phase_window_deg: float = 5.0
    phase_drift: str = 'uniform'

    POSITIVE_INTS = (
        'cutoff', 'reconstruction_cutoff', 'samples_per_state', 'cumulant_samples', 'n_traces',
        'pulses_per_trace', 'n_iterations', 'n_mc', 'max_iter', 'wigner_points'
    )
    POSITIVE_FLOATS = ('cumulant_bin_deg', 'tol', 'wigner_extent', 'theta_bin_deg', 'x_bin_width', 'phase_window_deg')

    def __post_init__(self):
        for name in self.POSITIVE_INTS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"simulation.{name} must be a positive integer, got {value!r}")
        for name in self.POSITIVE_FLOATS:
            value = getattr(self, name)
            if isinstance(value, str):
                # YAML reads exponents without a dot (1e-9) as strings
                try:
                    value = float(value)
                except ValueError:
                    raise ConfigError(f"simulation.{name} must be a positive number, got {value!r}") from None
                object.__setattr__(self, name, value)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
                raise ConfigError(f"simulation.{name} must be a positive number, got {value!r}")
        for name in ('pulses_per_trace', 'n_iterations'):
            if getattr(self, name) < 2:
                raise ConfigError(f"simulation.{name} must be >= 2, got {getattr(self, name)}")
        if self.cutoff < 2 or self.reconstruction_cutoff < 2:
            raise ConfigError("simulation.cutoff and simulation.reconstruction_cutoff must be >= 2")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"simulation.seed must be a non-negative integer, got {self.seed!r}")
        if self.phase_drift not in ('uniform', 'sinusoidal'):
            raise ConfigError(f"simulation.phase_drift must be 'uniform' or 'sinusoidal', got {self.phase_drift!r}")


@dataclass(frozen=True)
class SweepSettings:
    """Squeezing versus one swept parameter; ``subtract`` overrides the tap's order"""

    parameter: str = 'squeezing_db'
    values: List[float] = field(default_factory=list)
    model: str = 'single_mode'
    subtract: Optional[List[int]] = None
    squeezing_db: float = 6.0

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"sweep.parameter must be one of {', '.join(SWEEP_PARAMETERS)}, got {self.parameter!r}")
        if self.model not in SWEEP_MODELS:
            raise ConfigError(f"sweep.model must be one of {', '.join(SWEEP_MODELS)}, got {self.model!r}")
        if not self.values:
            raise ConfigError("sweep.values must list at least one value")
        if self.subtract is not None and (len(self.subtract) != 2 or min(self.subtract) < 0):
            raise ConfigError(f"sweep.subtract must be two non-negative integers, got {self.subtract!r}")
        for value in self.values:
            _check_sweep_value(self.parameter, value)


def _check_sweep_value(parameter: str, value: Any) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"sweep.values must be finite numbers, got {value!r}")
    if parameter in SWEEP_RANGES:
        low, closed_low = SWEEP_RANGES[parameter]
        above = value >= low if closed_low else value > low
        if not (above and value <= 1.0):
            interval = f"{'[' if closed_low else '('}{low:g}, 1]"
            raise ConfigError(f"sweep.values for {parameter} must be in {interval}, got {value}")
    elif parameter == 'mean_photons' and value < 0:
        raise ConfigError(f"sweep.values for mean_photons must be >= 0, got {value}")


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "results"


def _check_keys(section: str, data: Dict[str, Any], allowed) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"Unknown key(s) {', '.join(unknown)} in section '{section}'")


def _unit_interval(section: str, name: str, value: Any, closed_low: bool) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{name} must be a number, got {value!r}")
    low_ok = value >= 0 if closed_low else value > 0
    if not (low_ok and value <= 1):
        interval = "[0, 1]" if closed_low else "(0, 1]"
        raise ConfigError(f"{section}.{name} must be in {interval}, got {value}")
    return float(value)


def _parse_source(data: Dict[str, Any]) -> SchmidtSpectrum:
    _check_keys('source', data, ('gain_B', 'coefficients', 'mean_photons', 'mode_number_K', 'n_modes'))
    try:
        return SchmidtSpectrum.from_dict(data)
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"source: {e}") from e


def _parse_tap(data: Dict[str, Any]) -> TapConfig:
    _check_keys('tap', data, ('tap_energy_transmission', 'heralding_efficiency', 'subtract', 'transmission_in_budget'))
    if 'tap_energy_transmission' in data:
        _unit_interval('tap', 'tap_energy_transmission', data['tap_energy_transmission'], closed_low=False)
    if 'heralding_efficiency' in data:
        _unit_interval('tap', 'heralding_efficiency', data['heralding_efficiency'], closed_low=True)
    subtract = data.get('subtract', [1, 1])
    if (not isinstance(subtract, (list, tuple)) or len(subtract) != 2
            or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in subtract)):
        raise ConfigError(f"tap.subtract must be two non-negative integers, got {subtract!r}")
    return TapConfig.from_dict(data)


def _parse_budget(data: Dict[str, Any]) -> EfficiencyBudget:
    _check_keys('budget', data, EfficiencyBudget.FACTORS + ('reference_total', 'hom_model'))
    for name in EfficiencyBudget.FACTORS:
        if name in data:
            _unit_interval('budget', name, data[name], closed_low=False)
    if data.get('reference_total') is not None:
        _unit_interval('budget', 'reference_total', data['reference_total'], closed_low=False)
    if 'hom_model' in data and data['hom_model'] not in HOM_MODELS:
        raise ConfigError(f"budget.hom_model must be one of {', '.join(HOM_MODELS)}, got {data['hom_model']!r}")
    return EfficiencyBudget.from_dict(data)


def _parse_dataclass(cls, section: str, data: Dict[str, Any]):
    names = [f.name for f in fields(cls)]
    _check_keys(section, data, names)
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{section}: {e}") from e


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; the derived total efficiency is recomputed, never read"""

    source: SchmidtSpectrum
    tap: TapConfig = field(default_factory=TapConfig)
    budget: EfficiencyBudget = field(default_factory=EfficiencyBudget)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    sweep: Optional[SweepSettings] = None
    output: OutputSettings = field(default_factory=OutputSettings)
    path: Optional[str] = field(default=None, compare=False)

    @classmethod
    def defaults(cls) -> "RunConfig":
        """n̄ = 0.56, K = 1.23 over two Schmidt modes, 90/10 taps, the measured loss budget"""
        return cls(
            source=SchmidtSpectrum.from_characterization(0.56, 1.23, n_modes=2),
            tap=TapConfig(),
            budget=EfficiencyBudget.measured_setup()
        )

    @classmethod
    def from_dict(cls, data: Dict[str, Any], path: Optional[str] = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("Configuration must be a mapping of sections")
        _check_keys('<root>', data, SECTIONS)
        for section in SECTIONS:
            if section in data and data[section] is not None and not isinstance(data[section], dict):
                raise ConfigError(f"Section '{section}' must be a mapping")
        defaults = cls.defaults()
        source = _parse_source(data['source']) if 'source' in data else defaults.source
        tap = _parse_tap(data['tap']) if 'tap' in data else defaults.tap
        budget = _parse_budget(data['budget']) if 'budget' in data else defaults.budget
        check_tap_accounting(tap, budget)
        simulation = _parse_dataclass(SimulationSettings, 'simulation', data.get('simulation') or {})
        sweep_data = data.get('sweep')
        sweep = _parse_dataclass(SweepSettings, 'sweep', sweep_data) if sweep_data else None
        output = _parse_dataclass(OutputSettings, 'output', data.get('output') or {})
        config = cls(source, tap, budget, simulation, sweep, output, path=path)
        logger.debug(
            f"Loaded config: gain B={source.gain:.6f}, {source.n_modes} Schmidt modes, "
            f"budget product {budget.product:.4f}"
        )
        return config

    def to_dict(self) -> Dict[str, Any]:
        data = {
            'source': self.source.to_dict(),
            'tap': self.tap.to_dict(),
            'budget': self.budget.to_dict(),
            'simulation': asdict(self.simulation),
            'output': asdict(self.output)
        }
        if self.sweep is not None:
            data['sweep'] = asdict(self.sweep)
        return data

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, 'r') as f:
                if path.suffix.lower() in ('.yaml', '.yml'):
                    data = yaml.safe_load(f)
                else:
                    data = json.load(f)
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            logger.error(f"Failed to parse config {path}: {e}")
            raise ConfigError(f"Could not parse {path}: {e}") from e
        return cls.from_dict(data or {}, path=str(path))

    @classmethod
    def locate(cls, path: Optional[Union[str, Path]] = None) -> "RunConfig":
        """Explicit path, else ./distill.json, else ~/.distill-tools/config.json, else built-in defaults"""
        if path is not None:
            return cls.load(path)
        for candidate in DEFAULT_LOCATIONS:
            if candidate.exists():
                logger.info(f"Using config {candidate}")
                return cls.load(candidate)
        logger.info("No config file found; using built-in defaults")
        return cls.defaults()

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    def with_overrides(
        self,
        seed: Optional[int] = None,
        cutoff: Optional[int] = None,
        out: Optional[str] = None
    ) -> "RunConfig":
        simulation = self.simulation
        if seed is not None:
            simulation = replace(simulation, seed=seed)
        if cutoff is not None:
            simulation = replace(simulation, cutoff=cutoff)
        output = replace(self.output, directory=str(out)) if out is not None else self.output
        return replace(self, simulation=simulation, output=output)

    @property
    def output_dir(self) -> Path:
        return Path(self.output.directory)

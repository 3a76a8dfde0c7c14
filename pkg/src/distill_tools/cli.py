"""
Distill Tools Command Line
==========================
Subcommands: simulate | table1 | cumulants | wigner | phase-pipeline | sweep.

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical failures.
"""

import functools
import logging
import sys
from typing import Any, Dict, Optional

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from . import __version__
from .core.config import RunConfig
from .core.exceptions import ConfigError, NumericalError
from .modules.reports import ExperimentReport
from .utils.helpers import format_db

logger = logging.getLogger(__name__)
console = Console()

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def setup_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True
    )


def run_options(func):
    """Shared flags; builds the report from the located config"""

    @click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                  help='Run configuration (JSON or YAML)')
    @click.option('--out', type=click.Path(file_okay=False), default=None, help='Output directory')
    @click.option('--seed', type=int, default=None, help='Override simulation.seed')
    @click.option('--cutoff', type=int, default=None, help='Override simulation.cutoff')
    @click.option('--verbose', '-v', is_flag=True, help='Debug logging')
    @functools.wraps(func)
    def wrapper(config_path: Optional[str], out: Optional[str], seed: Optional[int], cutoff: Optional[int],
                verbose: bool, **kwargs):
        setup_logging(verbose)
        try:
            config = RunConfig.locate(config_path).with_overrides(seed=seed, cutoff=cutoff, out=out)
            return func(ExperimentReport(config), **kwargs)
        except ConfigError as e:
            console.print(f"[red]Configuration error:[/red] {e}")
            sys.exit(EXIT_CONFIG)
        except NumericalError as e:
            console.print(f"[red]Numerical failure:[/red] {e}")
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def _state_table(title: str, states: Dict[str, Dict[str, Any]]) -> Table:
    table = Table(title=title)
    table.add_column("State", style="cyan")
    table.add_column("Var(X)", justify="right")
    table.add_column("Var(P)", justify="right")
    table.add_column("Purity", justify="right")
    for name, values in states.items():
        table.add_row(name, format_db(values['var_x_db']), format_db(values['var_p_db']), f"{values['purity']:.3f}")
    return table


@click.group()
@click.version_option(__version__, prog_name="distill-tools")
def cli():
    """Squeezing distillation by photon subtraction: simulation and analysis"""


@cli.command()
@run_options
def simulate(report: ExperimentReport):
    """Write the undistilled, distilled and single-mode detected states"""
    summary = report.simulate()
    console.print(_state_table("Detected states", summary['states']))
    console.print(f"Total efficiency {summary['total_efficiency']:.4f} (product {summary['budget_product']:.4f})")


@cli.command()
@run_options
@click.option('--no-reconstruction', is_flag=True, help='Skip the tomographic reconstruction')
def table1(report: ExperimentReport, no_reconstruction: bool):
    """Variances, purity and reconstruction fidelity of both states"""
    summary = report.table1(with_reconstruction=not no_reconstruction)
    console.print(summary['table'])


@cli.command()
@run_options
def cumulants(report: ExperimentReport):
    """Sampled and exact cumulants versus phase"""
    rows = report.cumulant_curves()
    console.print(f"Wrote {len(rows)} cumulant rows to {report.out_dir / 'cumulants.csv'}")


@cli.command()
@run_options
def wigner(report: ExperimentReport):
    """Wigner surfaces of both states"""
    surfaces = report.wigner_surfaces()
    for name, surface in surfaces.items():
        console.print(f"{name}: W in [{surface.min():.4f}, {surface.max():.4f}]")


@cli.command('phase-pipeline')
@run_options
def phase_pipeline(report: ExperimentReport):
    """Phase assignment on synthetic traces with spread statistics"""
    summary = report.phase_pipeline()
    spread = summary['spread']
    truth = summary['ground_truth_db']
    table = Table(title=f"Sorted variances over {spread['iterations']} assignments")
    table.add_column("Ensemble", style="cyan")
    table.add_column("Estimate", justify="right")
    table.add_column("Spread", justify="right")
    table.add_column("Ground truth", justify="right")
    table.add_row("reference", format_db(spread['reference_mean_db']), f"{spread['reference_std_db']:.3f} dB",
                  format_db(truth['reference_x']))
    table.add_row("distilled", format_db(spread['distilled_mean_db']), f"{spread['distilled_std_db']:.3f} dB",
                  format_db(truth['distilled_x']))
    console.print(table)


@cli.command()
@run_options
def sweep(report: ExperimentReport):
    """Squeezing versus the configured sweep parameter"""
    if report.config.sweep is None:
        raise ConfigError("The configuration has no 'sweep' section")
    results = report.sweep()
    table = Table(title=f"Sweep over {report.config.sweep.parameter}")
    for column in ("Value", "Subtract", "Var(X)", "Var(P)", "Purity", "Undistilled Var(X)"):
        table.add_column(column, justify="right")
    for r in results:
        table.add_row(f"{r['value']:g}", r['subtract'], format_db(r['var_x_db']), format_db(r['var_p_db']),
                      f"{r['purity']:.3f}", format_db(r['undistilled_var_x_db']))
    console.print(table)


def main():
    """Main entry point"""
    cli()


if __name__ == "__main__":
    main()

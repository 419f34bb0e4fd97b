import sys
from typing import Optional

import click

from ergodic_lab.logging.logger import logging
from ergodic_lab.api.report_writer import FORMATS, emit_report
from ergodic_lab.api.utils import EXPERIMENTS, ExperimentConfig, parse_config, run_experiment, serialize_config
from ergodic_lab.components.markov import BACKENDS
from ergodic_lab.exception.custom_exception import (
    ConfigError,
    CoverageError,
    CustomException,
    DomainError,
    RangeError,
    ResourceError,
    StructuralError,
)

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_USAGE = 2

# errors caused by what was asked for rather than by what was found
USAGE_ERRORS = (ConfigError, CoverageError, ResourceError, DomainError, RangeError, StructuralError)

EXPERIMENT_HELP = {
    "renewal": "Return probabilities u_n, partial sums a_d(n), regular-variation index and doubling band.",
    "correlation": "Multiple correlations against prod m(B_j) u_k^d.",
    "recurrence": "Classify d-fold recurrence from the decay of u_n and find a recurrence witness.",
    "farey": "Exhaustive check of the ordering bijections on Farey slope intervals.",
    "psi-moments": "First and second moments of the psi counting functions.",
    "semiflow-llt": "Lattice local limit for the semiflow base against the fitted Gaussian density.",
    "lll": "Lower local limit window sums for the suspension semiflow.",
    "bell": "Tail sums outside the central window.",
    "hyp-geometry": "Disk geometry identities, angle windows and fundamental domains.",
    "group-enum": "Word growth, deduplication and word-metric comparison for a Fuchsian group.",
    "orbital": "Annulus orbital sums and the correlation sandwich.",
    "cover-count": "Normalized annulus counts over Ker Theta for Z^kappa covers.",
    "admissibility": "Admissibility band of the zero fiber.",
    "rwm": "Rational weak mixing defects over a sweep of n.",
    "transfer": "Transfer operator duality against intersection measures.",
    "induced-return": "First return time law to the zero fiber and its tail index.",
    "stable-density": "Stable density integral by quadrature, closed form and Riemann sums.",
    "aperiodicity": "Cycle lattice invariants of the roof and cocycle pair.",
    "flow-return": "Return sequence of the flow and its conservativity verdict.",
    "geodesic-multi": "Geodesic multiple correlations against products of pair correlations.",
    "nice": "All conditions of a nice set on one window.",
    "report": "Conformance run of every claim tag plus the tag coverage audit.",
}


def _read_config(path: Optional[str]) -> str:
    if path is None:
        return ""
    with open(path, "r") as file:
        return file.read()


def _apply_overrides(cfg: ExperimentConfig, out, fmt, threads, backend, tolerance, seed) -> ExperimentConfig:
    if out is not None:
        cfg.output_dir = out
    if fmt is not None:
        cfg.output_format = fmt
    if threads is not None:
        cfg.threads = threads
    if backend is not None:
        cfg.backend = backend
    if tolerance is not None:
        cfg.tolerance = tolerance
    if seed is not None:
        cfg.seed = seed
    return cfg


def run_command(name: str, config_path: Optional[str], out=None, fmt=None, threads=None,
                backend=None, tolerance=None, seed=None) -> int:
    """Parse, run and emit one experiment; returns the process exit code."""
    try:
        cfg = parse_config(_read_config(config_path), name)
        cfg = _apply_overrides(cfg, out, fmt, threads, backend, tolerance, seed)
        report = run_experiment(cfg)
        for path in emit_report(report, cfg.output_dir, cfg.output_format):
            click.echo(path)
    except USAGE_ERRORS as e:
        logging.error(f"❌ {name}: {e.error_message}")
        click.echo(f"error: {e.message}", err=True)
        return EXIT_USAGE
    except CustomException as e:
        logging.error(f"❌ {name}: {e.error_message}")
        click.echo(f"error: {e.message}", err=True)
        return EXIT_VERDICT

    if report.passed is False:
        click.echo(f"{name} [{report.tag}]: predicted property failed; verdicts {report.verdicts}", err=True)
        return EXIT_VERDICT
    click.echo(f"{name} [{report.tag}]: " + ("passed" if report.passed else "no verdict"), err=True)
    return EXIT_OK


@click.group()
def cli():
    """Numerical experiments on multiple recurrence and mixing of infinite measure systems."""


def _experiment_command(name: str):
    @cli.command(name=name, help=EXPERIMENT_HELP.get(name))
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                  help="JSON experiment config; defaults are used when omitted.")
    @click.option("--out", type=click.Path(file_okay=False), help="Report directory.")
    @click.option("--format", "fmt", type=click.Choice(FORMATS), help="Report format.")
    @click.option("--threads", type=click.IntRange(min=1), help="Worker threads for parameter sweeps.")
    @click.option("--backend", type=click.Choice(BACKENDS), help="Exact rationals or floats.")
    @click.option("--tolerance", type=click.FloatRange(min=0, min_open=True),
                  help="Quadrature tolerance override.")
    @click.option("--seed", type=click.IntRange(min=0), help="Seed for sampled checks.")
    def command(config_path, out, fmt, threads, backend, tolerance, seed):
        sys.exit(run_command(name, config_path, out, fmt, threads, backend, tolerance, seed))

    return command


for _name in EXPERIMENTS:
    _experiment_command(_name)


@cli.command(name="defaults")
@click.argument("experiment", type=click.Choice(list(EXPERIMENTS)))
def defaults_command(experiment):
    """Print the canonical config of EXPERIMENT with every default filled in."""
    click.echo(serialize_config(parse_config("", experiment)), nl=False)


if __name__ == "__main__":
    cli()

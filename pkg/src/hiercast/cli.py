"""Command-line entry point: prepare -> backtest -> train -> forecast -> quantiles -> evaluate.

Exit codes: 0 success, 1 validation error (bad inputs or config), 2 runtime
error. Errors print one machine-parsable line to stderr:
``error: <category>: <message>``.
"""

from __future__ import annotations

import functools
import logging
import sys

import click

from .config import PipelineConfig, write_default_config
from .errors import HiercastError, ValidationError
from .synthetic import SyntheticSpec, write_files
from . import pipeline


def _load_config(path, jobs=None, seed=None):
    config = PipelineConfig.load(path) if path else PipelineConfig.default()
    if jobs is not None:
        config.raw["jobs"] = jobs
    if seed is not None:
        config.raw["seed"] = seed
    return config


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"error: validation: {exc}", err=True)
            sys.exit(1)
        except HiercastError as exc:
            click.echo(f"error: runtime: {exc}", err=True)
            sys.exit(2)
        except Exception as exc:   # noqa: BLE001 - CLI boundary
            click.echo(f"error: runtime: {type(exc).__name__}: {exc}", err=True)
            sys.exit(2)
    return wrapper


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose):
    """Hierarchical retail sales forecasting pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


config_option = click.option("-c", "--config", "config_path", type=click.Path(),
                             default=None, help="YAML config file (defaults used if omitted).")
jobs_option = click.option("--jobs", type=int, default=None,
                           help="Worker cap for parallel stages.")
seed_option = click.option("--seed", type=int, default=None, help="Override the config seed.")


@main.command("init-config")
@click.argument("path", type=click.Path())
@handle_errors
def init_config(path):
    """Write the default config file to PATH."""
    write_default_config(path)
    click.echo(f"wrote default config to {path}")


@main.command("gen-synthetic")
@config_option
@click.option("--out", type=click.Path(), default="data", show_default=True)
@handle_errors
def gen_synthetic(config_path, out):
    """Generate a synthetic benchmark panel in the three-file input layout."""
    config = _load_config(config_path)
    s = config["synthetic"]
    spec = SyntheticSpec(n_stores=int(s["n_stores"]), n_items=int(s["n_items"]),
                         n_days=int(s["n_days"]), seed=int(s["seed"]))
    paths = write_files(spec, out)
    for name, p in paths.items():
        click.echo(f"{name}: {p}")


@main.command()
@config_option
@jobs_option
@seed_option
@handle_errors
def prepare(config_path, jobs, seed):
    """Validate inputs and build the panel and feature-matrix caches."""
    config = _load_config(config_path, jobs, seed)
    paths = pipeline.run_prepare(config)
    for name, p in sorted(paths.items()):
        click.echo(f"{name}: {p}")


@main.command()
@config_option
@jobs_option
@seed_option
@handle_errors
def backtest(config_path, jobs, seed):
    """Train and score every model group and the blend on the validation splits."""
    config = _load_config(config_path, jobs, seed)
    report = pipeline.run_backtest(config)
    click.echo(report.to_string(float_format=lambda v: f"{v:.6f}"))


@main.command()
@config_option
@jobs_option
@seed_option
@handle_errors
def train(config_path, jobs, seed):
    """Full training on all observed days; persists the fitted model groups."""
    config = _load_config(config_path, jobs, seed)
    models_dir = pipeline.run_train(config)
    click.echo(f"models: {models_dir}")


@main.command()
@config_option
@jobs_option
@seed_option
@handle_errors
def forecast(config_path, jobs, seed):
    """28-day level-12 point forecast (blended, optionally smoothed)."""
    config = _load_config(config_path, jobs, seed)
    path = pipeline.run_forecast(config)
    click.echo(f"forecast: {path}")


@main.command()
@config_option
@jobs_option
@seed_option
@handle_errors
def quantiles(config_path, jobs, seed):
    """Probabilistic submission: factors applied per level plus corrections."""
    config = _load_config(config_path, jobs, seed)
    path = pipeline.run_quantiles(config)
    click.echo(f"quantiles: {path}")


@main.command()
@config_option
@click.option("--forecast", "forecast_file", type=click.Path(), required=True,
              help="Point or quantile forecast CSV to score.")
@click.option("--start", type=int, required=True, help="First truth day (1-based).")
@click.option("--end", type=int, required=True, help="Last truth day (inclusive).")
@handle_errors
def evaluate(config_path, forecast_file, start, end):
    """Score a forecast file against panel actuals over a day range."""
    config = _load_config(config_path)
    report, out = pipeline.run_evaluate(config, forecast_file, start, end)
    click.echo(f"{report.metric}: {report.total:.6f}")
    click.echo(f"report: {out}")


if __name__ == "__main__":
    main()

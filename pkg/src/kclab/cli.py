"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import json
import sys

import click

from .config import ArtifactError, ConfigError, load_config
from .pipeline import STAGES, stage_plot
from .types import ValidationError

_method_option = click.option(
    "--method", type=click.Choice(["baseline", "llm-cot", "llm-direct"]),
    default=None, help="Labeling method (overrides the config file).")
_kc_set_option = click.option(
    "--kc-set", type=click.Choice(["human", "generated", "selected"]),
    default=None, help="KC set kind (overrides the config file).")
_seed_option = click.option(
    "--seed", type=int, default=None, help="Seed (overrides the config file).")


def _run_stage(stage: str, config_path: str, method, kc_set, seed) -> None:
    try:
        config = load_config(config_path, method=method, kc_set=kc_set, seed=seed)
        result = STAGES[stage](config)
    except (ConfigError, ArtifactError, ValidationError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(json.dumps({"stage": stage, **result}, default=str))


def _stage_command(stage: str, help_text: str):
    @click.command(name=stage, help=help_text)
    @click.option("--config", "config_path", required=True,
                  type=click.Path(exists=True, dir_okay=False))
    @_method_option
    @_kc_set_option
    @_seed_option
    def command(config_path, method, kc_set, seed):
        _run_stage(stage, config_path, method, kc_set, seed)

    return command


@click.group()
def main():
    """KC-level correctness labeling and learning-curve analytics."""


for _stage, _help in [
    ("ingest", "Load, validate, and canonicalize the dataset."),
    ("gen-kcs", "Generate and consolidate a KC set from correct exemplars."),
    ("map", "Map each student to the KC subset of their nearest exemplar."),
    ("label", "Produce per-KC correctness labels for first attempts."),
    ("curves", "Build learning curves and fit the power law of practice."),
    ("afm", "Train the Additive Factors Model and evaluate held-out AUC."),
    ("report", "Summarize learning-curve and AFM metrics across methods."),
]:
    main.add_command(_stage_command(_stage, _help))


@main.command(name="plot", help="Emit learning-curve plots (SVG + CSV).")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(["per_kc", "aggregated"]),
              default="aggregated")
@click.option("--max-opportunity", type=int, default=None)
@_method_option
@_kc_set_option
@_seed_option
def plot(config_path, kind, max_opportunity, method, kc_set, seed):
    try:
        config = load_config(config_path, method=method, kc_set=kc_set, seed=seed)
        result = stage_plot(config, kind=kind, max_opportunity=max_opportunity)
    except (ConfigError, ArtifactError, ValidationError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(json.dumps({"stage": "plot", **result}))


if __name__ == "__main__":
    main()

"""Command-line entry points for the simulator."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import click

from ..trainer import read_snapshot_csv
from .analysis import ab_test, hyperparameter_sweep
from .config import SimConfig, parse_grid_file, sim_config_from_file
from .model_io import load_model
from .simulation import drift_scenario, run_simulation


def _load_config(config_path, seed, out) -> SimConfig:
    cfg = sim_config_from_file(config_path, seed_override=seed, out_override=out)
    if cfg.output_dir is None:
        raise click.UsageError("set output_dir in the config file or pass --out")
    return cfg


def _echo_run(result) -> None:
    accepted = sum(1 for r in result.records if r.accepted)
    click.echo(
        f"rounds: {len(result.records)}  accepted: {accepted}  "
        f"final version: {result.final_model.version}  "
        f"final validation accuracy: {result.validation_accuracy:.4f}"
    )
    for name, path in (result.out_paths or {}).items():
        click.echo(f"  {name}: {path}")


@click.group()
def main() -> None:
    """Federated learning simulator for privacy-preserving learner analytics."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override master_seed.")
@click.option("--out", type=click.Path(), default=None, help="Override output_dir.")
@click.option("--figures/--no-figures", default=True, show_default=True)
def run(config_path, seed, out, figures) -> None:
    """Run the periodic-retraining simulation."""
    cfg = _load_config(config_path, seed, out)
    result = run_simulation(cfg, render_figures=figures)
    _echo_run(result)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--grid", "grid_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override master_seed.")
@click.option("--out", type=click.Path(), default=None, help="Override output_dir.")
@click.option("--figures/--no-figures", default=True, show_default=True)
def sweep(config_path, grid_path, seed, out, figures) -> None:
    """Run one simulation per hyperparameter grid point and rank the results."""
    cfg = _load_config(config_path, seed, out)
    grid = parse_grid_file(grid_path)
    entries = hyperparameter_sweep(grid, cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "sweep_results.csv"
    with results_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "grid_index", "params", "final_accuracy", "accepted_rounds", "error"])
        for rank, e in enumerate(entries, start=1):
            writer.writerow(
                [
                    rank,
                    e.grid_index,
                    json.dumps(e.params, sort_keys=True),
                    "" if e.final_accuracy is None else f"{e.final_accuracy:.9g}",
                    e.accepted_rounds,
                    e.error or "",
                ]
            )
    click.echo(f"swept {len(entries)} grid points -> {results_path}")
    best = entries[0]
    click.echo(
        f"best: {best.params} "
        f"(accuracy {best.final_accuracy if best.final_accuracy is not None else 'n/a'})"
    )
    if figures:
        from .plots import render_sweep_report

        click.echo(f"  figure: {render_sweep_report(entries, out_dir)}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--drift-week", required=True, type=int)
@click.option("--factor", type=float, default=0.5, show_default=True,
              help="How far archetypes move toward each other (0..1).")
@click.option("--seed", type=int, default=None, help="Override master_seed.")
@click.option("--out", type=click.Path(), default=None, help="Override output_dir.")
@click.option("--figures/--no-figures", default=True, show_default=True)
def drift(config_path, drift_week, factor, seed, out, figures) -> None:
    """Run the resilience scenario: archetypes drift at the given week."""
    cfg = _load_config(config_path, seed, out)
    result = drift_scenario(cfg, drift_week, factor, render_figures=figures)
    _echo_run(result)
    if result.drift_summary:
        click.echo("drift summary: " + json.dumps(result.drift_summary, sort_keys=True))


@main.command()
@click.option("--model-a", "model_a_path", required=True, type=click.Path(exists=True))
@click.option("--model-b", "model_b_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True),
              help="Snapshot CSV (learner_id, period_index, D,T,P,S,C,Q,R,F).")
def abtest(model_a_path, model_b_path, data_path) -> None:
    """Compare two saved models on the same evaluation data."""
    model_a = load_model(model_a_path).as_logistic()
    model_b = load_model(model_b_path).as_logistic()
    snapshots = read_snapshot_csv(data_path)
    report = ab_test(model_a, model_b, snapshots)
    click.echo(json.dumps(asdict(report), sort_keys=True, indent=2))


if __name__ == "__main__":
    main()

"""Command-line entry point.

Exit codes: 0 success, 1 validation or input error, 2 numerical failure
(non-finite loss or a failed gradient check). Zero sentiment scores count
as negative for pair generation, Acc2 and F1.
"""

from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path
from typing import List, Optional

import click
import numpy as np

from hycon.config import LOG_LEVEL, SHOW_PROGRESS, ExperimentConfig, SweepConfig, SweepKind, load_config, parse_config
from hycon.core import MODALITIES, binarize
from hycon.data import split_dataset, write_feature_table
from hycon.errors import ConfigError, HyconError, NumericalError
from hycon.experiments import (
    METRIC_COLUMNS,
    evaluate_saved,
    expected_spec,
    load_dataset,
    run_sweep,
    run_training,
)
from hycon.gradcheck import CHECKED_LOSSES, DEFAULT_SEEDS, DEFAULT_TOL, enabled_losses, run_gradient_suite
from hycon.metrics import pca2d
from hycon.model import HyconModel
from hycon.outputs import RunDirectory

logger = logging.getLogger(__name__)

DATASET_FILE = "dataset.txt"
EMBEDDINGS_FILE = "embeddings.csv"
PCA_FILE = "embeddings_pca.csv"


def _configure_logging(verbose: bool):
    level = logging.DEBUG if verbose else getattr(logging, LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def handle_errors(command):
    """Map library exceptions to exit codes with the message on stderr."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except NumericalError as e:
            click.echo(f"error: {str(e)}", err=True)
            sys.exit(2)
        except HyconError as e:
            click.echo(f"error: {str(e)}", err=True)
            sys.exit(1)

    return wrapper


def _resolve(config_path: Optional[Path], out: Optional[Path]) -> ExperimentConfig:
    config = load_config(config_path)
    if out is not None:
        config = config.model_copy(update={"output_dir": Path(out)})
    return config


def _echo_rows(rows: List[dict]):
    click.echo(",".join(METRIC_COLUMNS))
    for row in rows:
        cells = [row["regime"], str(row["seed"])]
        cells += [f"{row[c]:.4f}" for c in METRIC_COLUMNS[2:]]
        click.echo(",".join(cells))


config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
    help="YAML experiment config; omitted sections take their defaults.",
)
out_option = click.option(
    "--out", type=click.Path(path_type=Path), default=None, help="Output directory (overrides the config)."
)
seed_option = click.option("--seed", type=int, default=None, help="Run with this single seed.")
model_option = click.option(
    "--model", "model_path", type=click.Path(dir_okay=False, path_type=Path), required=True,
    help="Saved .npz model.",
)


@click.group()
@click.option("--verbose", is_flag=True, help="Log at DEBUG level.")
def main(verbose: bool):
    """HyCon: hybrid contrastive learning for tri-modal sentiment regression."""
    _configure_logging(verbose)


@main.command()
@config_option
@seed_option
@out_option
@handle_errors
def generate(config_path, seed, out):
    """Write the synthetic dataset as a feature table."""
    config = _resolve(config_path, out)
    spec = config.data.synthetic
    if spec is None:
        raise ConfigError(["generate needs a data.synthetic section"])
    if seed is not None:
        spec = spec.model_copy(update={"seed": seed})
        config = config.model_copy(update={"data": config.data.model_copy(update={"synthetic": spec})})
    dataset = load_dataset(config)
    with RunDirectory(config.output_dir) as run:
        target = run.path(DATASET_FILE)
        write_feature_table(dataset, target)
        run.write_config(config)
    click.echo(f"wrote {len(dataset)} samples to {target}")


@main.command()
@config_option
@seed_option
@out_option
@handle_errors
def train(config_path, seed, out):
    """Train one model per seed and write models, loss trajectories and metrics."""
    config = _resolve(config_path, out)
    if seed is not None:
        config = config.with_seed(seed)
    with RunDirectory(config.output_dir) as run:
        run.write_config(config)
        rows = run_training(config, run, progress=SHOW_PROGRESS)
    _echo_rows(rows)


@main.command(name="eval")
@config_option
@model_option
@seed_option
@out_option
@handle_errors
def evaluate_command(config_path, model_path, seed, out):
    """Score a saved model on every split of the seeded dataset split."""
    config = _resolve(config_path, out)
    seed = config.seeds[0] if seed is None else seed
    dataset = load_dataset(config)
    model = HyconModel.load(model_path, expected=expected_spec(config, dataset))
    rows = evaluate_saved(config, model, seed)
    with RunDirectory(config.output_dir) as run:
        run.write_config(config)
        run.write_csv("eval.csv", METRIC_COLUMNS, rows)
    _echo_rows(rows)


@main.command()
@config_option
@seed_option
@click.option("--tol", type=float, default=DEFAULT_TOL, show_default=True, help="Largest accepted relative error.")
@click.option("--seeds", "n_seeds", type=click.IntRange(min=1), default=DEFAULT_SEEDS, show_default=True)
@click.option("--corrupt", type=click.Choice(CHECKED_LOSSES), default=None, hidden=True)
@handle_errors
def gradcheck(config_path, seed, tol, n_seeds, corrupt):
    """Finite-difference check of every enabled loss on seeded random (K=8, d=6) batches."""
    config = load_config(config_path)
    start = config.hyperparams.seed if seed is None else seed
    losses = enabled_losses(config.loss)
    if corrupt is not None and corrupt not in losses:
        raise ConfigError([f"--corrupt {corrupt} is not enabled by the config"])
    report = run_gradient_suite(
        seeds=range(start, start + n_seeds),
        tol=tol,
        alpha=config.hyperparams.alpha if config.loss.enable_margin else 1.0,
        loss_config=config.loss,
        losses=losses,
        corrupt=corrupt,
    )
    for check in report.checks:
        click.echo(f"{check.name:<14} max rel err {check.max_rel_error:.3e} (seed {check.worst_seed})")
    report.raise_for_failure()
    click.echo(report.summary())


@main.command(name="export-embeddings")
@config_option
@model_option
@seed_option
@out_option
@handle_errors
def export_embeddings(config_path, model_path, seed, out):
    """Write unimodal and fused embeddings of every split plus their 2-D PCA projection."""
    config = _resolve(config_path, out)
    seed = config.seeds[0] if seed is None else seed
    dataset = load_dataset(config)
    model = HyconModel.load(model_path, expected=expected_spec(config, dataset))
    splits = split_dataset(dataset, seed, config.training.split)

    rows, vectors = [], []
    for split, part in splits.named():
        if len(part) == 0:
            continue
        unimodal, fused = model.representations(part.as_batch())
        views = [(m.value, unimodal[m]) for m in MODALITIES] + [("fused", fused)]
        for i, (sample_id, label) in enumerate(zip(part.sample_ids, part.labels)):
            for tag, matrix in views:
                row = {
                    "sample_id": int(sample_id),
                    "split": split,
                    "label": float(label),
                    "class": binarize(float(label)).value,
                    "modality_or_fused": tag,
                }
                row.update({f"x{j}": float(v) for j, v in enumerate(matrix[i])})
                rows.append(row)
                vectors.append(matrix[i])

    coords = pca2d(np.array(vectors))
    columns = ["sample_id", "split", "label", "class", "modality_or_fused"]
    columns += [f"x{j}" for j in range(model.spec.d)]
    pca_rows = [
        {"sample_id": row["sample_id"], "pc1": float(c[0]), "pc2": float(c[1])} for row, c in zip(rows, coords)
    ]
    with RunDirectory(config.output_dir) as run:
        run.write_config(config)
        run.write_csv(EMBEDDINGS_FILE, columns, rows)
        run.write_csv(PCA_FILE, ["sample_id", "pc1", "pc2"], pca_rows)
    click.echo(f"wrote {len(rows)} embedding rows to {run.path(EMBEDDINGS_FILE)}")


@main.command()
@config_option
@seed_option
@out_option
@click.option(
    "--kind", type=click.Choice([k.value for k in SweepKind]), default=None,
    help="Sweep kind (overrides the config's sweep section).",
)
@handle_errors
def sweep(config_path, seed, out, kind):
    """Train every point of an alpha, lambda, loss, fusion or ablation grid."""
    config = _resolve(config_path, out)
    if seed is not None:
        config = config.with_seed(seed)
    if kind is not None or config.sweep is None:
        base = config.sweep or SweepConfig()
        sweep_config = base.model_copy(update={"kind": SweepKind(kind)}) if kind else base
        raw = config.model_dump(mode="json")
        raw["sweep"] = sweep_config.model_dump(mode="json")
        config = parse_config(raw)
    with RunDirectory(config.output_dir) as run:
        run.write_config(config)
        rows = run_sweep(config, run, progress=SHOW_PROGRESS)
    _echo_rows(rows)


if __name__ == "__main__":
    main()

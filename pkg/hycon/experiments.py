"""Config-driven runs: per-seed training and evaluation, metrics tables and sweeps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hycon.config import ABLATION_TOGGLES, SHOW_PROGRESS, ExperimentConfig, SweepKind
from hycon.data import Dataset, DatasetSplits, generate_synthetic, read_feature_table, split_dataset
from hycon.errors import LabelError, ShapeError
from hycon.losses import LossConfig, LossReport
from hycon.metrics import Metrics, evaluate, silhouette
from hycon.model import HyconModel, ModelSpec
from hycon.outputs import RunDirectory
from hycon.training import TrainResult, train

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("regime", "seed", "acc7", "acc2", "f1", "mae", "corr", "silhouette")
LOSS_COLUMNS = ("epoch",) + LossReport.FIELDS
METRICS_FILE = "metrics.csv"


def load_dataset(config: ExperimentConfig) -> Dataset:
    data = config.data
    if data.synthetic is not None:
        return generate_synthetic(data.synthetic)
    return read_feature_table(data.path)


def expected_spec(config: ExperimentConfig, dataset: Dataset) -> ModelSpec:
    """The architecture a config trains on a dataset, for checking saved models."""
    return ModelSpec(
        dataset.widths,
        config.hyperparams.d,
        config.training.hidden,
        config.fusion,
        config.loss.fuse_normalized,
    )


@dataclass(frozen=True)
class RunOutcome:
    regime: str
    seed: int
    metrics: Metrics
    silhouette: float
    result: TrainResult
    splits: DatasetSplits

    def row(self) -> dict:
        return metrics_row(self.regime, self.seed, self.metrics, self.silhouette)


def metrics_row(regime: str, seed, metrics: Metrics, sil: float) -> dict:
    return {"regime": regime, "seed": seed, **metrics.as_dict(), "silhouette": sil}


def fused_silhouette(model: HyconModel, dataset: Dataset) -> float:
    """Silhouette of the summed fusion-input embeddings; NaN when it is undefined for the split."""
    batch = dataset.as_batch()
    _, fused = model.representations(batch)
    try:
        return silhouette(fused, batch.positive)
    except (LabelError, ShapeError) as e:
        logger.warning("silhouette skipped: %s", str(e))
        return math.nan


def run_seed(
    config: ExperimentConfig,
    seed: int,
    dataset: Optional[Dataset] = None,
    regime: Optional[str] = None,
    progress: bool = SHOW_PROGRESS,
) -> RunOutcome:
    """Split, train and evaluate on the test split with one seed."""
    dataset = dataset if dataset is not None else load_dataset(config)
    splits = split_dataset(dataset, seed, config.training.split)
    hyperparams = config.hyperparams.model_copy(update={"seed": seed})
    result = train(
        splits.train,
        hyperparams,
        config.fusion,
        config.loss,
        val_set=splits.val,
        epochs=config.training.epochs,
        patience=config.training.patience,
        hidden=config.training.hidden,
        max_steps=config.training.max_steps,
        progress=progress,
    )
    metrics = evaluate(result.model, splits.test)
    sil = fused_silhouette(result.model, splits.test)
    name = regime or config.loss.regime()
    logger.info("%s seed %d: %s silhouette=%.4f", name, seed, metrics, sil)
    return RunOutcome(name, seed, metrics, sil, result, splits)


def summary_rows(rows: Sequence[dict]) -> List[dict]:
    """Mean and population-std rows of the metric columns, one pair per regime."""
    regimes: List[str] = []
    for row in rows:
        if row["regime"] not in regimes:
            regimes.append(row["regime"])
    out = []
    for regime in regimes:
        group = [r for r in rows if r["regime"] == regime]
        for label, reduce in (("mean", np.mean), ("std", np.std)):
            summary = {"regime": regime, "seed": label}
            for column in METRIC_COLUMNS[2:]:
                summary[column] = float(reduce([r[column] for r in group]))
            out.append(summary)
    return out


def with_summaries(rows: Sequence[dict], n_seeds: int) -> List[dict]:
    """Per-seed rows of each regime followed by its mean and std rows when several seeds ran."""
    if n_seeds < 2:
        return list(rows)
    summaries = summary_rows(rows)
    out = []
    for regime in dict.fromkeys(r["regime"] for r in rows):
        out.extend(r for r in rows if r["regime"] == regime)
        out.extend(s for s in summaries if s["regime"] == regime)
    return out


def loss_rows(history: Sequence[LossReport]) -> List[dict]:
    return [{"epoch": epoch, **report.as_dict()} for epoch, report in enumerate(history)]


def run_training(config: ExperimentConfig, out: RunDirectory, progress: bool = SHOW_PROGRESS) -> List[dict]:
    """Train once per configured seed, writing models, loss trajectories and metrics."""
    dataset = load_dataset(config)
    rows = []
    for seed in config.seeds:
        outcome = run_seed(config, seed, dataset, progress=progress)
        out.save_model(f"model_seed{seed}.npz", outcome.result.model)
        out.write_csv(f"losses_seed{seed}.csv", LOSS_COLUMNS, loss_rows(outcome.result.history))
        rows.append(outcome.row())
    table = with_summaries(rows, len(config.seeds))
    out.write_csv(METRICS_FILE, METRIC_COLUMNS, table)
    return table


def _format_lambdas(lambdas: Tuple[float, float, float]) -> str:
    return "lambda=" + "/".join(f"{v:g}" for v in lambdas)


def sweep_variants(config: ExperimentConfig) -> List[Tuple[str, ExperimentConfig]]:
    """One (label, config) pair per point of the configured sweep."""
    sweep = config.sweep
    if sweep is None:
        return [(config.loss.regime(), config)]
    hp = config.hyperparams
    base_loss = config.loss.model_copy(update={"baseline_loss": None})
    variants: List[Tuple[str, ExperimentConfig]] = []

    if sweep.kind is SweepKind.ALPHA:
        for alpha in sweep.alphas:
            update = {"hyperparams": hp.model_copy(update={"alpha": alpha})}
            variants.append((f"alpha={alpha:g}", config.model_copy(update=update)))
    elif sweep.kind is SweepKind.LAMBDA:
        for l1, l2, l3 in sweep.lambdas:
            update = {"hyperparams": hp.model_copy(update={"lambda1": l1, "lambda2": l2, "lambda3": l3})}
            variants.append((_format_lambdas((l1, l2, l3)), config.model_copy(update=update)))
    elif sweep.kind is SweepKind.LOSS:
        for kind in sweep.losses:
            loss = base_loss.model_copy(update={"baseline_loss": kind})
            label = "hycon" if kind is None else kind.label
            variants.append((label, config.model_copy(update={"loss": loss})))
    elif sweep.kind is SweepKind.FUSION:
        for fusion in sweep.fusions:
            variants.append((fusion.value, config.model_copy(update={"fusion": fusion})))
    else:
        for name in sweep.regimes:
            loss = regime_config(config.loss, name)
            variants.append((name, config.model_copy(update={"loss": loss})))
    return variants


def run_sweep(config: ExperimentConfig, out: RunDirectory, progress: bool = SHOW_PROGRESS) -> List[dict]:
    """Train every sweep point with every seed on one shared dataset and write one table."""
    dataset = load_dataset(config)
    variants = sweep_variants(config)
    rows = []
    for label, variant in variants:
        for seed in config.seeds:
            rows.append(run_seed(variant, seed, dataset, regime=label, progress=progress).row())
    kind = config.sweep.kind.value if config.sweep is not None else "none"
    table = with_summaries(rows, len(config.seeds))
    out.write_csv(f"sweep_{kind}.csv", METRIC_COLUMNS, table)
    return table


def evaluate_saved(config: ExperimentConfig, model: HyconModel, seed: int) -> List[dict]:
    """Metrics of a saved model on each split of the seeded dataset split."""
    dataset = load_dataset(config)
    splits = split_dataset(dataset, seed, config.training.split)
    rows = []
    for split, part in splits.named():
        if len(part) == 0:
            continue
        metrics = evaluate(model, part)
        rows.append(metrics_row(f"{config.loss.regime()}:{split}", seed, metrics, fused_silhouette(model, part)))
    return rows


def regime_config(loss: LossConfig, name: str) -> LossConfig:
    """The loss configuration of a named ablation regime."""
    return loss.model_copy(update={"baseline_loss": None, **ABLATION_TOGGLES[name]})

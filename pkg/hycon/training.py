"""Adam optimization of the overall loss over shuffled mini-batches."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from hycon.autodiff import DiffNode
from hycon.core import HyperParams, MiniBatch
from hycon.data import Dataset, iterate_minibatches
from hycon.errors import ConfigError, NumericalError, ShapeError
from hycon.losses import HybridTerms, LossConfig, LossReport, hybrid_terms, loss_hybrid, loss_prediction
from hycon.model import DEFAULT_HIDDEN, FusionKind, HyconModel, ModelSpec, gradients, stack_embeddings
from hycon.optim import Adam

logger = logging.getLogger(__name__)

# Independent RNG streams derived from the run seed.
_INIT_STREAM, _SHUFFLE_STREAM, _PAIR_STREAM = 0, 1, 2


def _stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def overall_loss(
    model: HyconModel,
    batch: MiniBatch,
    hyperparams: HyperParams,
    loss_config: LossConfig,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[DiffNode, LossReport, dict]:
    """Build the graph of prediction loss + hybrid contrastive loss for one batch.

    Returns:
        Tuple[DiffNode, LossReport, dict]: Scalar root, per-term values and
        the parameter leaves whose gradients the root's backward pass fills
    """
    leaves, encoder, head = model.bind()
    passes = model.forward(batch, encoder, head)
    pred = loss_prediction(passes.prediction, batch.labels)
    if loss_config.contrastive:
        terms = hybrid_terms(
            stack_embeddings(passes.normalized), batch, loss_config, hyperparams.alpha, rng
        )
        hybrid = loss_hybrid(terms, hyperparams.lambdas)
        overall = pred + hybrid
    else:
        zero = DiffNode(0.0)
        terms = HybridTerms(zero, zero, zero, zero, zero)
        hybrid = zero
        overall = pred
    report = LossReport.from_nodes(terms, hybrid, pred, overall)
    return overall, report, leaves


@dataclass
class TrainResult:
    model: HyconModel
    history: List[LossReport] = field(default_factory=list)
    steps: List[LossReport] = field(default_factory=list)
    val_mae: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _val_mae(model: HyconModel, val: Dataset) -> float:
    pred = model.predict(val.as_batch())
    return float(np.mean(np.abs(pred - val.labels)))


def training_steps(
    model: HyconModel,
    train_set: Dataset,
    hyperparams: HyperParams,
    loss_config: LossConfig,
    epoch: int,
    optimizer: Adam,
    shuffle_rng: np.random.Generator,
    pair_rng: np.random.Generator,
) -> Iterator[LossReport]:
    """Yield the LossReport of each optimization step of one epoch.

    Raises:
        NumericalError: If any loss term becomes non-finite
    """
    for step, batch in enumerate(iterate_minibatches(train_set, hyperparams.batch_size, shuffle_rng)):
        root, report, leaves = overall_loss(model, batch, hyperparams, loss_config, pair_rng)
        bad = report.first_non_finite()
        if bad is not None:
            raise NumericalError(
                f"non-finite {bad}={getattr(report, bad)} at epoch {epoch}, step {step}: {report.as_dict()}"
            )
        root.backward()
        optimizer.step(model.params, gradients(leaves))
        yield report


def train(
    train_set: Dataset,
    hyperparams: HyperParams,
    fusion: FusionKind,
    loss_config: LossConfig,
    val_set: Optional[Dataset] = None,
    epochs: int = 50,
    patience: int = 10,
    hidden: int = DEFAULT_HIDDEN,
    max_steps: Optional[int] = None,
    progress: bool = False,
) -> TrainResult:
    """Minimize the overall loss with Adam; deterministic given `hyperparams.seed`.

    With a validation set, training stops once the validation MAE has not
    improved for `patience` epochs and the best-epoch parameters are returned.

    Args:
        train_set (Dataset): Training samples
        hyperparams (HyperParams): Margin, loss weights, width, batch size, lr, seed
        fusion (FusionKind): Fusion strategy of the prediction head
        loss_config (LossConfig): Active objectives
        val_set (Optional[Dataset]): Early-stopping set
        epochs (int): Maximum number of epochs
        patience (int): Epochs without validation improvement before stopping
        hidden (int): Encoder hidden width
        max_steps (Optional[int]): Stop after this many optimizer steps
        progress (bool): Show a progress bar

    Returns:
        TrainResult: Final (or best) model and the loss trajectory

    Raises:
        ShapeError: If the training set is empty
        ConfigError: If the batch size exceeds the training set
        NumericalError: If any loss term becomes non-finite
    """
    if len(train_set) == 0:
        raise ShapeError("cannot train on an empty dataset")
    if hyperparams.batch_size > len(train_set):
        raise ConfigError([f"batch_size {hyperparams.batch_size} exceeds the {len(train_set)} training samples"])

    spec = ModelSpec(train_set.widths, hyperparams.d, hidden, FusionKind(fusion), loss_config.fuse_normalized)
    model = HyconModel.initialize(spec, int(_stream(hyperparams.seed, _INIT_STREAM).integers(2**31)))
    optimizer = Adam(lr=hyperparams.learning_rate)
    shuffle_rng = _stream(hyperparams.seed, _SHUFFLE_STREAM)
    pair_rng = _stream(hyperparams.seed, _PAIR_STREAM)
    result = TrainResult(model)

    best_mae, best_params, stale = np.inf, None, 0
    bar = tqdm(total=max_steps or epochs, disable=not progress, desc=loss_config.regime(), unit="step" if max_steps else "epoch")
    for epoch in range(epochs):
        epoch_reports = []
        for report in training_steps(model, train_set, hyperparams, loss_config, epoch, optimizer, shuffle_rng, pair_rng):
            epoch_reports.append(report)
            result.steps.append(report)
            if max_steps:
                bar.update(1)
                if len(result.steps) >= max_steps:
                    break
        if not epoch_reports:
            break
        summary = LossReport.mean(epoch_reports)
        result.history.append(summary)
        if not max_steps:
            bar.update(1)

        if val_set is not None and len(val_set) > 0:
            mae = _val_mae(model, val_set)
            result.val_mae.append(mae)
            logger.info("epoch %d %s val_mae=%.4f", epoch, _format_report(summary), mae)
            if mae < best_mae:
                best_mae, best_params, stale = mae, {k: v.copy() for k, v in model.params.items()}, 0
                result.best_epoch = epoch
            else:
                stale += 1
                if stale >= patience:
                    logger.info("early stop at epoch %d, best epoch %d (val_mae=%.4f)", epoch, result.best_epoch, best_mae)
                    result.stopped_early = True
                    break
        else:
            logger.info("epoch %d %s", epoch, _format_report(summary))
            result.best_epoch = epoch
        if max_steps and len(result.steps) >= max_steps:
            break
    bar.close()

    if best_params is not None:
        model.params = best_params
    return result


def _format_report(report: LossReport) -> str:
    return " ".join(f"{name}={value:.4f}" for name, value in report.as_dict().items())

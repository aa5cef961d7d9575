"""Sentiment regression metrics and cluster-geometry diagnostics."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import sklearn.metrics as m
from scipy.stats import pearsonr
from sklearn.decomposition import PCA

from hycon.core import SCORE_MAX, SCORE_MIN, binarize_scores
from hycon.data import Dataset
from hycon.errors import LabelError, ShapeError
from hycon.model import HyconModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Metrics:
    acc7: float
    acc2: float
    f1: float
    mae: float
    corr: float

    def as_dict(self) -> dict:
        return asdict(self)


def seven_class(scores: np.ndarray) -> np.ndarray:
    """Nearest integer in [-3, 3]; numpy rounds halves to even."""
    return np.clip(np.round(np.asarray(scores, dtype=np.float64)), SCORE_MIN, SCORE_MAX).astype(int)


def pearson(y_pred: np.ndarray, y_true: np.ndarray) -> float:
    """Pearson correlation; 0 with a warning when either side has zero variance."""
    if y_pred.size < 2 or np.ptp(y_pred) == 0 or np.ptp(y_true) == 0:
        message = "correlation undefined for zero-variance input, reporting 0"
        logger.warning(message)
        warnings.warn(message, RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.clip(pearsonr(y_pred, y_true)[0], -1.0, 1.0))


def compute_metrics(y_pred: np.ndarray, y_true: np.ndarray) -> Metrics:
    """Acc7, Acc2, positive-class F1, MAE and Pearson correlation.

    Args:
        y_pred (np.ndarray): Predicted scores
        y_true (np.ndarray): Reference scores in [-3, 3]

    Returns:
        Metrics: The five evaluation metrics

    Raises:
        ShapeError: If the inputs are empty or differ in length
    """
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    if y_pred.size == 0 or y_pred.shape != y_true.shape:
        raise ShapeError(f"cannot score {y_pred.size} predictions against {y_true.size} labels")

    pred_pos = binarize_scores(y_pred).astype(int)
    true_pos = binarize_scores(y_true).astype(int)
    return Metrics(
        acc7=float(m.accuracy_score(seven_class(y_true), seven_class(y_pred))),
        acc2=float(m.accuracy_score(true_pos, pred_pos)),
        f1=float(m.f1_score(true_pos, pred_pos, pos_label=1, average="binary", zero_division=0)),
        mae=float(m.mean_absolute_error(y_true, y_pred)),
        corr=pearson(y_pred, y_true),
    )


def evaluate(model: HyconModel, dataset: Dataset) -> Metrics:
    """Score a model's predictions on a dataset; repeated calls agree bitwise.

    Raises:
        ShapeError: If the dataset is empty
    """
    if len(dataset) == 0:
        raise ShapeError("cannot evaluate on an empty dataset")
    return compute_metrics(model.predict(dataset.as_batch()), dataset.labels)


def silhouette(points: np.ndarray, positive: np.ndarray) -> float:
    """Mean silhouette coefficient of the binary sentiment classes, Euclidean distance.

    A cluster with a single member scores 0 for that member, so two points
    of different classes give 0.

    Raises:
        LabelError: If only one class is present
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(positive, dtype=bool).astype(int)
    if points.ndim != 2 or points.shape[0] != labels.shape[0] or points.shape[0] < 2:
        raise ShapeError(f"silhouette needs at least 2 labelled points, got {points.shape} and {labels.shape}")
    n_labels = np.unique(labels).size
    if n_labels < 2:
        raise LabelError("silhouette needs both sentiment classes present")
    if n_labels == labels.size:
        return 0.0
    return float(m.silhouette_score(points, labels, metric="euclidean"))


def pca2d(points: np.ndarray) -> np.ndarray:
    """Project rows onto the top two principal components.

    Each component's sign is fixed so that its first nonzero loading is
    positive. Widths below 2 and zero-variance inputs yield zero columns.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ShapeError(f"pca2d needs at least 2 rows, got shape {points.shape}")
    coords = np.zeros((points.shape[0], 2))
    centered = points - points.mean(axis=0)
    if not np.any(np.abs(centered) > 1e-12):
        return coords

    n_components = min(2, points.shape[0], points.shape[1])
    pca = PCA(n_components=n_components, svd_solver="full")
    projected = pca.fit_transform(points)
    for c in range(n_components):
        loading = pca.components_[c]
        nonzero = np.flatnonzero(np.abs(loading) > 1e-12)
        sign = -1.0 if nonzero.size and loading[nonzero[0]] < 0 else 1.0
        coords[:, c] = sign * projected[:, c]
    return coords

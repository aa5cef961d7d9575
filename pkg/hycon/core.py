"""Domain types shared by every other module: modalities, batches, labels, hyperparameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from hycon.errors import LabelError, ShapeError

SCORE_MIN = -3.0
SCORE_MAX = 3.0


class Modality(str, Enum):
    """One of the three input channels, ordered language < audio < visual."""

    LANGUAGE = "language"
    AUDIO = "audio"
    VISUAL = "visual"

    @property
    def position(self) -> int:
        return _MODALITY_ORDER.index(self)

    def __lt__(self, other: "Modality") -> bool:
        if not isinstance(other, Modality):
            return NotImplemented
        return self.position < other.position

    def others(self) -> Tuple["Modality", "Modality"]:
        """The two remaining modalities, in canonical order."""
        return tuple(m for m in _MODALITY_ORDER if m is not self)  # type: ignore[return-value]


_MODALITY_ORDER: Tuple[Modality, ...] = (Modality.LANGUAGE, Modality.AUDIO, Modality.VISUAL)
MODALITIES = _MODALITY_ORDER


class BinaryClass(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class SentimentLabel:
    """A continuous sentiment score in [-3, 3]."""

    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise LabelError(f"Sentiment score must be finite, got {self.score}")
        if not SCORE_MIN <= self.score <= SCORE_MAX:
            raise LabelError(f"Sentiment score {self.score} outside [{SCORE_MIN}, {SCORE_MAX}]")


def binarize(label: Union[SentimentLabel, float]) -> BinaryClass:
    """Map a sentiment score to its polarity; zero counts as negative."""
    score = label.score if isinstance(label, SentimentLabel) else SentimentLabel(float(label)).score
    return BinaryClass.POSITIVE if score > 0 else BinaryClass.NEGATIVE


def binarize_scores(scores: np.ndarray) -> np.ndarray:
    """Vectorized `binarize`: True where positive."""
    return np.asarray(scores, dtype=np.float64) > 0


def _check_finite_matrix(values: np.ndarray, what: str) -> np.ndarray:
    values = np.array(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise ShapeError(f"{what} must be a non-empty 2-D matrix, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ShapeError(f"{what} contains non-finite entries")
    return values


@dataclass(frozen=True)
class EmbeddingMatrix:
    """K x d unimodal representations for one modality of a mini-batch."""

    rows: np.ndarray
    modality: Modality
    normalized: bool = False

    def __post_init__(self):
        rows = _check_finite_matrix(self.rows, f"{self.modality.value} embeddings")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        if self.normalized and not self.has_unit_rows():
            raise ShapeError(f"{self.modality.value} embeddings flagged normalized but a row norm is not 1")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows.shape

    def has_unit_rows(self, tol: float = 1e-6) -> bool:
        norms = np.linalg.norm(self.rows, axis=1)
        nonzero = np.any(self.rows != 0, axis=1)
        return bool(np.all(np.abs(norms[nonzero] - 1.0) <= tol))


@dataclass(frozen=True)
class MiniBatch:
    """Three feature matrices (language, audio, visual) plus continuous labels.

    Binary classes are a derived view of the labels and are never stored
    independently.
    """

    features: Tuple[np.ndarray, np.ndarray, np.ndarray]
    labels: np.ndarray
    sample_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if len(self.features) != len(MODALITIES):
            raise ShapeError(f"Expected {len(MODALITIES)} feature matrices, got {len(self.features)}")
        features = tuple(
            _check_finite_matrix(f, f"{m.value} features") for f, m in zip(self.features, MODALITIES)
        )
        labels = np.array(self.labels, dtype=np.float64).reshape(-1)
        sizes = {f.shape[0] for f in features}
        if len(sizes) != 1 or labels.shape[0] not in sizes:
            raise ShapeError(f"Feature matrices and labels disagree on K: {sorted(sizes)} vs {labels.shape[0]}")
        if not np.all(np.isfinite(labels)) or np.any(np.abs(labels) > SCORE_MAX):
            raise LabelError("Labels must be finite scores within [-3, 3]")
        ids = np.arange(labels.shape[0]) if self.sample_ids is None else np.array(self.sample_ids)
        for arr in (*features, labels, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_ids", ids)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def positive(self) -> np.ndarray:
        """Boolean class view: True for positive samples."""
        return binarize_scores(self.labels)

    @property
    def classes(self) -> Tuple[BinaryClass, ...]:
        return tuple(binarize(float(s)) for s in self.labels)

    def feature(self, modality: Modality) -> np.ndarray:
        return self.features[modality.position]

    def permuted(self, order: Sequence[int]) -> "MiniBatch":
        order = np.asarray(order)
        return MiniBatch(
            features=tuple(f[order] for f in self.features),  # type: ignore[arg-type]
            labels=self.labels[order],
            sample_ids=self.sample_ids[order],
        )


class HyperParams(BaseModel):
    """Training hyperparameters (margin 0.8, unit loss weights, d=50, lr 1e-5)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(0.8, ge=0.0, le=1.0, description="modality margin")
    lambda1: float = Field(1.0, ge=0.0, description="IAMCL weight")
    lambda2: float = Field(1.0, ge=0.0, description="IEMCL weight")
    lambda3: float = Field(1.0, ge=0.0, description="SCL weight")
    d: int = Field(50, ge=1, description="embedding width")
    batch_size: int = Field(32, ge=2)
    learning_rate: float = Field(1e-5, gt=0.0)
    seed: int = 0

    @property
    def lambdas(self) -> Tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)


def default_hyperparams() -> HyperParams:
    return HyperParams()

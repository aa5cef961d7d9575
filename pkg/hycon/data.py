"""Synthetic tri-modal data, dataset splits, mini-batch sampling and feature tables."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from hycon.core import MODALITIES, SCORE_MAX, SCORE_MIN, MiniBatch, Modality
from hycon.errors import DatasetFormatError, LabelError, ShapeError

logger = logging.getLogger(__name__)

TABLE_HEADER = "#hycon-features v1"
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


class SyntheticSpec(BaseModel):
    """Parameters of the synthetic stand-in for an utterance-level sentiment corpus."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_samples: int = Field(2000, ge=1)
    d_l: int = Field(32, ge=1)
    d_a: int = Field(16, ge=1)
    d_v: int = Field(12, ge=1)
    shared_strength: float = 1.0
    noise_sigma: float = Field(6.0, ge=0.0)
    modality_offset: Dict[Modality, float] = Field(
        default_factory=lambda: {Modality.LANGUAGE: 0.0, Modality.AUDIO: 0.5, Modality.VISUAL: -0.5}
    )
    seed: int = 0

    @property
    def widths(self) -> Tuple[int, int, int]:
        return (self.d_l, self.d_a, self.d_v)


@dataclass(frozen=True)
class Dataset:
    """Per-modality feature matrices (n x d_m) and continuous labels."""

    features: Tuple[np.ndarray, np.ndarray, np.ndarray]
    labels: np.ndarray
    sample_ids: np.ndarray

    def __post_init__(self):
        if len(self.features) != len(MODALITIES):
            raise ShapeError(f"expected {len(MODALITIES)} feature matrices, got {len(self.features)}")
        n = self.labels.shape[0]
        for m, f in zip(MODALITIES, self.features):
            if f.ndim != 2 or f.shape[0] != n:
                raise ShapeError(f"{m.value} features have shape {f.shape}, expected ({n}, d)")
        if self.sample_ids.shape[0] != n:
            raise ShapeError("sample ids and labels differ in length")
        if not np.all(np.isfinite(self.labels)) or np.any(np.abs(self.labels) > SCORE_MAX):
            raise LabelError("labels must be finite scores within [-3, 3]")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def widths(self) -> Tuple[int, int, int]:
        return tuple(int(f.shape[1]) for f in self.features)  # type: ignore[return-value]

    def subset(self, index: np.ndarray) -> "Dataset":
        index = np.asarray(index, dtype=int)
        return Dataset(
            tuple(f[index] for f in self.features),  # type: ignore[arg-type]
            self.labels[index],
            self.sample_ids[index],
        )

    def as_batch(self, index: np.ndarray = None) -> MiniBatch:
        part = self if index is None else self.subset(index)
        return MiniBatch(part.features, part.labels, part.sample_ids)


@dataclass(frozen=True)
class DatasetSplits:
    train: Dataset
    val: Dataset
    test: Dataset

    def named(self) -> List[Tuple[str, Dataset]]:
        return [("train", self.train), ("val", self.val), ("test", self.test)]


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw latent sentiment s ~ U[-3, 3] and derive three noisy modality views.

    Each modality sees ``shared_strength * [s, s^2, sign(s)] @ P_m`` through its
    own fixed random projection ``P_m``, shifted by the modality offset and
    perturbed with Gaussian noise. Identical specs give identical datasets.
    """
    rng = np.random.default_rng(spec.seed)
    latent = rng.uniform(SCORE_MIN, SCORE_MAX, size=spec.n_samples)
    basis = np.stack([latent, latent**2, np.sign(latent)], axis=1)
    features = []
    for m, width in zip(MODALITIES, spec.widths):
        projection = rng.standard_normal((basis.shape[1], width)) / np.sqrt(basis.shape[1])
        noise = rng.standard_normal((spec.n_samples, width)) * spec.noise_sigma
        features.append(spec.shared_strength * basis @ projection + spec.modality_offset.get(m, 0.0) + noise)
    logger.debug("generated %d synthetic samples with widths %s", spec.n_samples, spec.widths)
    return Dataset(tuple(features), latent, np.arange(spec.n_samples))  # type: ignore[arg-type]


def split_sizes(n: int, fractions: Tuple[float, float, float] = SPLIT_FRACTIONS) -> Tuple[int, int, int]:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return n_train, n_val, n - n_train - n_val


def split_dataset(dataset: Dataset, seed: int, fractions: Tuple[float, float, float] = SPLIT_FRACTIONS) -> DatasetSplits:
    """Seeded shuffle into train/val/test parts of the given fractions."""
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_val, _ = split_sizes(n, fractions)
    return DatasetSplits(
        dataset.subset(np.sort(order[:n_train])),
        dataset.subset(np.sort(order[n_train:n_train + n_val])),
        dataset.subset(np.sort(order[n_train + n_val:])),
    )


def iterate_minibatches(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> Iterator[MiniBatch]:
    """Shuffled mini-batches of `batch_size`; a trailing batch smaller than 2 is dropped."""
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        index = order[start:start + batch_size]
        if index.size < 2:
            break
        yield dataset.as_batch(index)


def _format_row(values: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in values)


def write_feature_table(dataset: Dataset, path: Path):
    """Write the plain-text feature table format.

    Raises:
        DatasetFormatError: If the file cannot be written
    """
    lines = [TABLE_HEADER]
    for m, block in zip(MODALITIES, dataset.features):
        lines.append(f"[modality {m.value} dim {block.shape[1]}]")
        lines.extend(_format_row(row) for row in block)
    lines.append("[labels]")
    lines.extend(repr(float(s)) for s in dataset.labels)
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise DatasetFormatError(f"Failed to write feature table {path}: {str(e)}") from e


def read_feature_table(path: Path) -> Dataset:
    """Parse a feature table written by `write_feature_table` (or by hand).

    Raises:
        DatasetFormatError: If the file is missing or malformed
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetFormatError(f"Failed to read feature table {path}: {str(e)}") from e

    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != TABLE_HEADER:
        raise DatasetFormatError(f"{path}: missing '{TABLE_HEADER}' header")

    blocks: Dict[str, Tuple[int, List[List[float]]]] = {}
    labels: List[float] = []
    current = None
    for number, line in enumerate(lines[1:], start=2):
        if line.startswith("["):
            parts = line.strip("[]").split()
            if parts == ["labels"]:
                current = "labels"
            elif len(parts) == 4 and parts[0] == "modality" and parts[2] == "dim":
                try:
                    name, dim = Modality(parts[1]).value, int(parts[3])
                except ValueError as e:
                    raise DatasetFormatError(f"{path}:{number}: bad block header {line!r}") from e
                blocks[name] = (dim, [])
                current = name
            else:
                raise DatasetFormatError(f"{path}:{number}: unknown block header {line!r}")
            continue
        if current is None:
            raise DatasetFormatError(f"{path}:{number}: data before the first block header")
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError as e:
            raise DatasetFormatError(f"{path}:{number}: non-numeric value in {line!r}") from e
        if current == "labels":
            if len(row) != 1:
                raise DatasetFormatError(f"{path}:{number}: expected one label per line")
            labels.append(row[0])
        else:
            dim, rows = blocks[current]
            if len(row) != dim:
                raise DatasetFormatError(f"{path}:{number}: expected {dim} values, got {len(row)}")
            rows.append(row)

    missing = [m.value for m in MODALITIES if m.value not in blocks]
    if missing:
        raise DatasetFormatError(f"{path}: missing modality blocks {missing}")
    features = tuple(np.array(blocks[m.value][1], dtype=np.float64).reshape(-1, blocks[m.value][0]) for m in MODALITIES)
    label_array = np.array(labels, dtype=np.float64)
    if any(f.shape[0] != label_array.shape[0] for f in features):
        raise DatasetFormatError(f"{path}: modality blocks and labels disagree on the sample count")
    try:
        return Dataset(features, label_array, np.arange(label_array.shape[0]))  # type: ignore[arg-type]
    except (ShapeError, LabelError) as e:
        raise DatasetFormatError(f"{path}: {str(e)}") from e

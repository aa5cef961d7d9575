"""Positive/negative partner enumeration for the three contrastive regimes.

Two views of the same rules are provided: `pairs_*` enumerate partners for a
single anchor (readable, used for inspection and tests), while `pair_masks`
returns boolean matrices over the stacked embedding rows that the batch
losses consume. Rows are stacked modality-major: row ``m * K + i`` holds
sample ``i`` in modality ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple

import numpy as np

from hycon.core import MODALITIES, MiniBatch, Modality
from hycon.errors import PairError


class PairRegime(str, Enum):
    SCL = "scl"
    IAMCL = "iamcl"
    IEMCL = "iemcl"


class Polarity(str, Enum):
    POSITIVE = "+"
    NEGATIVE = "-"


@dataclass(frozen=True, order=True)
class AnchorRef:
    sample_index: int
    modality: Modality

    def stacked_row(self, k: int) -> int:
        return self.modality.position * k + self.sample_index


@dataclass(frozen=True)
class Partner:
    sample_index: int
    modality: Modality
    polarity: Polarity


@dataclass(frozen=True)
class PairIndex:
    anchor: AnchorRef
    partners: Tuple[Partner, ...]

    @property
    def positives(self) -> Tuple[Partner, ...]:
        return tuple(p for p in self.partners if p.polarity is Polarity.POSITIVE)

    @property
    def negatives(self) -> Tuple[Partner, ...]:
        return tuple(p for p in self.partners if p.polarity is Polarity.NEGATIVE)


def _check_anchor(anchor: AnchorRef, batch: MiniBatch, min_k: int):
    if batch.size < min_k:
        raise PairError(f"pair generation needs K >= {min_k}, got K={batch.size}")
    if not 0 <= anchor.sample_index < batch.size:
        raise PairError(f"anchor sample {anchor.sample_index} outside batch of size {batch.size}")


def _polarity(same_class: bool) -> Polarity:
    return Polarity.POSITIVE if same_class else Polarity.NEGATIVE


def pairs_scl(anchor: AnchorRef, batch: MiniBatch) -> PairIndex:
    """The same sample's other two modalities, both positive."""
    _check_anchor(anchor, batch, 1)
    partners = tuple(
        Partner(anchor.sample_index, m, Polarity.POSITIVE) for m in anchor.modality.others()
    )
    return PairIndex(anchor, partners)


def pairs_iamcl(anchor: AnchorRef, batch: MiniBatch) -> PairIndex:
    """The other K-1 samples in the anchor's modality; positive iff same class."""
    _check_anchor(anchor, batch, 2)
    positive = batch.positive
    partners = tuple(
        Partner(j, anchor.modality, _polarity(positive[j] == positive[anchor.sample_index]))
        for j in range(batch.size)
        if j != anchor.sample_index
    )
    return PairIndex(anchor, partners)


def pairs_iemcl(anchor: AnchorRef, batch: MiniBatch) -> PairIndex:
    """The other K-1 samples crossed with the two non-anchor modalities."""
    _check_anchor(anchor, batch, 2)
    positive = batch.positive
    partners = tuple(
        Partner(j, m, _polarity(positive[j] == positive[anchor.sample_index]))
        for j in range(batch.size)
        if j != anchor.sample_index
        for m in anchor.modality.others()
    )
    return PairIndex(anchor, partners)


def all_anchors(batch: MiniBatch) -> List[AnchorRef]:
    """Every sample in every modality, ordered by (sample, modality)."""
    return [AnchorRef(i, m) for i in range(batch.size) for m in MODALITIES]


@dataclass(frozen=True)
class PairMasks:
    """Boolean 3K x 3K partner masks over modality-major stacked rows."""

    positive: np.ndarray
    negative: np.ndarray

    @property
    def n_positive(self) -> np.ndarray:
        return self.positive.sum(axis=1)

    @property
    def n_negative(self) -> np.ndarray:
        return self.negative.sum(axis=1)


def stacked_layout(k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sample index and modality position of every stacked row."""
    sample = np.tile(np.arange(k), len(MODALITIES))
    modality = np.repeat(np.arange(len(MODALITIES)), k)
    return sample, modality


def pair_masks(batch: MiniBatch, regime: PairRegime) -> PairMasks:
    k = batch.size
    if regime is not PairRegime.SCL and k < 2:
        raise PairError(f"{regime.value} pairs need K >= 2, got K={k}")
    sample, modality = stacked_layout(k)
    cls = np.tile(batch.positive, len(MODALITIES))
    same_sample = sample[:, None] == sample[None, :]
    same_modality = modality[:, None] == modality[None, :]
    same_class = cls[:, None] == cls[None, :]

    if regime is PairRegime.SCL:
        positive = same_sample & ~same_modality
        return PairMasks(positive, np.zeros_like(positive))
    if regime is PairRegime.IAMCL:
        partner = ~same_sample & same_modality
    else:
        partner = ~same_sample & ~same_modality
    return PairMasks(partner & same_class, partner & ~same_class)


def partner_order_key(k: int) -> np.ndarray:
    """Rank of each stacked row in (sample, modality) order, used for tie-breaking."""
    sample, modality = stacked_layout(k)
    return sample * len(MODALITIES) + modality

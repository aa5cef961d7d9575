"""Training objectives: the hybrid contrastive terms, the prediction loss and baselines.

All batch-level losses take the L2-normalized embeddings of the three
modalities (K x d each, in language/audio/visual order) and work on the Gram
matrix of their modality-major stack, masked by `hycon.pairs.pair_masks`.
Anchors without positives (and, for the baselines, without negatives) are
left out of both the sum and the count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from hycon.autodiff import (
    DiffNode,
    constant,
    op_abs,
    op_clip_min,
    op_concat,
    op_dot_rows,
    op_log,
    op_logsumexp_rows,
    op_matmul,
    op_mean,
    op_mul_const,
    op_ratio,
    op_relu,
    op_reshape,
    op_scale,
    op_shift,
    op_square,
    op_stack,
    op_sub,
    op_sum,
    op_take,
    op_transpose,
)
from hycon.core import MiniBatch
from hycon.errors import ConfigError, PairError, ShapeError
from hycon.pairs import PairMasks, PairRegime, pair_masks, partner_order_key

logger = logging.getLogger(__name__)

LOG_RATIO_FLOOR = 1e-12


class RatioForm(str, Enum):
    LINEAR = "linear"
    LOG = "log"


class BaselineKind(str, Enum):
    TRIPLET = "triplet"
    HARD_TRIPLET = "hard_triplet"
    NPAIR = "npair"
    CLASSICAL = "classical"

    @property
    def label(self) -> str:
        return {
            BaselineKind.TRIPLET: "triplet",
            BaselineKind.HARD_TRIPLET: "hard-triplet",
            BaselineKind.NPAIR: "n-pair",
            BaselineKind.CLASSICAL: "classical",
        }[self]


class LossConfig(BaseModel):
    """Which objectives are active and in which variant."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    enable_scl: bool = True
    enable_iamcl: bool = True
    enable_iemcl: bool = True
    enable_refinement: bool = True
    enable_margin: bool = True
    ratio_form: RatioForm = RatioForm.LINEAR
    fuse_normalized: bool = True
    triplet_hinge: bool = False
    baseline_loss: Optional[BaselineKind] = None

    @property
    def contrastive(self) -> bool:
        if self.baseline_loss is not None:
            return True
        return self.enable_scl or self.enable_iamcl or self.enable_iemcl

    def regime(self) -> str:
        """Short name of the training regime, used in metrics tables."""
        if self.baseline_loss is not None:
            return self.baseline_loss.label
        if not self.contrastive:
            return "prediction-only"
        missing = [
            name
            for name, on in (
                ("iamcl", self.enable_iamcl),
                ("iemcl", self.enable_iemcl),
                ("scl", self.enable_scl),
                ("refinement", self.enable_refinement),
                ("margin", self.enable_margin),
            )
            if not on
        ]
        name = "hycon" if not missing else "hycon w/o " + "+".join(missing)
        if self.ratio_form is RatioForm.LOG:
            name += " (log)"
        return name


@dataclass(frozen=True)
class StackedGram:
    """Gram matrix of the modality-major stack of normalized embeddings."""

    gram: DiffNode
    k: int


EmbeddingInput = Union[Sequence[DiffNode], StackedGram]


def stack_gram(normalized: EmbeddingInput) -> StackedGram:
    if isinstance(normalized, StackedGram):
        return normalized
    if len(normalized) != 3:
        raise ShapeError(f"expected three modality embeddings, got {len(normalized)}")
    shapes = {node.shape for node in normalized}
    if len(shapes) != 1 or len(normalized[0].shape) != 2:
        raise ShapeError(f"modality embeddings must share one K x d shape, got {sorted(shapes)}")
    stacked = op_concat(list(normalized), axis=0)
    return StackedGram(op_matmul(stacked, op_transpose(stacked)), normalized[0].shape[0])


def _zero() -> DiffNode:
    return constant(0.0)


def _masked_mean(values: DiffNode, include: np.ndarray) -> DiffNode:
    count = int(include.sum())
    if count == 0:
        return _zero()
    return op_scale(op_sum(op_mul_const(values, include.astype(np.float64))), 1.0 / count)


def _row_sums(gram: DiffNode, mask: np.ndarray) -> DiffNode:
    return op_sum(op_mul_const(gram, mask.astype(np.float64)), axis=1)


def _check_batch(space: StackedGram, batch: MiniBatch):
    if space.k != batch.size:
        raise ShapeError(f"embeddings hold K={space.k} samples but the batch has K={batch.size}")


# ---------------------------------------------------------------------------
# Hybrid contrastive terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContrastiveTerm:
    """Ratio part and refinement part of one supervised contrastive loss."""

    ratio: DiffNode
    refine: DiffNode
    contributing: int

    @property
    def total(self) -> DiffNode:
        return self.ratio + self.refine


def _contrastive_term(
    space: StackedGram,
    masks: PairMasks,
    target: float,
    ratio_form: RatioForm,
    refinement: bool = True,
) -> ContrastiveTerm:
    n_pos = masks.n_positive
    include = n_pos > 0
    gram = space.gram

    pos_sum = _row_sums(gram, masks.positive)
    neg_sum = _row_sums(gram, masks.negative)
    ratio = op_ratio(pos_sum, pos_sum + neg_sum)
    if ratio_form is RatioForm.LOG:
        per_anchor = op_scale(op_log(op_clip_min(ratio, LOG_RATIO_FLOOR)), -1.0)
    else:
        per_anchor = op_scale(ratio, -1.0)
    ratio_loss = _masked_mean(per_anchor, include)

    if refinement and include.any():
        weights = np.where(include[:, None], masks.positive / np.maximum(n_pos, 1)[:, None], 0.0)
        deviation = op_square(op_shift(gram, -target))
        refine = _masked_mean(op_sum(op_mul_const(deviation, weights), axis=1), include)
    else:
        refine = _zero()
    return ContrastiveTerm(ratio_loss, refine, int(include.sum()))


def loss_scl(normalized: EmbeddingInput, batch: MiniBatch, alpha: float) -> DiffNode:
    """Semi-contrastive loss: mean over all 3K anchors of
    1/2 * sum over the anchor's two other modalities of (a.p - alpha)^2.
    """
    space = stack_gram(normalized)
    _check_batch(space, batch)
    masks = pair_masks(batch, PairRegime.SCL)
    deviation = op_square(op_shift(space.gram, -alpha))
    per_anchor = op_scale(_row_sums(deviation, masks.positive), 0.5)
    return op_mean(per_anchor)


def iamcl_terms(
    normalized: EmbeddingInput,
    batch: MiniBatch,
    ratio_form: RatioForm = RatioForm.LINEAR,
    refinement: bool = True,
) -> ContrastiveTerm:
    space = stack_gram(normalized)
    _check_batch(space, batch)
    return _contrastive_term(space, pair_masks(batch, PairRegime.IAMCL), 1.0, ratio_form, refinement)


def loss_iamcl(
    normalized: EmbeddingInput,
    batch: MiniBatch,
    ratio_form: RatioForm = RatioForm.LINEAR,
    refinement: bool = True,
) -> DiffNode:
    """Intra-modal supervised contrastive loss with its refinement term folded in.

    The ratio part is the negative ratio of positive similarity mass to total
    partner similarity mass (``ratio_form="log"`` takes the negative log
    instead); the refinement part pulls intra-modal positives towards a dot
    product of 1.
    """
    return iamcl_terms(normalized, batch, ratio_form, refinement).total


def iemcl_terms(
    normalized: EmbeddingInput,
    batch: MiniBatch,
    alpha: float,
    ratio_form: RatioForm = RatioForm.LINEAR,
    refinement: bool = True,
) -> ContrastiveTerm:
    space = stack_gram(normalized)
    _check_batch(space, batch)
    return _contrastive_term(space, pair_masks(batch, PairRegime.IEMCL), alpha, ratio_form, refinement)


def loss_iemcl(
    normalized: EmbeddingInput,
    batch: MiniBatch,
    alpha: float,
    ratio_form: RatioForm = RatioForm.LINEAR,
    refinement: bool = True,
) -> DiffNode:
    """Inter-modal supervised contrastive loss; positives are cross-modal
    partners from other samples of the same class, refined towards alpha.
    The refinement is normalized by each anchor's actual positive count.
    """
    return iemcl_terms(normalized, batch, alpha, ratio_form, refinement).total


def loss_prediction(y_pred: DiffNode, y_true: np.ndarray) -> DiffNode:
    """Mean absolute error between predictions and labels."""
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    if y_pred.value.ndim != 1 or y_pred.shape[0] != y_true.shape[0]:
        raise ShapeError(f"prediction shape {y_pred.shape} does not match {y_true.shape[0]} labels")
    return op_mean(op_abs(y_pred - constant(y_true)))


@dataclass(frozen=True)
class HybridTerms:
    scl: DiffNode
    iamcl: DiffNode
    iamcl_refine: DiffNode
    iemcl: DiffNode
    iemcl_refine: DiffNode


def loss_hybrid(terms: HybridTerms, lambdas: Tuple[float, float, float]) -> DiffNode:
    """Weighted sum lambda1*IAMCL + lambda2*IEMCL + lambda3*SCL, refinements folded in."""
    l1, l2, l3 = lambdas
    if min(lambdas) < 0:
        raise ConfigError([f"lambdas must be nonnegative, got {lambdas}"])
    return (
        op_scale(terms.iamcl + terms.iamcl_refine, l1)
        + op_scale(terms.iemcl + terms.iemcl_refine, l2)
        + op_scale(terms.scl, l3)
    )


def hybrid_terms(
    normalized: EmbeddingInput,
    batch: MiniBatch,
    config: LossConfig,
    alpha: float,
    rng: Optional[np.random.Generator] = None,
) -> HybridTerms:
    """Evaluate every term the loss configuration enables; disabled terms are zero.

    With a baseline configured, the baseline replaces IAMCL and IEMCL on the
    same intra- and inter-modal pair sets while SCL is kept.
    """
    space = stack_gram(normalized)
    _check_batch(space, batch)
    margin = alpha if config.enable_margin else 1.0

    if config.baseline_loss is not None:
        rng = rng if rng is not None else np.random.default_rng(0)
        intra = baseline_terms(config.baseline_loss, space, batch, PairRegime.IAMCL, rng, config.triplet_hinge)
        inter = baseline_terms(config.baseline_loss, space, batch, PairRegime.IEMCL, rng, config.triplet_hinge)
        return HybridTerms(loss_scl(space, batch, margin), intra, _zero(), inter, _zero())

    scl = loss_scl(space, batch, margin) if config.enable_scl else _zero()
    if config.enable_iamcl:
        intra = iamcl_terms(space, batch, config.ratio_form, config.enable_refinement)
    else:
        intra = ContrastiveTerm(_zero(), _zero(), 0)
    if config.enable_iemcl:
        inter = iemcl_terms(space, batch, margin, config.ratio_form, config.enable_refinement)
    else:
        inter = ContrastiveTerm(_zero(), _zero(), 0)
    return HybridTerms(scl, intra.ratio, intra.refine, inter.ratio, inter.refine)


# ---------------------------------------------------------------------------
# Baseline losses, per anchor
# ---------------------------------------------------------------------------


def loss_classical_contrastive(
    anchor: DiffNode, positive: DiffNode, negatives: Sequence[DiffNode]
) -> DiffNode:
    """-a.p / (a.p + sum_j a.n_j) for one positive and at least one negative."""
    if not negatives:
        raise PairError("classical contrastive loss needs at least one negative")
    ap = op_dot_rows(anchor, positive)
    an = op_sum(op_stack([op_dot_rows(anchor, n) for n in negatives]))
    return -_scalar_ratio(ap, ap + an)


def _scalar_ratio(num: DiffNode, den: DiffNode) -> DiffNode:
    return op_sum(op_ratio(op_reshape(num, (1,)), op_reshape(den, (1,))))


def _squared_distance(a: DiffNode, b: DiffNode) -> DiffNode:
    diff = op_sub(a, b)
    return op_dot_rows(diff, diff)


def loss_triplet(anchor: DiffNode, positive: DiffNode, negative: DiffNode, hinge: bool = False) -> DiffNode:
    """||a - p||^2 - ||a - n||^2 + 1, optionally clamped at zero."""
    if not anchor.shape == positive.shape == negative.shape:
        raise ShapeError("triplet vectors must share one length")
    value = op_shift(_squared_distance(anchor, positive) - _squared_distance(anchor, negative), 1.0)
    return op_relu(value) if hinge else value


def select_hard_pair(
    anchor: np.ndarray, positives: Sequence[np.ndarray], negatives: Sequence[np.ndarray]
) -> Tuple[int, int]:
    """Index of the least similar positive and the most similar negative.

    Ties resolve to the earliest candidate, so callers list candidates in
    (sample, modality) order.
    """
    pos_sims = [float(np.dot(anchor, p)) for p in positives]
    neg_sims = [float(np.dot(anchor, n)) for n in negatives]
    return int(np.argmin(pos_sims)), int(np.argmax(neg_sims))


def loss_hard_triplet(
    anchor: DiffNode,
    positives: Sequence[DiffNode],
    negatives: Sequence[DiffNode],
    hinge: bool = False,
) -> Optional[DiffNode]:
    """Triplet loss on the hardest positive and negative; None when either set is empty."""
    if not positives or not negatives:
        return None
    i, j = select_hard_pair(anchor.value, [p.value for p in positives], [n.value for n in negatives])
    return loss_triplet(anchor, positives[i], negatives[j], hinge)


def loss_npair(anchor: DiffNode, positive: DiffNode, negatives: Sequence[DiffNode]) -> DiffNode:
    """log(1 + sum_j exp(a.n_j - a.p)), evaluated as logsumexp([a.p, a.n...]) - a.p."""
    if not negatives:
        raise PairError("N-pair loss needs at least one negative")
    ap = op_dot_rows(anchor, positive)
    sims = op_stack([ap] + [op_dot_rows(anchor, n) for n in negatives])
    row = op_reshape(sims, (1, -1))
    lse = op_sum(op_logsumexp_rows(row, np.ones(row.shape, dtype=bool)))
    return lse - ap


# ---------------------------------------------------------------------------
# Baseline losses, batch level
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineSelection:
    """Stacked-row indices of the anchors and of the partners picked for them.

    `negatives` is -1 for losses that use the whole negative set.
    """

    rows: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray


def select_baseline_pairs(
    kind: BaselineKind,
    normalized: EmbeddingInput,
    batch: MiniBatch,
    regime: PairRegime,
    rng: np.random.Generator,
) -> BaselineSelection:
    """Pick partners for every anchor that has both positives and negatives.

    Candidates are scanned in (sample, modality) order. Random picks draw
    from `rng`; the hard triplet variant takes the least similar positive and
    the most similar negative, ties going to the earliest candidate.
    """
    if regime is PairRegime.SCL:
        raise PairError("baselines replace the supervised regimes only")
    space = stack_gram(normalized)
    _check_batch(space, batch)
    masks = pair_masks(batch, regime)
    rows = np.flatnonzero((masks.n_positive > 0) & (masks.n_negative > 0))
    gram = space.gram.value
    order = partner_order_key(space.k)

    positives, negatives = [], []
    for r in rows:
        pos = np.flatnonzero(masks.positive[r])
        neg = np.flatnonzero(masks.negative[r])
        pos = pos[np.argsort(order[pos], kind="stable")]
        neg = neg[np.argsort(order[neg], kind="stable")]
        if kind is BaselineKind.HARD_TRIPLET:
            positives.append(pos[np.argmin(gram[r, pos])])
            negatives.append(neg[np.argmax(gram[r, neg])])
        else:
            positives.append(pos[rng.integers(pos.size)])
            negatives.append(neg[rng.integers(neg.size)] if kind is BaselineKind.TRIPLET else -1)
    return BaselineSelection(rows, np.asarray(positives, dtype=int), np.asarray(negatives, dtype=int))


def baseline_terms(
    kind: BaselineKind,
    normalized: EmbeddingInput,
    batch: MiniBatch,
    regime: PairRegime,
    rng: Optional[np.random.Generator] = None,
    hinge: bool = False,
    selection: Optional[BaselineSelection] = None,
) -> DiffNode:
    """Mean baseline loss over anchors that have both positives and negatives.

    Args:
        kind (BaselineKind): Which baseline
        normalized (EmbeddingInput): Normalized embeddings or their stacked Gram matrix
        batch (MiniBatch): The batch the embeddings belong to
        regime (PairRegime): Intra-modal (IAMCL) or inter-modal (IEMCL) partner sets
        rng (Optional[np.random.Generator]): Source of the random partner picks
        hinge (bool): Clamp triplet values at zero
        selection (Optional[BaselineSelection]): Reuse earlier partner picks
            instead of selecting again

    Returns:
        DiffNode: Scalar loss, 0 when no anchor qualifies
    """
    space = stack_gram(normalized)
    _check_batch(space, batch)
    masks = pair_masks(batch, regime)
    if selection is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        selection = select_baseline_pairs(kind, space, batch, regime, rng)
    rows, pos, neg = selection.rows, selection.positives, selection.negatives
    if rows.size == 0:
        return _zero()

    gram = space.gram
    ap = op_take(gram, (rows, pos))

    if kind is BaselineKind.CLASSICAL:
        neg_sum = op_take(_row_sums(gram, masks.negative), rows)
        values = op_scale(op_ratio(ap, ap + neg_sum), -1.0)
    elif kind is BaselineKind.NPAIR:
        selected = masks.negative[rows].copy()
        selected[np.arange(rows.size), pos] = True
        values = op_logsumexp_rows(op_take(gram, rows), selected) - ap
    else:
        aa = op_take(gram, (rows, rows))
        d_ap = aa + op_take(gram, (pos, pos)) - op_scale(ap, 2.0)
        d_an = aa + op_take(gram, (neg, neg)) - op_scale(op_take(gram, (rows, neg)), 2.0)
        values = op_shift(d_ap - d_an, 1.0)
        if hinge:
            values = op_relu(values)
    return op_mean(values)


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossReport:
    l_scl: float
    l_iamcl: float
    l_iamcl_refine: float
    l_iemcl: float
    l_iemcl_refine: float
    l_hybrid: float
    l_pred: float
    l_overall: float

    FIELDS = (
        "l_scl", "l_iamcl", "l_iamcl_refine", "l_iemcl",
        "l_iemcl_refine", "l_hybrid", "l_pred", "l_overall",
    )

    @classmethod
    def from_nodes(cls, terms: HybridTerms, hybrid: DiffNode, pred: DiffNode, overall: DiffNode) -> "LossReport":
        return cls(
            l_scl=terms.scl.item(),
            l_iamcl=terms.iamcl.item(),
            l_iamcl_refine=terms.iamcl_refine.item(),
            l_iemcl=terms.iemcl.item(),
            l_iemcl_refine=terms.iemcl_refine.item(),
            l_hybrid=hybrid.item(),
            l_pred=pred.item(),
            l_overall=overall.item(),
        )

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}

    def first_non_finite(self) -> Optional[str]:
        for name in self.FIELDS:
            if not np.isfinite(getattr(self, name)):
                return name
        return None

    @classmethod
    def mean(cls, reports: Sequence["LossReport"]) -> "LossReport":
        return cls(**{name: float(np.mean([getattr(r, name) for r in reports])) for name in cls.FIELDS})

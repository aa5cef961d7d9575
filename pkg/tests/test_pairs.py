import numpy as np
import pytest

from hycon.core import MODALITIES, MiniBatch, Modality
from hycon.errors import PairError
from hycon.pairs import (
    AnchorRef,
    PairRegime,
    Polarity,
    all_anchors,
    pair_masks,
    pairs_iamcl,
    pairs_iemcl,
    pairs_scl,
)

L, A, V = Modality.LANGUAGE, Modality.AUDIO, Modality.VISUAL


def batch_with(labels):
    k = len(labels)
    return MiniBatch(tuple(np.zeros((k, 2)) for _ in range(3)), np.array(labels, dtype=float))


def random_batch(rng):
    k = int(rng.integers(2, 9))
    return batch_with(rng.uniform(-3, 3, size=k))


def tags(pair_index):
    return {(p.sample_index, p.modality, p.polarity) for p in pair_index.partners}


def test_scl_partners():
    batch = batch_with([1.0, -1.0, 2.0, 0.5, -2.0])
    assert tags(pairs_scl(AnchorRef(0, L), batch)) == {(0, A, Polarity.POSITIVE), (0, V, Polarity.POSITIVE)}
    assert tags(pairs_scl(AnchorRef(3, V), batch)) == {(3, L, Polarity.POSITIVE), (3, A, Polarity.POSITIVE)}
    assert all(len(pairs_scl(a, batch).partners) == 2 for a in all_anchors(batch))


def test_iamcl_partners():
    batch = batch_with([1.0, 2.0, -1.0, -2.0])
    pairs = pairs_iamcl(AnchorRef(0, L), batch)
    assert {(p.sample_index, p.modality) for p in pairs.positives} == {(1, L)}
    assert {(p.sample_index, p.modality) for p in pairs.negatives} == {(2, L), (3, L)}


def test_iamcl_single_class_has_no_negatives():
    batch = batch_with([1.0, 2.0, 0.5])
    pairs = pairs_iamcl(AnchorRef(1, A), batch)
    assert len(pairs.positives) == 2
    assert pairs.negatives == ()


def test_iemcl_partners():
    batch = batch_with([1.0, 2.0, -1.0, -2.0])
    pairs = pairs_iemcl(AnchorRef(0, L), batch)
    assert {(p.sample_index, p.modality) for p in pairs.positives} == {(1, A), (1, V)}
    assert len(pairs.negatives) == 4


def test_pair_generation_needs_two_samples():
    with pytest.raises(PairError):
        pairs_iamcl(AnchorRef(0, L), batch_with([1.0]))
    with pytest.raises(PairError):
        pairs_iemcl(AnchorRef(5, L), batch_with([1.0, -1.0]))


def test_all_anchors():
    batch = batch_with([1.0, -1.0])
    anchors = all_anchors(batch)
    assert len(anchors) == 6
    assert anchors == sorted(anchors)
    assert anchors == all_anchors(batch)
    assert len(all_anchors(batch_with(np.linspace(-3, 3, 32)))) == 96


@pytest.mark.parametrize("seed", range(100))
def test_pair_count_laws(seed):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng)
    k = batch.size
    for anchor in all_anchors(batch):
        intra = pairs_iamcl(anchor, batch)
        inter = pairs_iemcl(anchor, batch)
        assert len(intra.positives) + len(intra.negatives) == k - 1
        assert len(inter.partners) == 2 * len(intra.partners)
        assert len(inter.positives) == 2 * len(intra.positives)
        assert len(inter.negatives) == 2 * len(intra.negatives)
        expected = {
            (p.sample_index, m, p.polarity) for p in intra.partners for m in anchor.modality.others()
        }
        assert tags(inter) == expected


@pytest.mark.parametrize("seed", range(20))
def test_partners_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng)
    positive = batch.labels > 0
    for anchor in all_anchors(batch):
        i = anchor.sample_index
        brute_intra = {
            (j, anchor.modality, Polarity.POSITIVE if positive[j] == positive[i] else Polarity.NEGATIVE)
            for j in range(batch.size)
            if j != i
        }
        brute_inter = {
            (j, m, Polarity.POSITIVE if positive[j] == positive[i] else Polarity.NEGATIVE)
            for j in range(batch.size)
            for m in MODALITIES
            if j != i and m is not anchor.modality
        }
        assert tags(pairs_iamcl(anchor, batch)) == brute_intra
        assert tags(pairs_iemcl(anchor, batch)) == brute_inter


@pytest.mark.parametrize("seed", range(10))
def test_no_regime_pairs_an_anchor_with_itself(seed):
    batch = random_batch(np.random.default_rng(seed))
    for anchor in all_anchors(batch):
        for enumerate_pairs in (pairs_scl, pairs_iamcl, pairs_iemcl):
            partners = {(p.sample_index, p.modality) for p in enumerate_pairs(anchor, batch).partners}
            assert (anchor.sample_index, anchor.modality) not in partners


@pytest.mark.parametrize("seed", range(10))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng)
    order = rng.permutation(batch.size)
    permuted = batch.permuted(order)
    positive = permuted.positive
    for new_index, old_index in enumerate(order):
        for m in MODALITIES:
            before = pairs_iemcl(AnchorRef(int(old_index), m), batch)
            after = pairs_iemcl(AnchorRef(new_index, m), permuted)
            remapped = {(int(order[p.sample_index]), p.modality, p.polarity) for p in after.partners}
            assert remapped == tags(before)
            multiset = sorted((bool(positive[p.sample_index]), p.modality.value, p.polarity.value) for p in after.partners)
            assert multiset == sorted(
                (bool(batch.positive[p.sample_index]), p.modality.value, p.polarity.value) for p in before.partners
            )


@pytest.mark.parametrize("regime", [PairRegime.SCL, PairRegime.IAMCL, PairRegime.IEMCL])
def test_masks_agree_with_enumeration(regime):
    batch = random_batch(np.random.default_rng(7))
    k = batch.size
    masks = pair_masks(batch, regime)
    enumerate_pairs = {PairRegime.SCL: pairs_scl, PairRegime.IAMCL: pairs_iamcl, PairRegime.IEMCL: pairs_iemcl}[regime]
    for anchor in all_anchors(batch):
        pairs = enumerate_pairs(anchor, batch)
        row = anchor.stacked_row(k)
        expected_pos = {AnchorRef(p.sample_index, p.modality).stacked_row(k) for p in pairs.positives}
        expected_neg = {AnchorRef(p.sample_index, p.modality).stacked_row(k) for p in pairs.negatives}
        assert set(np.flatnonzero(masks.positive[row])) == expected_pos
        assert set(np.flatnonzero(masks.negative[row])) == expected_neg
    assert not np.any(np.diag(masks.positive) | np.diag(masks.negative))

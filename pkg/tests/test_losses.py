import math

import numpy as np
import pytest

from hycon.autodiff import constant
from hycon.core import MiniBatch
from hycon.errors import ConfigError, PairError, ShapeError
from hycon.losses import (
    BaselineKind,
    HybridTerms,
    LossConfig,
    LossReport,
    RatioForm,
    baseline_terms,
    hybrid_terms,
    iamcl_terms,
    loss_classical_contrastive,
    loss_hard_triplet,
    loss_hybrid,
    loss_iamcl,
    loss_iemcl,
    loss_npair,
    loss_prediction,
    loss_scl,
    loss_triplet,
    select_baseline_pairs,
    select_hard_pair,
)
from hycon.model import normalize_for_contrast
from hycon.pairs import PairRegime
from tests import oracles

ORACLE_SEEDS = range(50)


def unit_rows(matrix):
    matrix = np.asarray(matrix, dtype=float)
    return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)


def batch_for(labels):
    k = len(labels)
    return MiniBatch(tuple(np.zeros((k, 1)) for _ in range(3)), np.array(labels, dtype=float))


def random_case(seed, nonnegative=True, d=5):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 9))
    labels = rng.uniform(-3, 3, size=k)
    emb = []
    for _ in range(3):
        raw = rng.standard_normal((k, d))
        emb.append(unit_rows(np.abs(raw) + 0.05 if nonnegative else raw))
    return emb, labels


def nodes(emb):
    return [constant(e) for e in emb]


def close(value, expected):
    assert value == pytest.approx(expected, rel=1e-9, abs=1e-10)


@pytest.mark.parametrize("seed", ORACLE_SEEDS)
def test_scl_matches_loop_oracle(seed):
    emb, labels = random_case(seed, nonnegative=False)
    close(loss_scl(nodes(emb), batch_for(labels), 0.8).item(), oracles.scl(emb, labels, 0.8))


@pytest.mark.parametrize("seed", ORACLE_SEEDS)
@pytest.mark.parametrize("ratio_form", [RatioForm.LINEAR, RatioForm.LOG])
def test_supervised_terms_match_loop_oracle(seed, ratio_form):
    emb, labels = random_case(seed)
    batch = batch_for(labels)
    close(loss_iamcl(nodes(emb), batch, ratio_form).item(), oracles.iamcl(emb, labels, ratio_form.value))
    close(loss_iemcl(nodes(emb), batch, 0.8, ratio_form).item(), oracles.iemcl(emb, labels, 0.8, ratio_form.value))


@pytest.mark.parametrize("seed", range(10))
def test_supervised_terms_without_refinement(seed):
    emb, labels = random_case(seed)
    batch = batch_for(labels)
    close(
        loss_iamcl(nodes(emb), batch, refinement=False).item(),
        oracles.iamcl(emb, labels, refinement=False),
    )
    close(
        loss_iemcl(nodes(emb), batch, 0.5, refinement=False).item(),
        oracles.iemcl(emb, labels, 0.5, refinement=False),
    )


@pytest.mark.parametrize("seed", ORACLE_SEEDS)
@pytest.mark.parametrize("kind", list(BaselineKind))
def test_baselines_match_loop_oracle(seed, kind):
    emb, labels = random_case(seed)
    batch = batch_for(labels)
    for regime, cross_modal in ((PairRegime.IAMCL, False), (PairRegime.IEMCL, True)):
        value = baseline_terms(kind, nodes(emb), batch, regime, np.random.default_rng(seed)).item()
        close(value, oracles.baseline(kind.value, emb, labels, cross_modal, seed))


@pytest.mark.parametrize("seed", range(10))
def test_triplet_hinge_matches_loop_oracle(seed):
    emb, labels = random_case(seed, nonnegative=False)
    batch = batch_for(labels)
    for kind in (BaselineKind.TRIPLET, BaselineKind.HARD_TRIPLET):
        value = baseline_terms(kind, nodes(emb), batch, PairRegime.IEMCL, np.random.default_rng(seed), hinge=True)
        close(value.item(), oracles.baseline(kind.value, emb, labels, True, seed, hinge=True))
        assert value.item() >= 0.0


def test_baselines_reject_the_scl_regime():
    emb, labels = random_case(0)
    with pytest.raises(PairError):
        select_baseline_pairs(BaselineKind.TRIPLET, nodes(emb), batch_for(labels), PairRegime.SCL, np.random.default_rng(0))


def test_baseline_selection_can_be_reused():
    emb, labels = random_case(3)
    batch = batch_for(labels)
    selection = select_baseline_pairs(BaselineKind.TRIPLET, nodes(emb), batch, PairRegime.IAMCL, np.random.default_rng(9))
    first = baseline_terms(BaselineKind.TRIPLET, nodes(emb), batch, PairRegime.IAMCL, selection=selection).item()
    second = baseline_terms(BaselineKind.TRIPLET, nodes(emb), batch, PairRegime.IAMCL, np.random.default_rng(9)).item()
    assert first == second


def test_baseline_is_zero_without_negatives():
    emb, _ = random_case(1)
    k = emb[0].shape[0]
    batch = batch_for(np.ones(k))
    for kind in BaselineKind:
        assert baseline_terms(kind, nodes(emb), batch, PairRegime.IAMCL).item() == 0.0


@pytest.mark.parametrize("alpha", [0.5, 0.8, 1.0])
def test_optimum_embeddings_reach_the_lower_bound(alpha):
    labels = [1.0, 2.0, -1.0, -2.0, 0.5, 0.0]
    emb = oracles.optimum_embeddings(labels, alpha)
    batch = batch_for(labels)
    assert abs(loss_scl(nodes(emb), batch, alpha).item()) < 1e-12

    intra = iamcl_terms(nodes(emb), batch)
    assert abs(intra.ratio.item() + 1.0) < 1e-12
    assert abs(intra.refine.item()) < 1e-12
    assert abs(loss_iemcl(nodes(emb), batch, alpha).item() + 1.0) < 1e-12

    terms = hybrid_terms(nodes(emb), batch, LossConfig(), alpha)
    assert abs(loss_hybrid(terms, (1.0, 1.0, 1.0)).item() + 2.0) < 1e-12


def test_scl_hand_example():
    e0 = np.array([[1.0, 0.0]])
    emb = [e0, e0, np.array([[0.6, 0.8]])]
    assert loss_scl(nodes(emb), batch_for([1.0]), 0.8).item() == pytest.approx(0.04)


def test_iamcl_worst_case():
    vectors = unit_rows([[1, 0, 0, 0], [0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1]])
    emb = [vectors, vectors, vectors]
    batch = batch_for([1.0, 2.0, -1.0, -2.0])
    assert loss_iamcl(nodes(emb), batch).item() == pytest.approx(1.0)


def test_iemcl_without_positives_is_zero():
    emb, _ = random_case(2)
    emb = [e[:2] for e in emb]
    batch = batch_for([1.0, -1.0])
    term = iamcl_terms(nodes(emb), batch)
    assert term.contributing == 0
    assert loss_iemcl(nodes(emb), batch, 0.8).item() == 0.0
    assert loss_iamcl(nodes(emb), batch).item() == 0.0


def test_zero_denominator_ratio_is_zero():
    emb = [np.array([[1.0, 0.0], [0.0, 1.0]])] * 3
    batch = batch_for([1.0, 2.0])
    # positives are orthogonal and there are no negatives
    term = iamcl_terms(nodes(emb), batch)
    assert term.ratio.item() == 0.0
    assert term.refine.item() == pytest.approx(1.0)


def test_log_ratio_is_floored():
    emb = [np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])] * 3
    batch = batch_for([1.0, 2.0, -1.0])
    term = iamcl_terms(nodes(emb), batch, RatioForm.LOG)
    assert np.isfinite(term.ratio.item())
    assert term.ratio.item() > 0


def test_prediction_loss():
    assert loss_prediction(constant(np.array([1.0, 2.0])), np.array([0.0, 4.0])).item() == pytest.approx(1.5)
    assert loss_prediction(constant(np.array([0.3])), np.array([0.3])).item() == 0.0
    with pytest.raises(ShapeError):
        loss_prediction(constant(np.array([1.0, 2.0])), np.array([1.0]))


@pytest.mark.parametrize("seed", range(10))
def test_prediction_loss_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    y_pred, y_true = rng.uniform(-3, 3, 12), rng.uniform(-3, 3, 12)
    close(loss_prediction(constant(y_pred), y_true).item(), oracles.mae(y_pred, y_true))


def test_hybrid_weights():
    emb, labels = random_case(4)
    terms = hybrid_terms(nodes(emb), batch_for(labels), LossConfig(), 0.8)
    assert loss_hybrid(terms, (0.0, 0.0, 0.0)).item() == 0.0
    expected = 2.0 * (terms.iamcl.item() + terms.iamcl_refine.item())
    assert loss_hybrid(terms, (2.0, 0.0, 0.0)).item() == pytest.approx(expected)
    total = sum(t.item() for t in (terms.iamcl, terms.iamcl_refine, terms.iemcl, terms.iemcl_refine, terms.scl))
    assert loss_hybrid(terms, (1.0, 1.0, 1.0)).item() == pytest.approx(total)
    with pytest.raises(ConfigError):
        loss_hybrid(terms, (1.0, -1.0, 1.0))


def test_hybrid_terms_respect_toggles():
    emb, labels = random_case(5)
    batch = batch_for(labels)
    off = LossConfig(enable_scl=False, enable_iamcl=False, enable_iemcl=False)
    terms = hybrid_terms(nodes(emb), batch, off, 0.8)
    assert all(t.item() == 0.0 for t in (terms.scl, terms.iamcl, terms.iamcl_refine, terms.iemcl, terms.iemcl_refine))

    no_refine = hybrid_terms(nodes(emb), batch, LossConfig(enable_refinement=False), 0.8)
    assert no_refine.iamcl_refine.item() == 0.0 and no_refine.iemcl_refine.item() == 0.0

    no_margin = hybrid_terms(nodes(emb), batch, LossConfig(enable_margin=False), 0.8)
    assert no_margin.scl.item() == pytest.approx(oracles.scl(emb, labels, 1.0))
    close(no_margin.iemcl.item() + no_margin.iemcl_refine.item(), oracles.iemcl(emb, labels, 1.0))


def test_hybrid_terms_with_a_baseline_keep_scl():
    emb, labels = random_case(6)
    batch = batch_for(labels)
    terms = hybrid_terms(nodes(emb), batch, LossConfig(baseline_loss=BaselineKind.NPAIR), 0.8)
    close(terms.scl.item(), oracles.scl(emb, labels, 0.8))
    close(terms.iamcl.item(), oracles.baseline("npair", emb, labels, False, 0))
    assert terms.iamcl_refine.item() == 0.0 and terms.iemcl_refine.item() == 0.0


def test_classical_example():
    e0, e1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    diag = unit_rows([[1.0, 1.0]])[0]
    value = loss_classical_contrastive(constant(e0), constant(e0), [constant(e1), constant(diag)]).item()
    assert value == pytest.approx(-1.0 / (1.0 + math.sqrt(0.5)))
    with pytest.raises(PairError):
        loss_classical_contrastive(constant(e0), constant(e0), [])


def test_triplet_example():
    e0, e1 = constant(np.array([1.0, 0.0])), constant(np.array([0.0, 1.0]))
    assert loss_triplet(e0, e0, e1).item() == pytest.approx(-1.0)
    assert loss_triplet(e0, e0, e1, hinge=True).item() == 0.0
    assert loss_triplet(e0, e1, e0).item() == pytest.approx(3.0)
    with pytest.raises(ShapeError):
        loss_triplet(e0, e0, constant(np.ones(3)))


def test_npair_example():
    e0, e1 = constant(np.array([1.0, 0.0])), constant(np.array([0.0, 1.0]))
    assert loss_npair(e0, e0, [e1]).item() == pytest.approx(math.log1p(math.exp(-1.0)))
    assert loss_npair(e0, e0, [e1, e1]).item() == pytest.approx(math.log1p(2 * math.exp(-1.0)))
    with pytest.raises(PairError):
        loss_npair(e0, e0, [])


def test_hard_pair_selection():
    anchor = np.array([1.0, 0.0])
    positives = [np.array([0.8, 0.6]), np.array([0.0, 1.0]), np.array([0.0, 1.0])]
    negatives = [np.array([0.6, 0.8]), np.array([1.0, 0.0]), np.array([1.0, 0.0])]
    assert select_hard_pair(anchor, positives, negatives) == (1, 1)

    value = loss_hard_triplet(
        constant(anchor), [constant(p) for p in positives], [constant(n) for n in negatives]
    )
    assert value.item() == pytest.approx(2.0 - 0.0 + 1.0)
    assert loss_hard_triplet(constant(anchor), [], [constant(negatives[0])]) is None


@pytest.mark.parametrize("seed", range(10))
def test_losses_are_invariant_to_sample_order(seed):
    emb, labels = random_case(seed)
    order = np.random.default_rng(100 + seed).permutation(len(labels))
    permuted = [e[order] for e in emb]
    batch, shuffled = batch_for(labels), batch_for(labels[order])
    for original, moved in (
        (loss_scl(nodes(emb), batch, 0.8), loss_scl(nodes(permuted), shuffled, 0.8)),
        (loss_iamcl(nodes(emb), batch), loss_iamcl(nodes(permuted), shuffled)),
        (loss_iemcl(nodes(emb), batch, 0.8), loss_iemcl(nodes(permuted), shuffled, 0.8)),
    ):
        assert moved.item() == pytest.approx(original.item(), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_losses_ignore_the_scale_of_raw_rows(seed):
    rng = np.random.default_rng(200 + seed)
    k = 6
    labels = rng.uniform(-3, 3, size=k)
    labels[:2] = [1.5, -1.5]
    raw = [rng.standard_normal((k, 5)) for _ in range(3)]
    scaled = [r * rng.uniform(0.1, 10.0, size=(k, 1)) for r in raw]
    batch = batch_for(labels)

    def every_loss(rows):
        emb = [normalize_for_contrast(constant(r)) for r in rows]
        values = [
            loss_scl(emb, batch, 0.8),
            loss_iamcl(emb, batch),
            loss_iamcl(emb, batch, RatioForm.LOG),
            loss_iemcl(emb, batch, 0.8),
            loss_iemcl(emb, batch, 0.8, RatioForm.LOG),
        ]
        for kind in (BaselineKind.CLASSICAL, BaselineKind.TRIPLET, BaselineKind.NPAIR):
            values.append(baseline_terms(kind, emb, batch, PairRegime.IEMCL, np.random.default_rng(seed)))
        return [v.item() for v in values]

    np.testing.assert_allclose(every_loss(scaled), every_loss(raw), rtol=0, atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_losses_only_see_label_classes(seed):
    emb, labels = random_case(seed)
    scaled = labels * 0.5
    for build in (
        lambda b: loss_iamcl(nodes(emb), b),
        lambda b: loss_iemcl(nodes(emb), b, 0.8),
        lambda b: loss_scl(nodes(emb), b, 0.8),
    ):
        assert build(batch_for(labels)).item() == build(batch_for(scaled)).item()


@pytest.mark.parametrize("seed", range(20))
def test_bounds_for_nonnegative_embeddings(seed):
    emb, labels = random_case(seed)
    batch = batch_for(labels)
    intra = iamcl_terms(nodes(emb), batch)
    assert -1.0 <= intra.ratio.item() <= 0.0
    assert 0.0 <= intra.refine.item() <= 1.0
    assert 0.0 <= loss_scl(nodes(emb), batch, 0.8).item() <= 0.64


def test_losses_reject_mismatched_batches():
    emb, labels = random_case(0)
    with pytest.raises(ShapeError):
        loss_scl(nodes(emb), batch_for(list(labels) + [1.0]), 0.8)
    with pytest.raises(ShapeError):
        loss_iamcl(nodes(emb[:2]), batch_for(labels))


def test_loss_config_regime_names():
    assert LossConfig().regime() == "hycon"
    assert LossConfig(enable_margin=False).regime() == "hycon w/o margin"
    assert LossConfig(enable_scl=False, enable_iamcl=False, enable_iemcl=False).regime() == "prediction-only"
    assert LossConfig(baseline_loss=BaselineKind.HARD_TRIPLET).regime() == "hard-triplet"
    assert LossConfig(ratio_form=RatioForm.LOG).regime() == "hycon (log)"


def test_loss_report():
    emb, labels = random_case(7)
    terms = hybrid_terms(nodes(emb), batch_for(labels), LossConfig(), 0.8)
    hybrid = loss_hybrid(terms, (1.0, 1.0, 1.0))
    pred = loss_prediction(constant(np.zeros(len(labels))), labels)
    report = LossReport.from_nodes(terms, hybrid, pred, hybrid + pred)
    assert report.l_overall == pytest.approx(report.l_hybrid + report.l_pred)
    assert report.l_hybrid == pytest.approx(
        report.l_scl + report.l_iamcl + report.l_iamcl_refine + report.l_iemcl + report.l_iemcl_refine
    )
    assert list(report.as_dict()) == list(LossReport.FIELDS)
    assert report.first_non_finite() is None

    broken = LossReport(**{**report.as_dict(), "l_iemcl": float("nan")})
    assert broken.first_non_finite() == "l_iemcl"
    averaged = LossReport.mean([report, report])
    assert averaged.l_overall == pytest.approx(report.l_overall)


def test_unused_hybrid_fields_are_scalar_nodes():
    zero = constant(0.0)
    terms = HybridTerms(zero, zero, zero, zero, zero)
    assert loss_hybrid(terms, (1.0, 1.0, 1.0)).item() == 0.0

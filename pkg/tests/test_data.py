import numpy as np
import pytest
from scipy import stats

from hycon.core import Modality
from hycon.data import (
    TABLE_HEADER,
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    iterate_minibatches,
    read_feature_table,
    split_dataset,
    write_feature_table,
)
from hycon.errors import DatasetFormatError, LabelError, ShapeError

SMALL = SyntheticSpec(n_samples=50, d_l=4, d_a=3, d_v=2, seed=1)


def test_synthetic_shapes_and_labels():
    dataset = generate_synthetic(SMALL)
    assert len(dataset) == 50
    assert dataset.widths == (4, 3, 2)
    assert np.all(np.abs(dataset.labels) <= 3.0)
    np.testing.assert_array_equal(dataset.sample_ids, np.arange(50))


def test_synthetic_is_deterministic():
    a, b = generate_synthetic(SMALL), generate_synthetic(SMALL)
    for fa, fb in zip(a.features, b.features):
        np.testing.assert_array_equal(fa, fb)
    c = generate_synthetic(SMALL.model_copy(update={"seed": 2}))
    assert not np.array_equal(a.labels, c.labels)


def test_synthetic_labels_are_uniform():
    dataset = generate_synthetic(SyntheticSpec(n_samples=10_000, d_l=2, d_a=2, d_v=2, seed=0))
    statistic = stats.kstest(dataset.labels, stats.uniform(loc=-3.0, scale=6.0).cdf).statistic
    assert statistic < 0.02


def test_synthetic_features_carry_the_label():
    dataset = generate_synthetic(SyntheticSpec(n_samples=2000, noise_sigma=0.1, seed=3))
    sign = np.sign(dataset.labels)
    for block in dataset.features:
        correlations = [abs(np.corrcoef(block[:, j], sign)[0, 1]) for j in range(block.shape[1])]
        assert max(correlations) > 0.2


def test_modality_offsets_shift_the_features():
    spec = SyntheticSpec(
        n_samples=4000, d_l=3, d_a=3, d_v=3, noise_sigma=0.0, shared_strength=0.0,
        modality_offset={Modality.LANGUAGE: 0.0, Modality.AUDIO: 1.5, Modality.VISUAL: -2.0}, seed=0,
    )
    language, audio, visual = generate_synthetic(spec).features
    np.testing.assert_allclose(language, 0.0)
    np.testing.assert_allclose(audio, 1.5)
    np.testing.assert_allclose(visual, -2.0)


def test_dataset_validation():
    with pytest.raises(ShapeError):
        Dataset((np.zeros((3, 2)), np.zeros((2, 2)), np.zeros((3, 2))), np.zeros(3), np.arange(3))
    with pytest.raises(LabelError):
        Dataset((np.zeros((1, 2)),) * 3, np.array([3.5]), np.arange(1))


def test_split_fractions_and_disjointness():
    dataset = generate_synthetic(SyntheticSpec(n_samples=100, d_l=2, d_a=2, d_v=2))
    splits = split_dataset(dataset, seed=0)
    assert (len(splits.train), len(splits.val), len(splits.test)) == (70, 10, 20)
    ids = np.concatenate([part.sample_ids for _, part in splits.named()])
    assert sorted(ids.tolist()) == list(range(100))
    again = split_dataset(dataset, seed=0)
    np.testing.assert_array_equal(splits.test.sample_ids, again.test.sample_ids)
    other = split_dataset(dataset, seed=1)
    assert not np.array_equal(splits.test.sample_ids, other.test.sample_ids)


def test_minibatches_cover_the_dataset():
    dataset = generate_synthetic(SMALL)
    batches = list(iterate_minibatches(dataset, 16, np.random.default_rng(0)))
    assert [b.size for b in batches] == [16, 16, 16, 2]
    seen = np.concatenate([b.sample_ids for b in batches])
    assert sorted(seen.tolist()) == list(range(50))


def test_minibatches_drop_a_single_leftover():
    dataset = generate_synthetic(SMALL.model_copy(update={"n_samples": 33}))
    sizes = [b.size for b in iterate_minibatches(dataset, 16, np.random.default_rng(0))]
    assert sizes == [16, 16]


def test_feature_table_round_trip(tmp_path):
    dataset = generate_synthetic(SMALL)
    target = tmp_path / "data.txt"
    write_feature_table(dataset, target)
    loaded = read_feature_table(target)
    assert loaded.widths == dataset.widths
    for fa, fb in zip(loaded.features, dataset.features):
        np.testing.assert_array_equal(fa, fb)
    np.testing.assert_array_equal(loaded.labels, dataset.labels)


def write_table(tmp_path, body):
    target = tmp_path / "table.txt"
    target.write_text(body)
    return target


VALID = (
    f"{TABLE_HEADER}\n"
    "[modality language dim 2]\n1,2\n3,4\n"
    "[modality audio dim 1]\n5\n6\n"
    "[modality visual dim 1]\n7\n8\n"
    "[labels]\n0.5\n-1\n"
)


def test_feature_table_by_hand(tmp_path):
    dataset = read_feature_table(write_table(tmp_path, VALID))
    assert dataset.widths == (2, 1, 1)
    np.testing.assert_array_equal(dataset.labels, [0.5, -1.0])


@pytest.mark.parametrize(
    "body",
    [
        "",
        VALID.replace(TABLE_HEADER, "#other"),
        VALID.replace("1,2", "1,x"),
        VALID.replace("1,2", "1,2,3"),
        VALID.replace("[modality audio dim 1]", "[modality smell dim 1]"),
        VALID.replace("[labels]\n0.5\n-1\n", "[labels]\n0.5\n"),
        VALID.replace("0.5", "4.0"),
        VALID.replace("[modality visual dim 1]\n7\n8\n", ""),
        VALID.replace("[modality language dim 2]\n", ""),
    ],
)
def test_feature_table_errors(tmp_path, body):
    with pytest.raises(DatasetFormatError):
        read_feature_table(write_table(tmp_path, body))


def test_feature_table_missing_file(tmp_path):
    with pytest.raises(DatasetFormatError):
        read_feature_table(tmp_path / "absent.txt")

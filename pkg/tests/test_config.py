import logging
from pathlib import Path

import pytest

from hycon.config import (
    ABLATION_REGIMES,
    ExperimentConfig,
    SweepKind,
    dump_config,
    load_config,
    parse_config,
)
from hycon.errors import ConfigError
from hycon.losses import BaselineKind
from hycon.model import FusionKind

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_every_section_has_defaults():
    config = parse_config({})
    assert config == load_config(None) == ExperimentConfig()
    assert config.hyperparams.alpha == 0.8
    assert config.fusion is FusionKind.ADDITION
    assert config.data.synthetic is not None and config.data.path is None
    assert config.seeds == [0]
    assert config.sweep is None


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_are_valid(path):
    config = load_config(path)
    assert config.hyperparams.learning_rate == 0.001


def test_shipped_ablation_config():
    config = load_config(CONFIG_DIR / "ablation.yaml")
    assert config.sweep.kind is SweepKind.ABLATION
    assert config.seeds == [0, 1, 2, 3, 4]
    assert tuple(config.sweep.regimes) == ABLATION_REGIMES


def test_dump_and_reload(tmp_path):
    config = parse_config(
        {"hyperparams": {"alpha": 0.5, "d": 8}, "loss": {"baseline_loss": "npair"}, "seeds": [3, 4]}
    )
    target = tmp_path / "config.yaml"
    target.write_text(dump_config(config))
    reloaded = load_config(target)
    assert reloaded == config
    assert reloaded.loss.baseline_loss is BaselineKind.NPAIR


def test_all_violations_are_reported():
    with pytest.raises(ConfigError) as info:
        parse_config({"hyperparams": {"alpha": 2.0, "d": 0}, "fusion": "bilinear"})
    where = [v.split(":")[0] for v in info.value.violations]
    assert {"hyperparams.alpha", "hyperparams.d", "fusion"} <= set(where)
    assert "invalid configuration" in str(info.value)


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config({"hyperparams": {"margin": 0.8}})
    assert info.value.violations[0].startswith("hyperparams.margin")


@pytest.mark.parametrize(
    "raw, fragment",
    [
        ({"fusion": "tensor", "hyperparams": {"d": 100}}, "tensor fusion"),
        ({"hyperparams": {"d": 100}, "sweep": {"kind": "fusion"}}, "tensor fusion"),
        ({"hyperparams": {"batch_size": 64}, "data": {"synthetic": {"n_samples": 40}}}, "batch_size"),
        ({"hyperparams": {"batch_size": 32}, "data": {"synthetic": {"n_samples": 40}}}, "exceeds the 28 training samples"),
        ({"seeds": []}, "seeds"),
        ({"data": {"synthetic": {}, "path": "table.txt"}}, "exactly one"),
        ({"data": {}}, "exactly one"),
        ({"training": {"split": [0.5, 0.5, 0.5]}}, "sum to 1"),
        ({"sweep": {"alphas": [1.5]}}, "alpha 1.5"),
        ({"sweep": {"regimes": ["w/o everything"]}}, "unknown ablation regime"),
    ],
)
def test_cross_field_checks(raw, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    assert fragment in str(info.value)


def test_tensor_fusion_fits_small_widths():
    assert parse_config({"fusion": "tensor", "hyperparams": {"d": 20}}).fusion is FusionKind.TENSOR


def test_baseline_with_hycon_toggles_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="hycon.config"):
        parse_config({"loss": {"baseline_loss": "triplet", "enable_refinement": False}})
    assert "enable_refinement" in caplog.text


@pytest.mark.parametrize(
    "body, fragment",
    [("hyperparams: [1, 2\n", "not valid YAML"), ("- 1\n- 2\n", "mapping")],
)
def test_bad_files(tmp_path, body, fragment):
    target = tmp_path / "bad.yaml"
    target.write_text(body)
    with pytest.raises(ConfigError, match=fragment):
        load_config(target)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.yaml")


def test_empty_file_means_defaults(tmp_path):
    target = tmp_path / "empty.yaml"
    target.write_text("")
    assert load_config(target) == ExperimentConfig()


def test_with_seed():
    assert parse_config({"seeds": [1, 2]}).with_seed(7).seeds == [7]

import numpy as np
import pytest

from hycon.errors import ConfigError, NumericalError
from hycon.gradcheck import CHECKED_LOSSES, enabled_losses, random_problem, run_gradient_suite
from hycon.losses import BaselineKind, LossConfig, RatioForm

SEEDS = range(3)


def test_every_loss_passes():
    report = run_gradient_suite(seeds=SEEDS)
    assert [c.name for c in report.checks] == list(CHECKED_LOSSES)
    assert report.passed
    assert report.max_rel_error < 1e-4
    assert report.summary().startswith(f"{len(CHECKED_LOSSES)} losses checked")
    assert report.summary().endswith("PASS")
    report.raise_for_failure()


def test_variants_pass():
    config = LossConfig(ratio_form=RatioForm.LOG, enable_refinement=False, triplet_hinge=True)
    report = run_gradient_suite(seeds=SEEDS, alpha=0.5, loss_config=config, losses=("iamcl", "iemcl", "triplet"))
    assert report.passed


def test_corrupted_backward_is_caught():
    report = run_gradient_suite(seeds=range(2), losses=("scl", "npair"), corrupt="scl")
    assert not report.passed
    assert [c.name for c in report.failures()] == ["scl"]
    assert "FAIL scl" in report.summary()
    with pytest.raises(NumericalError, match="FAIL"):
        report.raise_for_failure()


@pytest.mark.parametrize(
    "config, expected",
    [
        (LossConfig(), CHECKED_LOSSES),
        (
            LossConfig(enable_iamcl=False, enable_scl=False),
            ("iemcl", "prediction", "classical", "triplet", "hard_triplet", "npair"),
        ),
        (LossConfig(baseline_loss=BaselineKind.NPAIR), ("scl", "prediction", "npair")),
        (
            LossConfig(enable_scl=False, baseline_loss=BaselineKind.HARD_TRIPLET),
            ("prediction", "hard_triplet"),
        ),
    ],
)
def test_enabled_losses_follow_the_toggles(config, expected):
    assert enabled_losses(config) == tuple(expected)


def test_unknown_loss_name():
    with pytest.raises(ConfigError):
        run_gradient_suite(seeds=SEEDS, losses=("contrastive",))


def test_random_problem():
    problem = random_problem(4)
    assert problem.theta.shape == (24, 6)
    assert np.all(np.abs(problem.theta) >= 0.05)
    assert problem.batch.positive.sum() == 4
    again = random_problem(4)
    np.testing.assert_array_equal(problem.theta, again.theta)


@pytest.mark.slow
def test_full_suite():
    assert run_gradient_suite().passed

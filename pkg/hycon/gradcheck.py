"""Finite-difference verification of every training objective on small random batches."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from hycon.autodiff import DiffNode, gradient_report, op_take
from hycon.core import MiniBatch
from hycon.errors import ConfigError, NumericalError
from hycon.losses import (
    BaselineKind,
    LossConfig,
    baseline_terms,
    loss_iamcl,
    loss_iemcl,
    loss_prediction,
    loss_scl,
    select_baseline_pairs,
)
from hycon.model import normalize_for_contrast
from hycon.pairs import PairRegime

logger = logging.getLogger(__name__)

CHECKED_LOSSES = ("scl", "iamcl", "iemcl", "prediction", "classical", "triplet", "hard_triplet", "npair")
DEFAULT_TOL = 1e-4
DEFAULT_SEEDS = 20
BATCH_K = 8
BATCH_D = 6

Builder = Callable[[DiffNode], DiffNode]


@dataclass(frozen=True)
class CheckProblem:
    """A seeded point at which one loss is checked."""

    theta: np.ndarray
    batch: MiniBatch
    seed: int


def random_problem(seed: int, k: int = BATCH_K, d: int = BATCH_D) -> CheckProblem:
    """Raw embeddings for 3K stacked rows with entries at least 0.05 away from the
    ReLU kink, and labels covering both classes."""
    rng = np.random.default_rng(seed)
    theta = rng.choice([-1.0, 1.0], size=(3 * k, d)) * rng.uniform(0.05, 1.0, size=(3 * k, d))
    polarity = rng.permutation(np.r_[np.ones(k // 2), -np.ones(k - k // 2)])
    labels = polarity * rng.uniform(0.1, 3.0, size=k)
    features = tuple(np.zeros((k, 1)) for _ in range(3))
    return CheckProblem(theta, MiniBatch(features, labels), seed)  # type: ignore[arg-type]


def _modalities(param: DiffNode, k: int) -> Sequence[DiffNode]:
    normalized = normalize_for_contrast(param)
    return [op_take(normalized, np.arange(m * k, (m + 1) * k)) for m in range(3)]


def _baseline_builder(kind: BaselineKind, problem: CheckProblem, hinge: bool) -> Builder:
    batch, k = problem.batch, problem.batch.size
    frozen = {}
    if kind is BaselineKind.HARD_TRIPLET:
        # Hard picks are a discrete choice; hold them fixed while perturbing.
        start = _modalities(DiffNode(problem.theta), k)
        rng = np.random.default_rng(problem.seed)
        frozen = {
            regime: select_baseline_pairs(kind, start, batch, regime, rng)
            for regime in (PairRegime.IAMCL, PairRegime.IEMCL)
        }

    def build(param: DiffNode) -> DiffNode:
        emb = _modalities(param, k)
        rng = np.random.default_rng(problem.seed)
        intra = baseline_terms(kind, emb, batch, PairRegime.IAMCL, rng, hinge, frozen.get(PairRegime.IAMCL))
        inter = baseline_terms(kind, emb, batch, PairRegime.IEMCL, rng, hinge, frozen.get(PairRegime.IEMCL))
        return intra + inter

    return build


def loss_builders(problem: CheckProblem, alpha: float, loss_config: LossConfig) -> Dict[str, Tuple[Builder, np.ndarray]]:
    """Scalar-loss builders keyed by loss name, each with the point to check it at."""
    batch, k = problem.batch, problem.batch.size
    form, refine = loss_config.ratio_form, loss_config.enable_refinement
    hinge = loss_config.triplet_hinge
    y_pred = np.random.default_rng([problem.seed, 1]).uniform(-3.0, 3.0, size=k)

    builders: Dict[str, Tuple[Builder, np.ndarray]] = {
        "scl": (lambda p: loss_scl(_modalities(p, k), batch, alpha), problem.theta),
        "iamcl": (lambda p: loss_iamcl(_modalities(p, k), batch, form, refine), problem.theta),
        "iemcl": (lambda p: loss_iemcl(_modalities(p, k), batch, alpha, form, refine), problem.theta),
        "prediction": (lambda p: loss_prediction(p, batch.labels), y_pred),
    }
    for kind in BaselineKind:
        builders[kind.value] = (_baseline_builder(kind, problem, hinge), problem.theta)
    return builders


def _corrupted(builder: Builder) -> Builder:
    """Adds a zero-valued term whose backward rule is wrong."""

    def build(param: DiffNode) -> DiffNode:
        root = builder(param)
        bogus = DiffNode(0.0, (param,), lambda g: (g * np.ones_like(param.value),))
        return root + bogus

    return build


@dataclass(frozen=True)
class LossCheck:
    name: str
    max_rel_error: float
    worst_seed: int
    worst_index: Tuple[int, ...]
    passed: bool


@dataclass(frozen=True)
class GradSuiteReport:
    checks: Tuple[LossCheck, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    def failures(self) -> Tuple[LossCheck, ...]:
        return tuple(c for c in self.checks if not c.passed)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        relation = "<" if self.passed else ">="
        head = (
            f"{len(self.checks)} losses checked, max rel err {self.max_rel_error:.3e} "
            f"{relation} {self.tol:g}, {verdict}"
        )
        lines = [head]
        lines.extend(
            f"  FAIL {c.name}: rel err {c.max_rel_error:.3e} at seed {c.worst_seed}, coordinate {c.worst_index}"
            for c in self.failures()
        )
        return "\n".join(lines)

    def raise_for_failure(self):
        if not self.passed:
            raise NumericalError(self.summary())


def enabled_losses(loss_config: LossConfig) -> Tuple[str, ...]:
    """Loss names a config trains with. The baselines stay in unless one of
    them replaces IAMCL and IEMCL, in which case only that one is kept."""
    toggles = {
        "scl": loss_config.enable_scl,
        "iamcl": loss_config.enable_iamcl,
        "iemcl": loss_config.enable_iemcl,
    }
    skipped = {name for name, enabled in toggles.items() if not enabled}
    if loss_config.baseline_loss is not None:
        skipped |= {"iamcl", "iemcl"}
        skipped |= {kind.value for kind in BaselineKind if kind is not loss_config.baseline_loss}
    return tuple(name for name in CHECKED_LOSSES if name not in skipped)


def run_gradient_suite(
    seeds: Iterable[int] = range(DEFAULT_SEEDS),
    tol: float = DEFAULT_TOL,
    alpha: float = 0.8,
    loss_config: Optional[LossConfig] = None,
    losses: Sequence[str] = CHECKED_LOSSES,
    corrupt: Optional[str] = None,
    h: float = 1e-4,
) -> GradSuiteReport:
    """Check every named loss at one random (K=8, d=6) point per seed.

    Args:
        seeds (Iterable[int]): Seeds of the random check points
        tol (float): Largest acceptable relative error
        alpha (float): Modality margin used by SCL and IEMCL
        loss_config (Optional[LossConfig]): Ratio form, refinement and hinge variants
        losses (Sequence[str]): Names from `CHECKED_LOSSES`
        corrupt (Optional[str]): Name of a loss whose backward rule is sabotaged,
            for exercising the failure path
        h (float): Finite-difference step

    Returns:
        GradSuiteReport: Worst error per loss
    """
    loss_config = loss_config or LossConfig()
    unknown = [name for name in losses if name not in CHECKED_LOSSES]
    if unknown:
        raise ConfigError([f"no gradient check defined for {unknown}"])
    seeds = list(seeds)
    worst: Dict[str, Tuple[float, int, Tuple[int, ...]]] = {name: (0.0, seeds[0] if seeds else 0, ()) for name in losses}

    for seed in seeds:
        problem = random_problem(seed)
        builders = loss_builders(problem, alpha, loss_config)
        for name in losses:
            builder, theta = builders[name]
            if name == corrupt:
                builder = _corrupted(builder)
            result = gradient_report(builder, theta, h)
            if result.max_rel_error >= worst[name][0]:
                index = tuple(int(i) for i in np.unravel_index(result.worst_index, theta.shape))
                worst[name] = (result.max_rel_error, seed, index)
        logger.debug("gradient checks at seed %d done", seed)

    checks = tuple(
        LossCheck(name, err, seed, index, err < tol) for name, (err, seed, index) in worst.items()
    )
    report = GradSuiteReport(checks, tol)
    logger.info(report.summary().splitlines()[0])
    return report

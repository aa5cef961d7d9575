"""Process settings from the environment and the YAML experiment configuration."""

from __future__ import annotations

import logging
import os
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from hycon.core import HyperParams
from hycon.data import SyntheticSpec, split_sizes
from hycon.errors import ConfigError
from hycon.losses import BaselineKind, LossConfig
from hycon.model import DEFAULT_HIDDEN, TENSOR_FUSION_LIMIT, FusionKind

# Load environment variables
load_dotenv()

LOG_LEVEL = os.getenv("HYCON_LOG_LEVEL", "INFO")
SHOW_PROGRESS = os.getenv("HYCON_PROGRESS", "1") != "0"
DEFAULT_OUTPUT_DIR = os.getenv("HYCON_OUTPUT_DIR", "runs")

EFFECTIVE_CONFIG_NAME = "config.effective.yaml"

logger = logging.getLogger(__name__)


class DataConfig(BaseModel):
    """Exactly one of a synthetic spec or a feature-table path."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    synthetic: Optional[SyntheticSpec] = None
    path: Optional[Path] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.synthetic is None) == (self.path is None):
            raise ValueError("data needs exactly one of 'synthetic' or 'path'")
        return self


class TrainingConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(50, ge=1)
    patience: int = Field(10, ge=1)
    hidden: int = Field(DEFAULT_HIDDEN, ge=1)
    max_steps: Optional[int] = Field(None, ge=1)
    split: Tuple[float, float, float] = (0.7, 0.1, 0.2)

    @model_validator(mode="after")
    def _split_sums_to_one(self):
        if any(f < 0 for f in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be nonnegative and sum to 1, got {self.split}")
        return self


class SweepKind(str, Enum):
    ALPHA = "alpha"
    LAMBDA = "lambda"
    LOSS = "loss"
    FUSION = "fusion"
    ABLATION = "ablation"


# Loss-toggle overrides of each named ablation regime.
ABLATION_TOGGLES: Dict[str, dict] = {
    "hycon": {},
    "w/o contrast": {"enable_scl": False, "enable_iamcl": False, "enable_iemcl": False},
    "w/o refinement": {"enable_refinement": False},
    "w/o margin": {"enable_margin": False},
    "w/o iamcl": {"enable_iamcl": False},
    "w/o iemcl": {"enable_iemcl": False},
    "w/o scl": {"enable_scl": False},
}
ABLATION_REGIMES = tuple(ABLATION_TOGGLES)


class SweepConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: SweepKind = SweepKind.ALPHA
    alphas: List[float] = Field(default_factory=lambda: [0.5, 0.7, 0.8, 0.9])
    lambdas: List[Tuple[float, float, float]] = Field(
        default_factory=lambda: [(1.0, 1.0, 1.0), (0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 0.0)]
    )
    losses: List[Optional[BaselineKind]] = Field(
        default_factory=lambda: [
            BaselineKind.TRIPLET,
            BaselineKind.HARD_TRIPLET,
            BaselineKind.NPAIR,
            BaselineKind.CLASSICAL,
            None,
        ]
    )
    fusions: List[FusionKind] = Field(
        default_factory=lambda: [FusionKind.ADDITION, FusionKind.CONCATENATION, FusionKind.TENSOR]
    )
    regimes: List[str] = Field(default_factory=lambda: list(ABLATION_REGIMES))

    @model_validator(mode="after")
    def _check_values(self):
        problems = []
        problems += [f"alpha {a} outside [0, 1]" for a in self.alphas if not 0.0 <= a <= 1.0]
        problems += [f"lambdas {lam} contain a negative weight" for lam in self.lambdas if min(lam) < 0]
        problems += [f"unknown ablation regime {r!r}" for r in self.regimes if r not in ABLATION_REGIMES]
        if problems:
            raise ValueError("; ".join(problems))
        return self


class ExperimentConfig(BaseModel):
    """Everything one command invocation needs, every section defaulted."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    hyperparams: HyperParams = Field(default_factory=HyperParams)
    fusion: FusionKind = FusionKind.ADDITION
    loss: LossConfig = Field(default_factory=LossConfig)
    data: DataConfig = Field(default_factory=lambda: DataConfig(synthetic=SyntheticSpec()))
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    output_dir: Path = Field(default_factory=lambda: Path(DEFAULT_OUTPUT_DIR))
    seeds: List[int] = Field(default_factory=lambda: [0])
    sweep: Optional[SweepConfig] = None

    @model_validator(mode="after")
    def _cross_checks(self):
        problems = []
        if not self.seeds:
            problems.append("seeds must list at least one seed")
        swept_fusions = self.sweep.fusions if self.sweep is not None and self.sweep.kind is SweepKind.FUSION else []
        uses_tensor = self.fusion is FusionKind.TENSOR or FusionKind.TENSOR in swept_fusions
        if uses_tensor and (self.hyperparams.d + 1) ** 3 > TENSOR_FUSION_LIMIT:
            problems.append(
                f"tensor fusion with d={self.hyperparams.d} exceeds {TENSOR_FUSION_LIMIT} head inputs"
            )
        synthetic = self.data.synthetic
        if synthetic is not None:
            n_train = split_sizes(synthetic.n_samples, self.training.split)[0]
            if self.hyperparams.batch_size > n_train:
                problems.append(
                    f"batch_size {self.hyperparams.batch_size} exceeds the {n_train} training samples "
                    f"of n_samples {synthetic.n_samples}"
                )
        if problems:
            raise ValueError("; ".join(problems))
        if self.loss.baseline_loss is not None:
            default = LossConfig()
            ignored = [
                name
                for name in ("enable_scl", "enable_iamcl", "enable_iemcl", "enable_refinement", "ratio_form")
                if getattr(self.loss, name) != getattr(default, name)
            ]
            if ignored:
                logger.warning(
                    "baseline_loss=%s overrides the HyCon toggles %s", self.loss.baseline_loss.value, ignored
                )
        return self

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return self.model_copy(update={"seeds": [seed]})


def _violations(error: ValidationError) -> List[str]:
    messages = []
    for item in error.errors():
        where = ".".join(str(part) for part in item["loc"]) or "config"
        messages.append(f"{where}: {item['msg']}")
    return messages


def parse_config(raw: Optional[dict]) -> ExperimentConfig:
    """Validate a config mapping, reporting every violated constraint at once.

    Raises:
        ConfigError: If any constraint is violated
    """
    try:
        return ExperimentConfig.model_validate(raw or {})
    except ValidationError as e:
        raise ConfigError(_violations(e)) from e


def load_config(path: Optional[Path]) -> ExperimentConfig:
    """Load a YAML config file; no path means all defaults."""
    if path is None:
        return parse_config({})
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError([f"cannot read config {path}: {str(e)}"]) from e
    except yaml.YAMLError as e:
        raise ConfigError([f"config {path} is not valid YAML: {str(e)}"]) from e
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError([f"config {path} must be a mapping of sections"])
    return parse_config(raw)


def dump_config(config: ExperimentConfig) -> str:
    """Serialize with every default resolved, so re-loading reproduces the run."""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)

"""Hybrid contrastive learning for tri-modal sentiment regression."""

from hycon.core import MODALITIES, HyperParams, MiniBatch, Modality, default_hyperparams
from hycon.errors import HyconError
from hycon.losses import LossConfig
from hycon.model import FusionKind, HyconModel

__version__ = "0.1.0"

__all__ = [
    "MODALITIES",
    "FusionKind",
    "HyconError",
    "HyconModel",
    "HyperParams",
    "LossConfig",
    "MiniBatch",
    "Modality",
    "default_hyperparams",
]

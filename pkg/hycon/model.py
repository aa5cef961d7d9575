"""Per-modality encoders, nonnegative normalization, fusion and the prediction head."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from hycon.autodiff import (
    DiffNode,
    constant,
    op_add,
    op_concat,
    op_l2_normalize_rows,
    op_linear,
    op_outer3_rows,
    op_relu,
    op_reshape,
)
from hycon.core import MODALITIES, EmbeddingMatrix, MiniBatch, Modality
from hycon.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

TENSOR_FUSION_LIMIT = 10**6
DEFAULT_HIDDEN = 64


class FusionKind(str, Enum):
    ADDITION = "addition"
    CONCATENATION = "concatenation"
    TENSOR = "tensor"

    def head_width(self, d: int) -> int:
        if self is FusionKind.ADDITION:
            return d
        if self is FusionKind.CONCATENATION:
            return 3 * d
        return (d + 1) ** 3


def check_tensor_width(d: int):
    width = (d + 1) ** 3
    if width > TENSOR_FUSION_LIMIT:
        raise ConfigError([f"tensor fusion with d={d} needs {width} head inputs (limit {TENSOR_FUSION_LIMIT})"])


@dataclass(frozen=True)
class EncoderLayers:
    w1: DiffNode
    b1: DiffNode
    w2: DiffNode
    b2: DiffNode


@dataclass(frozen=True)
class EncoderParams:
    """Two-layer feed-forward map d_m -> h -> d for every modality."""

    layers: Mapping[Modality, EncoderLayers]

    def __post_init__(self):
        widths = {self.layers[m].w2.shape[1] for m in MODALITIES}
        if len(widths) != 1:
            raise ShapeError(f"encoders disagree on the output width: {sorted(widths)}")


@dataclass(frozen=True)
class HeadParams:
    weight: DiffNode
    bias: DiffNode


def encode(batch: MiniBatch, params: EncoderParams) -> Dict[Modality, DiffNode]:
    """Pre-normalization embeddings, one K x d node per modality.

    Raises:
        ShapeError: If a feature width does not match its encoder
    """
    out = {}
    for m in MODALITIES:
        layers = params.layers[m]
        x = batch.feature(m)
        if x.shape[1] != layers.w1.shape[0]:
            raise ShapeError(f"{m.value} features have width {x.shape[1]}, encoder expects {layers.w1.shape[0]}")
        hidden = op_relu(op_linear(constant(x), layers.w1, layers.b1))
        out[m] = op_linear(hidden, layers.w2, layers.b2)
    return out


def normalize_for_contrast(x: Union[DiffNode, EmbeddingMatrix]) -> Union[DiffNode, EmbeddingMatrix]:
    """ReLU then row-wise L2 normalization, so pairwise dot products lie in [0, 1]."""
    if isinstance(x, EmbeddingMatrix):
        rows = normalize_for_contrast(constant(x.rows)).value
        return EmbeddingMatrix(rows, x.modality, normalized=True)
    return op_l2_normalize_rows(op_relu(x))


def fuse(
    x_l: DiffNode,
    x_a: DiffNode,
    x_v: DiffNode,
    kind: FusionKind,
    head: HeadParams,
) -> DiffNode:
    """Combine the three embeddings and map them to one score per sample.

    Args:
        x_l (DiffNode): Language embeddings, K x d
        x_a (DiffNode): Audio embeddings, K x d
        x_v (DiffNode): Visual embeddings, K x d
        kind (FusionKind): Fusion strategy
        head (HeadParams): Linear head, (fused width) x 1 weight and length-1 bias

    Returns:
        DiffNode: Length-K predictions
    """
    if not x_l.shape == x_a.shape == x_v.shape:
        raise ShapeError(f"fusion inputs differ in shape: {x_l.shape}, {x_a.shape}, {x_v.shape}")
    kind = FusionKind(kind)
    if kind is FusionKind.ADDITION:
        fused = op_add(op_add(x_l, x_a), x_v)
    elif kind is FusionKind.CONCATENATION:
        fused = op_concat([x_l, x_a, x_v], axis=1)
    else:
        check_tensor_width(x_l.shape[1])
        ones = constant(np.ones((x_l.shape[0], 1)))
        fused = op_outer3_rows(
            op_concat([x_l, ones], axis=1),
            op_concat([x_a, ones], axis=1),
            op_concat([x_v, ones], axis=1),
        )
    if fused.shape[1] != head.weight.shape[0]:
        raise ShapeError(f"{kind.value} fusion yields width {fused.shape[1]}, head expects {head.weight.shape[0]}")
    y = op_linear(fused, head.weight, head.bias)
    return op_reshape(y, (y.shape[0],))


@dataclass(frozen=True)
class ModelSpec:
    """Architecture metadata saved alongside the parameters."""

    input_widths: Tuple[int, int, int]
    d: int
    hidden: int
    fusion: FusionKind
    fuse_normalized: bool = True

    def to_json(self) -> str:
        return json.dumps(
            {
                "input_widths": list(self.input_widths),
                "d": self.d,
                "hidden": self.hidden,
                "fusion": self.fusion.value,
                "fuse_normalized": self.fuse_normalized,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        raw = json.loads(text)
        return cls(
            input_widths=tuple(raw["input_widths"]),
            d=int(raw["d"]),
            hidden=int(raw["hidden"]),
            fusion=FusionKind(raw["fusion"]),
            fuse_normalized=bool(raw["fuse_normalized"]),
        )


def _uniform(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class ForwardPass:
    embeddings: Dict[Modality, DiffNode]
    normalized: Dict[Modality, DiffNode]
    prediction: DiffNode

    def fusion_inputs(self, fuse_normalized: bool) -> Tuple[DiffNode, DiffNode, DiffNode]:
        source = self.normalized if fuse_normalized else self.embeddings
        return tuple(source[m] for m in MODALITIES)  # type: ignore[return-value]


class HyconModel:
    """Parameter store plus the differentiable forward path.

    Parameters live in a flat dict of float64 arrays keyed by dotted names
    (``encoder.audio.w1``, ``head.weight``); `bind` wraps them into fresh leaf
    nodes for one step so gradients can be read back by name.

    Attributes:
        spec (ModelSpec): Architecture metadata
        params (Dict[str, np.ndarray]): Trainable arrays
    """

    def __init__(self, spec: ModelSpec, params: Dict[str, np.ndarray]):
        if spec.fusion is FusionKind.TENSOR:
            check_tensor_width(spec.d)
        self.spec = spec
        self.params = params

    @classmethod
    def initialize(cls, spec: ModelSpec, seed: int) -> "HyconModel":
        """Weights uniform in +-1/sqrt(fan_in), biases zero, seeded."""
        if spec.fusion is FusionKind.TENSOR:
            check_tensor_width(spec.d)
        rng = np.random.default_rng(seed)
        params: Dict[str, np.ndarray] = {}
        for m, width in zip(MODALITIES, spec.input_widths):
            params[f"encoder.{m.value}.w1"] = _uniform(rng, width, (width, spec.hidden))
            params[f"encoder.{m.value}.b1"] = np.zeros(spec.hidden)
            params[f"encoder.{m.value}.w2"] = _uniform(rng, spec.hidden, (spec.hidden, spec.d))
            params[f"encoder.{m.value}.b2"] = np.zeros(spec.d)
        head_in = spec.fusion.head_width(spec.d)
        params["head.weight"] = _uniform(rng, head_in, (head_in, 1))
        params["head.bias"] = np.zeros(1)
        return cls(spec, params)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "HyconModel":
        return HyconModel(self.spec, {k: v.copy() for k, v in self.params.items()})

    def bind(self) -> Tuple[Dict[str, DiffNode], EncoderParams, HeadParams]:
        leaves = {name: DiffNode(value, name=name) for name, value in self.params.items()}
        layers = {
            m: EncoderLayers(
                leaves[f"encoder.{m.value}.w1"],
                leaves[f"encoder.{m.value}.b1"],
                leaves[f"encoder.{m.value}.w2"],
                leaves[f"encoder.{m.value}.b2"],
            )
            for m in MODALITIES
        }
        return leaves, EncoderParams(layers), HeadParams(leaves["head.weight"], leaves["head.bias"])

    def forward(self, batch: MiniBatch, encoder: EncoderParams, head: HeadParams) -> ForwardPass:
        embeddings = encode(batch, encoder)
        normalized = {m: normalize_for_contrast(embeddings[m]) for m in MODALITIES}
        source = normalized if self.spec.fuse_normalized else embeddings
        prediction = fuse(*(source[m] for m in MODALITIES), self.spec.fusion, head)
        return ForwardPass(embeddings, normalized, prediction)

    def predict(self, batch: MiniBatch) -> np.ndarray:
        _, encoder, head = self.bind()
        return self.forward(batch, encoder, head).prediction.value.copy()

    def representations(self, batch: MiniBatch) -> Tuple[Dict[Modality, np.ndarray], np.ndarray]:
        """Fusion-input embeddings per modality and their elementwise sum."""
        _, encoder, head = self.bind()
        passes = self.forward(batch, encoder, head)
        inputs = passes.fusion_inputs(self.spec.fuse_normalized)
        unimodal = {m: node.value.copy() for m, node in zip(MODALITIES, inputs)}
        return unimodal, sum(unimodal[m] for m in MODALITIES)

    def save(self, path: Path):
        path = Path(path)
        np.savez(path, __spec__=np.array(self.spec.to_json()), **self.params)

    @classmethod
    def load(cls, path: Path, expected: Optional[ModelSpec] = None) -> "HyconModel":
        """Load a saved model, optionally checking it against an expected architecture.

        Raises:
            ConfigError: If the file is unreadable or the stored architecture differs from `expected`
        """
        try:
            with np.load(Path(path), allow_pickle=False) as archive:
                spec = ModelSpec.from_json(str(archive["__spec__"]))
                params = {k: archive[k].astype(np.float64) for k in archive.files if k != "__spec__"}
        except (OSError, KeyError, ValueError) as e:
            raise ConfigError([f"cannot read model {path}: {str(e)}"]) from e
        if expected is not None and expected != spec:
            differences = [
                f"{name}: model has {getattr(spec, name)!r}, config has {getattr(expected, name)!r}"
                for name in ("input_widths", "d", "hidden", "fusion", "fuse_normalized")
                if getattr(spec, name) != getattr(expected, name)
            ]
            raise ConfigError(differences)
        return cls(spec, params)


def gradients(leaves: Mapping[str, DiffNode]) -> Dict[str, np.ndarray]:
    return {name: node.grad for name, node in leaves.items()}


def stack_embeddings(nodes: Mapping[Modality, DiffNode]) -> Sequence[DiffNode]:
    return [nodes[m] for m in MODALITIES]

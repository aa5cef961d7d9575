"""Reverse-mode differentiation over float64 numpy arrays.

Every operation builds a `DiffNode` holding its forward value, references to
its input nodes and a local backward rule mapping the output gradient to one
gradient per input. `DiffNode.backward` walks the graph in reverse
topological order and accumulates into `grad`, so a node used twice receives
the sum of both path contributions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from hycon.errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

NORMALIZE_EPS = 1e-8

ArrayLike = Union[np.ndarray, float, Sequence[float]]
BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class DiffNode:
    """A differentiable value plus its gradient-propagation contract.

    Attributes:
        value (np.ndarray): Forward value, always float64
        grad (np.ndarray): Gradient accumulator of the same shape, starts at zero
        name (Optional[str]): Label used in diagnostics
    """

    __slots__ = ("value", "grad", "name", "_parents", "_backward")

    def __init__(
        self,
        value: ArrayLike,
        parents: Tuple["DiffNode", ...] = (),
        backward: Optional[BackwardRule] = None,
        name: Optional[str] = None,
    ):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self._parents = parents
        self._backward = backward

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"DiffNode{label}(shape={self.value.shape})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def backward(self):
        """Propagate d(self)/d(node) into every reachable node's `grad`."""
        if self.value.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {self.value.shape}")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = self.grad + np.ones_like(self.value)
        for node in reversed(topo):
            if node._backward is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is not None:
                    parent.grad = parent.grad + g

    def __add__(self, other):
        return op_add(self, other) if isinstance(other, DiffNode) else op_shift(self, float(other))

    def __radd__(self, other):
        return op_shift(self, float(other))

    def __sub__(self, other):
        return op_sub(self, other) if isinstance(other, DiffNode) else op_shift(self, -float(other))

    def __rsub__(self, other):
        return op_shift(op_scale(self, -1.0), float(other))

    def __mul__(self, other):
        return op_mul(self, other) if isinstance(other, DiffNode) else op_scale(self, float(other))

    def __rmul__(self, other):
        return op_scale(self, float(other))

    def __neg__(self):
        return op_scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, DiffNode):
            return op_divide(self, other)
        return op_scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return op_matmul(self, other)


def constant(value: ArrayLike, name: Optional[str] = None) -> DiffNode:
    """A leaf node whose gradient is never read."""
    return DiffNode(value, name=name)


def _require(condition: bool, message: str):
    if not condition:
        raise ShapeError(message)


def _is_scalar(node: DiffNode) -> bool:
    return node.value.ndim == 0


def _reduce_to(grad: np.ndarray, node: DiffNode) -> np.ndarray:
    return np.asarray(grad.sum()) if _is_scalar(node) else grad


def _check_elementwise(a: DiffNode, b: DiffNode, op: str):
    _require(
        a.shape == b.shape or _is_scalar(a) or _is_scalar(b),
        f"{op}: shapes {a.shape} and {b.shape} do not conform",
    )


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def op_add(a: DiffNode, b: DiffNode) -> DiffNode:
    _check_elementwise(a, b, "add")
    return DiffNode(
        a.value + b.value, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b))
    )


def op_sub(a: DiffNode, b: DiffNode) -> DiffNode:
    _check_elementwise(a, b, "sub")
    return DiffNode(
        a.value - b.value, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b))
    )


def op_mul(a: DiffNode, b: DiffNode) -> DiffNode:
    _check_elementwise(a, b, "mul")
    return DiffNode(
        a.value * b.value,
        (a, b),
        lambda g: (_reduce_to(g * b.value, a), _reduce_to(g * a.value, b)),
    )


def op_divide(a: DiffNode, b: DiffNode) -> DiffNode:
    """Elementwise a / b."""
    _check_elementwise(a, b, "divide")
    out = a.value / b.value
    return DiffNode(
        out,
        (a, b),
        lambda g: (_reduce_to(g / b.value, a), _reduce_to(-g * out / b.value, b)),
    )


def op_ratio(num: DiffNode, den: DiffNode) -> DiffNode:
    """Elementwise num / den, defined as 0 (with zero gradient) where den == 0."""
    _require(num.shape == den.shape, f"ratio: shapes {num.shape} and {den.shape} differ")
    safe = den.value != 0
    den_safe = np.where(safe, den.value, 1.0)
    out = np.where(safe, num.value / den_safe, 0.0)

    def backward(g):
        g_num = np.where(safe, g / den_safe, 0.0)
        g_den = np.where(safe, -g * out / den_safe, 0.0)
        return g_num, g_den

    return DiffNode(out, (num, den), backward)


def op_scale(x: DiffNode, c: float) -> DiffNode:
    return DiffNode(x.value * c, (x,), lambda g: (g * c,))


def op_shift(x: DiffNode, c: float) -> DiffNode:
    return DiffNode(x.value + c, (x,), lambda g: (g,))


def op_mul_const(x: DiffNode, c: np.ndarray) -> DiffNode:
    """Elementwise product with a constant array of the same shape."""
    c = np.asarray(c, dtype=np.float64)
    _require(c.shape == x.shape, f"mul_const: shapes {x.shape} and {c.shape} differ")
    return DiffNode(x.value * c, (x,), lambda g: (g * c,))


def op_square(x: DiffNode) -> DiffNode:
    return DiffNode(x.value**2, (x,), lambda g: (2.0 * x.value * g,))


def op_abs(x: DiffNode) -> DiffNode:
    """|x| with subgradient 0 at x == 0."""
    return DiffNode(np.abs(x.value), (x,), lambda g: (g * np.sign(x.value),))


def op_log(x: DiffNode) -> DiffNode:
    return DiffNode(np.log(x.value), (x,), lambda g: (g / x.value,))


def op_exp(x: DiffNode) -> DiffNode:
    out = np.exp(x.value)
    return DiffNode(out, (x,), lambda g: (g * out,))


def op_relu(x: DiffNode) -> DiffNode:
    """max(0, x), subgradient 0 at the kink."""
    mask = x.value > 0
    return DiffNode(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def op_clip_min(x: DiffNode, floor: float) -> DiffNode:
    mask = x.value > floor
    return DiffNode(np.where(mask, x.value, floor), (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# Reductions and indexing
# ---------------------------------------------------------------------------


def op_sum(x: DiffNode, axis: Optional[int] = None) -> DiffNode:
    if axis is None:
        return DiffNode(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))
    _require(x.value.ndim == 2 and axis in (0, 1), "sum: axis reduction needs a matrix and axis 0 or 1")

    def backward(g):
        expanded = np.expand_dims(g, axis)
        return (np.broadcast_to(expanded, x.shape).copy(),)

    return DiffNode(x.value.sum(axis=axis), (x,), backward)


def op_mean(x: DiffNode) -> DiffNode:
    _require(x.value.size > 0, "mean of an empty array")
    return op_scale(op_sum(x), 1.0 / x.value.size)


def op_take(x: DiffNode, index) -> DiffNode:
    """Gather entries with numpy indexing; repeated indices accumulate."""
    out = x.value[index]

    def backward(g):
        full = np.zeros_like(x.value)
        np.add.at(full, index, g)
        return (full,)

    return DiffNode(out, (x,), backward)


def op_concat(xs: Sequence[DiffNode], axis: int = 0) -> DiffNode:
    _require(len(xs) > 0, "concat of nothing")
    value = np.concatenate([x.value for x in xs], axis=axis)
    bounds = np.cumsum([x.value.shape[axis] for x in xs])[:-1]
    return DiffNode(value, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


def op_stack(scalars: Sequence[DiffNode]) -> DiffNode:
    """Stack 0-d nodes into a vector."""
    _require(all(_is_scalar(s) for s in scalars), "stack expects scalar nodes")
    value = np.array([s.value for s in scalars], dtype=np.float64)
    return DiffNode(value, tuple(scalars), lambda g: tuple(np.asarray(v) for v in g))


def op_transpose(x: DiffNode) -> DiffNode:
    _require(x.value.ndim == 2, "transpose needs a matrix")
    return DiffNode(x.value.T.copy(), (x,), lambda g: (g.T.copy(),))


def op_reshape(x: DiffNode, shape: Tuple[int, ...]) -> DiffNode:
    return DiffNode(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def op_logsumexp_rows(x: DiffNode, mask: np.ndarray) -> DiffNode:
    """Per-row log-sum-exp over the entries selected by `mask`, max-stabilized.

    Every row of `mask` must select at least one entry.
    """
    mask = np.asarray(mask, dtype=bool)
    _require(x.value.ndim == 2 and mask.shape == x.shape, "logsumexp_rows: mask must match a matrix")
    _require(bool(np.all(mask.any(axis=1))), "logsumexp_rows: a row selects nothing")
    masked = np.where(mask, x.value, -np.inf)
    peak = masked.max(axis=1, keepdims=True)
    weights = np.where(mask, np.exp(masked - peak), 0.0)
    total = weights.sum(axis=1, keepdims=True)
    out = (peak + np.log(total)).reshape(-1)
    softmax = weights / total
    return DiffNode(out, (x,), lambda g: (softmax * g[:, None],))


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def op_matmul(a: DiffNode, b: DiffNode) -> DiffNode:
    _require(
        a.value.ndim == 2 and b.value.ndim == 2 and a.shape[1] == b.shape[0],
        f"matmul: shapes {a.shape} and {b.shape} do not conform",
    )
    return DiffNode(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def op_linear(x: DiffNode, W: DiffNode, b: DiffNode) -> DiffNode:
    """Affine map xW + b with the bias broadcast over rows.

    Args:
        x (DiffNode): K x p inputs
        W (DiffNode): p x q weights
        b (DiffNode): length-q bias

    Returns:
        DiffNode: K x q outputs

    Raises:
        ShapeError: If the shapes do not conform
    """
    _require(
        x.value.ndim == 2 and W.value.ndim == 2 and b.value.ndim == 1
        and x.shape[1] == W.shape[0] and W.shape[1] == b.shape[0],
        f"linear: shapes x{x.shape} W{W.shape} b{b.shape} do not conform",
    )
    return DiffNode(
        x.value @ W.value + b.value,
        (x, W, b),
        lambda g: (g @ W.value.T, x.value.T @ g, g.sum(axis=0)),
    )


def op_dot_rows(a: DiffNode, b: DiffNode) -> DiffNode:
    """Inner product of two equal-length vectors."""
    _require(
        a.value.ndim == 1 and b.value.ndim == 1 and a.shape == b.shape,
        f"dot: vectors of shapes {a.shape} and {b.shape}",
    )
    return DiffNode(np.dot(a.value, b.value), (a, b), lambda g: (g * b.value, g * a.value))


def op_l2_normalize_rows(x: DiffNode, eps: float = NORMALIZE_EPS) -> DiffNode:
    """Divide each row by max(norm, eps); all-zero rows pass through unchanged."""
    _require(x.value.ndim == 2, "l2_normalize_rows needs a matrix")
    norms = np.linalg.norm(x.value, axis=1, keepdims=True)
    denom = np.maximum(norms, eps)
    out = x.value / denom
    scaled = norms > eps

    def backward(g):
        radial = np.sum(out * g, axis=1, keepdims=True)
        return (np.where(scaled, (g - out * radial) / denom, g / denom),)

    return DiffNode(out, (x,), backward)


def op_outer3_rows(a: DiffNode, b: DiffNode, c: DiffNode) -> DiffNode:
    """Row-wise triple outer product flattened to K x (p*q*r)."""
    _require(
        a.value.ndim == b.value.ndim == c.value.ndim == 2
        and a.shape[0] == b.shape[0] == c.shape[0],
        "outer3_rows: inputs must be matrices sharing K",
    )
    k = a.shape[0]
    cube = np.einsum("ki,kj,kl->kijl", a.value, b.value, c.value)

    def backward(g):
        g = g.reshape(cube.shape)
        return (
            np.einsum("kijl,kj,kl->ki", g, b.value, c.value),
            np.einsum("kijl,ki,kl->kj", g, a.value, c.value),
            np.einsum("kijl,ki,kj->kl", g, a.value, b.value),
        )

    return DiffNode(cube.reshape(k, -1), (a, b, c), backward)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst_index: int
    analytic: np.ndarray
    numeric: np.ndarray


def _evaluate(root_builder: Callable[[DiffNode], DiffNode], theta: np.ndarray) -> float:
    value = root_builder(DiffNode(theta)).value
    if value.size != 1:
        raise ShapeError(f"root_builder must return a scalar, got shape {value.shape}")
    value = float(value)
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss {value} during gradient check")
    return value


def gradient_report(
    root_builder: Callable[[DiffNode], DiffNode],
    theta: np.ndarray,
    h: float = 1e-4,
) -> GradCheckResult:
    """Compare the analytic gradient with central differences coordinatewise.

    Args:
        root_builder (Callable): Maps a parameter node to a scalar loss node;
            must be deterministic in the parameter value
        theta (np.ndarray): Point at which to check
        h (float): Finite-difference step

    Returns:
        GradCheckResult: Worst relative error |a - n| / max(1, |n|) and where it occurs

    Raises:
        NumericalError: If the loss is not finite
    """
    theta = np.array(theta, dtype=np.float64)
    param = DiffNode(theta)
    root = root_builder(param)
    if root.value.size != 1:
        raise ShapeError(f"root_builder must return a scalar, got shape {root.value.shape}")
    if not np.isfinite(root.value).all():
        raise NumericalError(f"non-finite loss {float(root.value)} during gradient check")
    root.backward()
    analytic = param.grad.reshape(-1).copy()

    numeric = np.zeros_like(analytic)
    flat = theta.reshape(-1)
    for i in range(flat.size):
        step = np.zeros_like(flat)
        step[i] = h
        plus = _evaluate(root_builder, (flat + step).reshape(theta.shape))
        minus = _evaluate(root_builder, (flat - step).reshape(theta.shape))
        numeric[i] = (plus - minus) / (2.0 * h)

    errors = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    worst = int(np.argmax(errors)) if errors.size else 0
    return GradCheckResult(float(errors.max(initial=0.0)), worst, analytic, numeric)


def finite_diff_check(
    root_builder: Callable[[DiffNode], DiffNode],
    theta: np.ndarray,
    h: float = 1e-4,
) -> float:
    """Maximum relative error between analytic and central-difference gradients."""
    return gradient_report(root_builder, theta, h).max_rel_error

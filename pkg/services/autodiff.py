"""
Define-by-run reverse-mode differentiation over numpy arrays.

Only the primitives the TabR architecture needs are provided. A ``Graph`` is
opened with ``with Graph() as graph:``; every primitive applied while it is
active and fed by at least one gradient-requiring operand is appended to it.
Outside a graph, primitives are plain numpy computations.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from scipy.special import expit

from services.errors import ConfigError, GradCheckError, TabRError

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5


class _EngineState:
    def __init__(self):
        self.dtype = np.dtype(np.float64)
        self.graph: "Graph | None" = None
        self.grad_check_active = False


_state = _EngineState()


def default_dtype() -> np.dtype:
    return _state.dtype


@contextmanager
def precision(dtype: str | np.dtype) -> Iterator[None]:
    """Temporarily change the dtype new tensors are created with."""
    previous = _state.dtype
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def grad_check_mode() -> Iterator[None]:
    """64-bit storage with stochastic primitives forbidden."""
    previous = _state.grad_check_active
    _state.grad_check_active = True
    try:
        with precision(np.float64):
            yield
    finally:
        _state.grad_check_active = previous


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording into the active graph."""
    previous = _state.graph
    _state.graph = None
    try:
        yield
    finally:
        _state.graph = previous


class Tensor:
    """Immutable n-dimensional array with an optional gradient flag."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None, dtype=None):
        array = np.array(data, dtype=dtype or _state.dtype)
        array.flags.writeable = False
        self.data = array
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False, name: str | None = None) -> "Tensor":
        tensor = cls.__new__(cls)
        if array.flags.writeable:
            array.flags.writeable = False
        tensor.data = array
        tensor.requires_grad = requires_grad
        tensor.name = name
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f", name='{self.name}'" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


@dataclass
class Node:
    kind: str
    inputs: tuple[int | None, ...]
    operands: tuple[np.ndarray, ...]
    output: Tensor
    ctx: Any = None
    attrs: dict = field(default_factory=dict)


class Graph:
    """Ordered record of the primitives applied during one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._ids: dict[int, int] = {}
        self._previous: Graph | None = None

    def __enter__(self) -> "Graph":
        self._previous = _state.graph
        _state.graph = self
        return self

    def __exit__(self, *exc) -> None:
        _state.graph = self._previous
        self._previous = None

    def __len__(self) -> int:
        return len(self.nodes)

    def node_id(self, tensor: Tensor) -> int:
        try:
            return self._ids[id(tensor)]
        except KeyError:
            raise TabRError(f"{tensor!r} was not produced inside this graph") from None

    def _input_id(self, tensor: Tensor) -> int | None:
        if not tensor.requires_grad:
            return None
        node_id = self._ids.get(id(tensor))
        if node_id is None:
            node_id = self._append(Node("leaf", (), (), tensor))
        return node_id

    def _append(self, node: Node) -> int:
        node_id = len(self.nodes)
        self.nodes.append(node)
        self._ids[id(node.output)] = node_id
        return node_id

    def record(self, kind: str, operands: Sequence[Tensor], output: Tensor, ctx: Any, attrs: dict) -> int:
        inputs = tuple(self._input_id(operand) for operand in operands)
        return self._append(Node(kind, inputs, tuple(op.data for op in operands), output, ctx, attrs))


@dataclass(frozen=True)
class Primitive:
    kind: str
    forward: Callable[[list[np.ndarray], dict], tuple[np.ndarray, Any]]
    backward: Callable[[np.ndarray, Node], list[np.ndarray | None]]
    arity: int | None


PRIMITIVES: dict[str, Primitive] = {}


def _register(kind: str, forward, backward, arity: int | None) -> None:
    PRIMITIVES[kind] = Primitive(kind, forward, backward, arity)


def apply_primitive(kind: str, operands: Sequence[Tensor | np.ndarray], attrs: dict | None = None) -> Tensor:
    """Evaluate one primitive and record it in the active graph when needed."""
    primitive = PRIMITIVES.get(kind)
    if primitive is None:
        raise ConfigError(f"Unknown primitive: {kind}")
    attrs = attrs or {}
    tensors = [op if isinstance(op, Tensor) else Tensor(op) for op in operands]
    if primitive.arity is not None and len(tensors) != primitive.arity:
        raise ConfigError(f"{kind} expects {primitive.arity} operands, got {len(tensors)}")
    output, ctx = primitive.forward([t.data for t in tensors], attrs)
    graph = _state.graph
    track = graph is not None and any(t.requires_grad for t in tensors)
    result = Tensor.wrap(np.asarray(output), requires_grad=track)
    if track:
        graph.record(kind, tensors, result, ctx, attrs)
    return result


def backward(graph: Graph, loss: Tensor, params: dict[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """
    Propagate d(loss)/d(node) back through the graph.

    Returns gradients keyed by parameter name. When ``params`` is given, every
    parameter in it gets an entry; the ones the loss does not reach get zeros.
    """
    if loss.data.size != 1:
        raise ConfigError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss_id = graph.node_id(loss)
    pending: dict[int, np.ndarray] = {loss_id: np.ones_like(loss.data)}
    leaf_grads: dict[str, np.ndarray] = {}

    for node_id in range(loss_id, -1, -1):
        grad = pending.pop(node_id, None)
        if grad is None:
            continue
        node = graph.nodes[node_id]
        if node.kind == "leaf":
            key = node.output.name or f"leaf:{node_id}"
            leaf_grads[key] = leaf_grads[key] + grad if key in leaf_grads else grad
            continue
        input_grads = PRIMITIVES[node.kind].backward(grad, node)
        for input_id, input_grad in zip(node.inputs, input_grads):
            if input_id is None or input_grad is None:
                continue
            if input_id in pending:
                pending[input_id] = pending[input_id] + input_grad
            else:
                pending[input_id] = input_grad

    grads = {key: np.array(value) for key, value in leaf_grads.items()}
    if params is not None:
        for name, param in params.items():
            if name not in grads:
                grads[name] = np.zeros_like(param.data)
    return grads


# ---------------------------------------------------------------------------
# primitive kernels

def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ConfigError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


def _matmul_fwd(xs, attrs):
    a, w = xs
    if w.ndim != 2 or a.ndim < 1 or a.shape[-1] != w.shape[0]:
        raise ConfigError(f"matmul: cannot multiply {a.shape} by {w.shape}")
    return a @ w, None


def _matmul_bwd(g, node):
    a, w = node.operands
    n, k = w.shape
    return [g @ w.T, a.reshape(-1, n).T @ g.reshape(-1, k)]


def _bias_add_fwd(xs, attrs):
    x, b = xs
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ConfigError(f"bias_add: bias {b.shape} does not match {x.shape}")
    return x + b, None


def _bias_add_bwd(g, node):
    return [g, g.reshape(-1, g.shape[-1]).sum(axis=0)]


def _add_fwd(xs, attrs):
    _broadcast_shape("add", *xs)
    return xs[0] + xs[1], None


def _add_bwd(g, node):
    a, b = node.operands
    return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]


def _sub_fwd(xs, attrs):
    _broadcast_shape("sub", *xs)
    return xs[0] - xs[1], None


def _sub_bwd(g, node):
    a, b = node.operands
    return [_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)]


def _mul_fwd(xs, attrs):
    _broadcast_shape("mul", *xs)
    return xs[0] * xs[1], None


def _mul_bwd(g, node):
    a, b = node.operands
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


def _scale_fwd(xs, attrs):
    return xs[0] * attrs["factor"], None


def _scale_bwd(g, node):
    return [g * node.attrs["factor"]]


def _relu_fwd(xs, attrs):
    return np.maximum(xs[0], 0), None


def _relu_bwd(g, node):
    return [g * (node.operands[0] > 0)]


def _cos_fwd(xs, attrs):
    return np.cos(xs[0]), None


def _cos_bwd(g, node):
    return [-g * np.sin(node.operands[0])]


def _sin_fwd(xs, attrs):
    return np.sin(xs[0]), None


def _sin_bwd(g, node):
    return [g * np.cos(node.operands[0])]


def _layer_norm_fwd(xs, attrs):
    x, gain, bias = xs
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ConfigError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} do not match width {width}")
    eps = attrs.get("eps", LAYER_NORM_EPS)
    centered = x - x.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normalized = centered * rstd
    return normalized * gain + bias, (normalized, rstd)


def _layer_norm_bwd(g, node):
    _, gain, _ = node.operands
    normalized, rstd = node.ctx
    width = gain.shape[0]
    g_norm = g * gain
    grad_x = rstd * (
        g_norm
        - g_norm.mean(axis=-1, keepdims=True)
        - normalized * (g_norm * normalized).mean(axis=-1, keepdims=True)
    )
    grad_gain = (g * normalized).reshape(-1, width).sum(axis=0)
    grad_bias = g.reshape(-1, width).sum(axis=0)
    return [grad_x, grad_gain, grad_bias]


def _softmax_fwd(xs, attrs):
    shifted = xs[0] - xs[0].max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True), None


def _softmax_bwd(g, node):
    y = node.output.data
    return [y * (g - (g * y).sum(axis=-1, keepdims=True))]


def _dropout_fwd(xs, attrs):
    rate = attrs.get("rate", 0.0)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not attrs.get("training", False) or rate == 0.0:
        return xs[0], None
    if _state.grad_check_active:
        raise GradCheckError("dropout must be disabled while checking gradients")
    rng = attrs.get("rng")
    if rng is None:
        raise ConfigError("dropout in training mode needs an RNG stream")
    mask = ((rng.random(xs[0].shape) >= rate) / (1.0 - rate)).astype(xs[0].dtype)
    return xs[0] * mask, mask


def _dropout_bwd(g, node):
    return [g if node.ctx is None else g * node.ctx]


def _embedding_fwd(xs, attrs):
    table = xs[0]
    indices = np.asarray(attrs["indices"])
    if table.ndim != 2:
        raise ConfigError(f"embedding: table must be 2-D, got {table.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise ConfigError(f"embedding: indices out of range for {table.shape[0]} rows")
    return table[indices], None


def _embedding_bwd(g, node):
    table = node.operands[0]
    grad = np.zeros_like(table)
    np.add.at(grad, np.asarray(node.attrs["indices"]).ravel(), g.reshape(-1, table.shape[1]))
    return [grad]


def _pairwise_sq_l2_fwd(xs, attrs):
    a, b = xs
    if a.ndim != 2:
        raise ConfigError(f"pairwise_sq_l2: queries must be 2-D, got {a.shape}")
    if b.ndim == 2 and b.shape[1] == a.shape[1]:
        sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
        return np.maximum(sq, 0), None
    if b.ndim == 3 and b.shape[0] == a.shape[0] and b.shape[2] == a.shape[1]:
        diff = a[:, None, :] - b
        return (diff * diff).sum(axis=-1), diff
    raise ConfigError(f"pairwise_sq_l2: cannot compare {a.shape} with {b.shape}")


def _pairwise_sq_l2_bwd(g, node):
    a, b = node.operands
    if node.ctx is None:
        grad_a = 2.0 * (g.sum(axis=1)[:, None] * a - g @ b)
        grad_b = 2.0 * (g.sum(axis=0)[:, None] * b - g.T @ a)
        return [grad_a, grad_b]
    weighted = 2.0 * g[..., None] * node.ctx
    return [weighted.sum(axis=1), -weighted]


def _sum_fwd(xs, attrs):
    return xs[0].sum(axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)), None


def _expand_reduced(g, node):
    x = node.operands[0]
    axis = node.attrs.get("axis")
    if axis is not None and not node.attrs.get("keepdims", False):
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, x.shape)


def _sum_bwd(g, node):
    return [_expand_reduced(g, node)]


def _mean_fwd(xs, attrs):
    return xs[0].mean(axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)), None


def _mean_bwd(g, node):
    x = node.operands[0]
    return [_expand_reduced(g, node) * (node.output.data.size / x.size)]


def _mse_loss_fwd(xs, attrs):
    pred, target = xs
    if pred.shape != target.shape:
        raise ConfigError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return np.mean(diff * diff), diff


def _mse_loss_bwd(g, node):
    diff = node.ctx
    grad = g * 2.0 * diff / diff.size
    return [grad, -grad]


def _cross_entropy_fwd(xs, attrs):
    logits = xs[0]
    targets = np.asarray(attrs["targets"], dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ConfigError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ConfigError("cross_entropy: target class out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(logits.shape[0])
    return -log_probs[rows, targets].mean(), np.exp(log_probs)


def _cross_entropy_bwd(g, node):
    probs = node.ctx.copy()
    targets = np.asarray(node.attrs["targets"], dtype=np.int64)
    probs[np.arange(probs.shape[0]), targets] -= 1.0
    return [g * probs / probs.shape[0]]


def _bce_with_logits_fwd(xs, attrs):
    logits = xs[0]
    targets = np.asarray(attrs["targets"], dtype=logits.dtype)
    if logits.shape != targets.shape:
        raise ConfigError(f"bce_with_logits: logits {logits.shape} vs targets {targets.shape}")
    losses = np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return losses.mean(), targets


def _bce_with_logits_bwd(g, node):
    logits = node.operands[0]
    return [g * (expit(logits) - node.ctx) / logits.size]


def _concat_fwd(xs, attrs):
    try:
        return np.concatenate(xs, axis=attrs.get("axis", 0)), None
    except ValueError as e:
        raise ConfigError(f"concat: {e}") from None


def _concat_bwd(g, node):
    axis = node.attrs.get("axis", 0)
    sizes = [x.shape[axis] for x in node.operands]
    return np.split(g, np.cumsum(sizes)[:-1], axis=axis)


def _reshape_fwd(xs, attrs):
    try:
        return xs[0].reshape(attrs["shape"]), None
    except ValueError as e:
        raise ConfigError(f"reshape: {e}") from None


def _reshape_bwd(g, node):
    return [g.reshape(node.operands[0].shape)]


def _feature_matmul_fwd(xs, attrs):
    x, w = xs
    if x.ndim != 3 or w.ndim != 3 or x.shape[1:] != w.shape[:2]:
        raise ConfigError(f"feature_matmul: cannot apply {w.shape} to {x.shape}")
    return np.einsum("npa,pab->npb", x, w), None


def _feature_matmul_bwd(g, node):
    x, w = node.operands
    return [np.einsum("npb,pab->npa", g, w), np.einsum("npa,npb->pab", x, g)]


_register("matmul", _matmul_fwd, _matmul_bwd, 2)
_register("bias_add", _bias_add_fwd, _bias_add_bwd, 2)
_register("add", _add_fwd, _add_bwd, 2)
_register("sub", _sub_fwd, _sub_bwd, 2)
_register("mul", _mul_fwd, _mul_bwd, 2)
_register("scale", _scale_fwd, _scale_bwd, 1)
_register("relu", _relu_fwd, _relu_bwd, 1)
_register("cos", _cos_fwd, _cos_bwd, 1)
_register("sin", _sin_fwd, _sin_bwd, 1)
_register("layer_norm", _layer_norm_fwd, _layer_norm_bwd, 3)
_register("softmax", _softmax_fwd, _softmax_bwd, 1)
_register("dropout", _dropout_fwd, _dropout_bwd, 1)
_register("embedding", _embedding_fwd, _embedding_bwd, 1)
_register("pairwise_sq_l2", _pairwise_sq_l2_fwd, _pairwise_sq_l2_bwd, 2)
_register("sum", _sum_fwd, _sum_bwd, 1)
_register("mean", _mean_fwd, _mean_bwd, 1)
_register("mse_loss", _mse_loss_fwd, _mse_loss_bwd, 2)
_register("cross_entropy", _cross_entropy_fwd, _cross_entropy_bwd, 1)
_register("bce_with_logits", _bce_with_logits_fwd, _bce_with_logits_bwd, 1)
_register("concat", _concat_fwd, _concat_bwd, None)
_register("reshape", _reshape_fwd, _reshape_bwd, 1)
_register("feature_matmul", _feature_matmul_fwd, _feature_matmul_bwd, 2)


# ---------------------------------------------------------------------------
# functional wrappers

def matmul(a, w) -> Tensor:
    return apply_primitive("matmul", [a, w])


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else apply_primitive("bias_add", [out, bias])


def add(a, b) -> Tensor:
    return apply_primitive("add", [a, b])


def sub(a, b) -> Tensor:
    return apply_primitive("sub", [a, b])


def mul(a, b) -> Tensor:
    return apply_primitive("mul", [a, b])


def scale(x, factor: float) -> Tensor:
    return apply_primitive("scale", [x], {"factor": factor})


def relu(x) -> Tensor:
    return apply_primitive("relu", [x])


def cos(x) -> Tensor:
    return apply_primitive("cos", [x])


def sin(x) -> Tensor:
    return apply_primitive("sin", [x])


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    return apply_primitive("layer_norm", [x, gain, bias], {"eps": eps})


def softmax(x) -> Tensor:
    return apply_primitive("softmax", [x])


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    return apply_primitive("dropout", [x], {"rate": rate, "rng": rng, "training": training})


def embedding(table, indices) -> Tensor:
    return apply_primitive("embedding", [table], {"indices": np.asarray(indices)})


def pairwise_sq_l2(a, b) -> Tensor:
    return apply_primitive("pairwise_sq_l2", [a, b])


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return apply_primitive("sum", [x], {"axis": axis, "keepdims": keepdims})


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    return apply_primitive("mean", [x], {"axis": axis, "keepdims": keepdims})


def mse_loss(pred, target) -> Tensor:
    return apply_primitive("mse_loss", [pred, target])


def cross_entropy(logits, targets) -> Tensor:
    return apply_primitive("cross_entropy", [logits], {"targets": np.asarray(targets)})


def bce_with_logits(logits, targets) -> Tensor:
    return apply_primitive("bce_with_logits", [logits], {"targets": np.asarray(targets)})


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    return apply_primitive("concat", list(tensors), {"axis": axis})


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    return apply_primitive("reshape", [x], {"shape": tuple(shape)})


def feature_matmul(x, w) -> Tensor:
    return apply_primitive("feature_matmul", [x, w])

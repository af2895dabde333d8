"""
Tensor module for orojar-lab
Dense numpy-backed tensors with reverse-mode automatic differentiation
"""
import contextlib
import contextvars
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

SUPPORTED_DTYPES = {"float32": np.float32, "float64": np.float64}

_DEFAULT_DTYPE: contextvars.ContextVar = contextvars.ContextVar("default_dtype", default=np.float32)
_GRAD_ENABLED: contextvars.ContextVar = contextvars.ContextVar("grad_enabled", default=True)


class ShapeError(ValueError):
    """Exception for operands that violate an op's shape rule"""
    pass


class GraphError(RuntimeError):
    """Exception for invalid backward requests"""
    pass


def default_dtype() -> type:
    """Floating point type used for newly created tensors"""
    return _DEFAULT_DTYPE.get()


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Switch the default tensor precision ("float32" or "float64") for a block.

    Example:
        >>> with precision("float64"):
        ...     Tensor([1.0]).dtype
        dtype('float64')
    """
    if name not in SUPPORTED_DTYPES:
        raise ValueError(f"Unsupported precision: {name} (expected one of {sorted(SUPPORTED_DTYPES)})")
    token = _DEFAULT_DTYPE.set(SUPPORTED_DTYPES[name])
    try:
        yield
    finally:
        _DEFAULT_DTYPE.reset(token)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording for a block"""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


@dataclass(eq=False)
class Node:
    """Graph record for one operation.

    The backward closure holds whatever intermediates the op saved during forward.
    """
    kind: str
    inputs: Tuple["Tensor", ...]
    backward_fn: BackwardFn


class Tensor:
    """Dense n-dimensional array node in a reverse-mode computation graph"""

    # ndarray <op> Tensor defers to the Tensor reflected operators
    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype: Optional[Any] = None):
        self.data: np.ndarray = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def node(self) -> Optional[Node]:
        return self._node

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Arithmetic
    def __add__(self, other: Any) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: Any) -> "Tensor":
        return matmul(self, other)

    def __rmatmul__(self, other: Any) -> "Tensor":
        return matmul(other, self)

    def __getitem__(self, index: Any) -> "Tensor":
        return slice_(self, index)

    # Shape and reductions
    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def flatten(self, start_dim: int = 1) -> "Tensor":
        return reshape(self, self.shape[:start_dim] + (-1,))

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return max_(self, axis=axis, keepdims=keepdims)

    # Elementwise nonlinearities
    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        return leaky_relu(self, slope)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def softplus(self) -> "Tensor":
        return softplus(self)

    def sin(self) -> "Tensor":
        return sin(self)


def tensor(data: ArrayLike, requires_grad: bool = False, dtype: Optional[Any] = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(value: Any, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _result(data: np.ndarray, kind: str, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op output, appending a graph record when any input requires grad"""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out.requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        out._node = Node(kind, tuple(inputs), backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from e


def _binary_operands(kind: str, a: Any, b: Any) -> Tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    a, b = _as_tensor(a, like), _as_tensor(b, like)
    _check_broadcast(kind, a, b)
    return a, b


# ----------------------------------------------------------------------------
# Elementwise arithmetic

def add(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands("add", a, b)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, "add", (a, b), backward_fn)


def sub(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands("sub", a, b)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, "sub", (a, b), backward_fn)


def mul(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands("mul", a, b)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, "mul", (a, b), backward_fn)


def div(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands("div", a, b)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _result(a.data / b.data, "div", (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data ** exponent

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _result(out, "pow", (a,), backward_fn)


# ----------------------------------------------------------------------------
# Linear algebra and shape ops

def matmul(a: Any, b: Any) -> Tensor:
    like = a if isinstance(a, Tensor) else b
    a, b = _as_tensor(a, like), _as_tensor(b, like)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape} ({a.shape[1]} != {b.shape[0]})")

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, "matmul", (a, b), backward_fn)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-D operand, got shape {a.shape}")
    return _result(a.data.T, "transpose", (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot reshape {a.shape} ({a.size} values) into {shape}") from e
    return _result(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def slice_(a: Tensor, index: Any) -> Tensor:
    try:
        out = a.data[index]
    except IndexError as e:
        raise ShapeError(f"slice: index {index!r} is invalid for shape {a.shape}") from e

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out), "slice", (a,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: no operands")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g: np.ndarray) -> List[np.ndarray]:
        return np.split(g, bounds, axis=axis)

    return _result(out, "concat", tensors, backward_fn)


# ----------------------------------------------------------------------------
# Reductions

def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis: Any, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (_expand_reduced(g, a.shape, axis, keepdims),)

    return _result(out, "sum", (a,), backward_fn)


def mean(a: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    axes = range(a.ndim) if axis is None else np.atleast_1d(axis)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (_expand_reduced(g, a.shape, axis, keepdims) / count,)

    return _result(out, "mean", (a,), backward_fn)


def max_(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    peak = a.data.max(axis=axis, keepdims=True)
    # ties share the gradient equally
    mask = (a.data == peak).astype(a.dtype)
    mask /= mask.sum(axis=axis, keepdims=True)
    out = peak if keepdims else np.asarray(a.data.max(axis=axis), dtype=a.dtype)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (_expand_reduced(g, a.shape, axis, keepdims) * mask,)

    return _result(out, "max", (a,), backward_fn)


# ----------------------------------------------------------------------------
# Nonlinearities

def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    positive = a.data > 0
    scale = np.where(positive, 1.0, slope).astype(a.dtype)
    return _result(a.data * scale, "leaky_relu", (a,), lambda g: (g * scale,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form stays finite for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data).astype(a.dtype)
    slope = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, "softplus", (a,), lambda g: (g * slope,))


def sin(a: Tensor) -> Tensor:
    return _result(np.sin(a.data), "sin", (a,), lambda g: (g * np.cos(a.data),))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)"""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} do not match labels {labels.shape}")
    rows = np.arange(logits.shape[0])
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = np.asarray(-log_probs[rows, labels].mean(), dtype=logits.dtype)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        probs = np.exp(log_probs)
        probs[rows, labels] -= 1.0
        return (g * probs / logits.shape[0],)

    return _result(loss, "cross_entropy", (logits,), backward_fn)


# ----------------------------------------------------------------------------
# Convolutions (NCHW layout)

def _conv_output_size(kind: str, size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out <= 0:
        raise ShapeError(f"{kind}: input size {size} too small for kernel {kernel}, stride {stride}, padding {padding}")
    return out


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (B, C, H, W) with weight (O, C, k, k)"""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels but weight expects {weight.shape[1]}")
    k = weight.shape[2]
    h_out = _conv_output_size("conv2d", x.shape[2], k, stride, padding)
    w_out = _conv_output_size("conv2d", x.shape[3], k, stride, padding)
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.pad(x.data, pad)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_xp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                grad_xp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += contrib
        grad_x = grad_xp[:, :, padding:padding + x.shape[2], padding:padding + x.shape[3]]
        return grad_x, grad_w

    return _result(np.ascontiguousarray(out), "conv2d", (x, weight), backward_fn)


def conv2d_transpose(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of x (B, C, H, W) with weight (C, O, k, k).

    Output spatial size is (H - 1) * stride - 2 * padding + k.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d_transpose: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"conv2d_transpose: input has {x.shape[1]} channels but weight expects {weight.shape[0]}")
    batch, _, height, width = x.shape
    k = weight.shape[2]
    full_h = (height - 1) * stride + k
    full_w = (width - 1) * stride + k
    if full_h - 2 * padding <= 0 or full_w - 2 * padding <= 0:
        raise ShapeError(f"conv2d_transpose: padding {padding} leaves no output for input {x.shape}")
    full = np.zeros((batch, weight.shape[1], full_h, full_w), dtype=np.result_type(x.data, weight.data))
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(x.data, weight.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            full[:, :, i:i + stride * height:stride, j:j + stride * width:stride] += contrib
    out = full[:, :, padding:full_h - padding, padding:full_w - padding]

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_full = np.zeros_like(full)
        grad_full[:, :, padding:full_h - padding, padding:full_w - padding] = g
        grad_x = np.zeros_like(x.data)
        grad_w = np.zeros_like(weight.data)
        for i in range(k):
            for j in range(k):
                window = grad_full[:, :, i:i + stride * height:stride, j:j + stride * width:stride]
                grad_x += np.tensordot(window, weight.data[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
                grad_w[:, :, i, j] = np.tensordot(x.data, window, axes=([0, 2, 3], [0, 2, 3]))
        return grad_x, grad_w

    return _result(np.ascontiguousarray(out), "conv2d_transpose", (x, weight), backward_fn)


# ----------------------------------------------------------------------------
# Normalization

def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mean_: Optional[Tensor] = None,
    var: Optional[Tensor] = None,
    eps: float = 1e-5,
) -> Tuple[Tensor, Tensor, Tensor]:
    """Normalize over every axis except channels (axis 1).

    When mean_/var are omitted the batch statistics are used. Returns (y, mean, var) so
    callers can share the statistics with further passes.
    """
    if x.ndim not in (2, 4):
        raise ShapeError(f"batchnorm: expected a 2-D or 4-D input, got {x.shape}")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm: affine parameters {gamma.shape}/{beta.shape} do not match {x.shape[1]} channels")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    stat_shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    if mean_ is None or var is None:
        mean_ = x.mean(axis=axes, keepdims=True)
        centered = x - mean_
        var = (centered * centered).mean(axis=axes, keepdims=True)
    else:
        centered = x - mean_
    scale = (var + eps) ** -0.5
    y = centered * scale * gamma.reshape(stat_shape) + beta.reshape(stat_shape)
    return y, mean_, var


# ----------------------------------------------------------------------------
# Dispatch and backward

_FORWARD_OPS: Dict[str, Callable[..., Any]] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "conv2d": conv2d,
    "conv2d_transpose": conv2d_transpose,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "batchnorm": batchnorm,
    "reshape": reshape,
    "slice": slice_,
}


def forward_op(kind: str, *inputs: Any, **params: Any) -> Any:
    """Apply an op by name, e.g. forward_op("conv2d", x, w, stride=2, padding=1)"""
    if (op := _FORWARD_OPS.get(kind)) is None:
        raise ValueError(f"Unknown op kind: {kind}")
    return op(*inputs, **params)


def graph_order(root: Tensor) -> List[Tensor]:
    """Tensors reachable from root that require grad, inputs before consumers"""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        current, expanded = stack.pop()
        if expanded:
            order.append(current)
            continue
        if id(current) in visited:
            continue
        visited.add(id(current))
        stack.append((current, True))
        if current._node is not None:
            for parent in reversed(current._node.inputs):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into .grad of every requires_grad leaf"""
    if root.size != 1:
        raise GraphError(f"backward requires a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        logger.debug("backward called on a constant graph; nothing to do")
        return

    grads: Dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for current in reversed(graph_order(root)):
        g = grads.pop(id(current), None)
        if g is None:
            continue
        if current._node is None:
            current.grad = np.array(g, copy=True) if current.grad is None else current.grad + g
            continue
        for parent, parent_grad in zip(current._node.inputs, current._node.backward_fn(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def grad(root: Tensor, leaves: Sequence[Tensor]) -> List[np.ndarray]:
    """Gradients of a scalar root with respect to the given leaves.

    Unreachable leaves get zeros. Existing .grad values are left untouched.
    """
    saved = [leaf.grad for leaf in leaves]
    for leaf in leaves:
        leaf.grad = None
    try:
        backward(root)
        return [
            leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
            for leaf in leaves
        ]
    finally:
        for leaf, previous in zip(leaves, saved):
            leaf.grad = previous

"""
Created on 2026-10-18

@author: wf

Reverse-mode differentiable dense arrays on top of numpy.

Every primitive creates a new Tensor that remembers its parents and a
backward closure mapping the output gradient to one gradient per parent.
Node ids increase monotonically, so sorting the reachable nodes by id
gives a topological order of the graph.
"""

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}
BCE_EPS = 1e-7

_node_ids = itertools.count(1)
_grad_mode = threading.local()


class TensorError(Exception):
    """
    base class for errors of the differentiable array substrate
    """


class ShapeError(TensorError, ValueError):
    """
    operands with incompatible shapes
    """


class NonFiniteError(TensorError, FloatingPointError):
    """
    a primitive produced NaN or Inf
    """


class DTypeError(TensorError, TypeError):
    """
    f32 and f64 tensors mixed in one graph
    """


class MaskError(TensorError, ValueError):
    """
    softmax over a row where every key is masked
    """


class NonDeterministicError(TensorError, RuntimeError):
    """
    a loss function returned different values for identical parameters
    """


def is_grad_enabled() -> bool:
    return getattr(_grad_mode, "enabled", True)


@contextmanager
def no_grad():
    """
    evaluate without recording a graph - for frozen parameter forward passes
    """
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


def resolve_dtype(dtype: Union[str, np.dtype, type]) -> np.dtype:
    """
    map "f32"/"f64" (or a numpy float dtype) to the numpy dtype
    """
    if isinstance(dtype, str) and dtype in DTYPES:
        return np.dtype(DTYPES[dtype])
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise DTypeError(f"unsupported dtype {dtype}: use f32 or f64")
    return resolved


class Tensor:
    """
    a dense array node of the computation graph

    Attributes:
        data(np.ndarray): the row-major values
        requires_grad(bool): True if gradients flow to this node
        name(str): parameter name for trainable leaves
        node_id(int): graph identity, None for detached constants
    """

    __slots__ = ("data", "requires_grad", "name", "node_id", "op", "parents", "backward_fn")

    def __init__(
        self,
        data,
        dtype=None,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float32)
        else:
            arr = np.asarray(data, dtype=resolve_dtype(dtype))
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_node_ids) if requires_grad else None
        self.op = "leaf"
        self.parents: Tuple["Tensor", ...] = ()
        self.backward_fn: Optional[Callable] = None

    @classmethod
    def parameter(cls, data, name: str, dtype="f32") -> "Tensor":
        """
        create a trainable leaf
        """
        return cls(np.array(data, dtype=resolve_dtype(dtype)), requires_grad=True, name=name)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


TensorLike = Union[Tensor, np.ndarray, float, int]


def _as_tensor(value: TensorLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        if like is not None and value.dtype != like.dtype:
            raise DTypeError(f"cannot mix {value.dtype} and {like.dtype} in one graph")
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None else value)


def _pair(a: TensorLike, b: TensorLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


def _result(
    op: str,
    out: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable,
    check_finite: bool = True,
) -> Tensor:
    if check_finite and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op}: non-finite output")
    dtype = parents[0].dtype if parents else out.dtype
    needs_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    result = Tensor(np.asarray(out, dtype=dtype), requires_grad=needs_grad)
    result.op = op
    if needs_grad:
        result.parents = tuple(parents)
        result.backward_fn = backward_fn
    return result


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """
    sum a broadcast gradient back down to the operand shape
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, *shapes) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as ex:
        raise ShapeError(f"{op}: shapes {' and '.join(str(s) for s in shapes)} do not broadcast") from ex


# elementwise arithmetic


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a.shape, b.shape)
    return _result(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a.shape, b.shape)
    return _result(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a.shape, b.shape)
    return _result(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a.shape, b.shape)
    return _result(
        "div",
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


# linear algebra and shape manipulation


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """
    batched matrix product with broadcasting over leading dims
    """
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands need rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ {a.shape} @ {b.shape}")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result("matmul", np.matmul(a.data, b.data), (a, b), backward)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _result(
        "transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),)
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as ex:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from ex
    return _result("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no tensors given")
    first = tensors[0]
    tensors = [first] + [_as_tensor(t, first) for t in tensors[1:]]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as ex:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: shapes {shapes} incompatible along axis {axis}") from ex
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result("concat", out, tensors, backward)


def getitem(a: Tensor, key) -> Tensor:
    """
    slicing and integer-array gathering
    """
    try:
        out = a.data[key]
    except IndexError as ex:
        raise ShapeError(f"index {key} invalid for shape {a.shape}") from ex

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)

    return _result("getitem", np.array(out), (a,), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """
    look up rows of table for the integer ids (any shape)
    """
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be rank 2, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids out of range [0, {table.shape[0]})")

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _result("embedding", table.data[ids], (table,), backward)


# reductions


def _restore_axes(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _result(
        "sum", out, (a,), lambda g: (np.array(_restore_axes(g, a.shape, axis, keepdims)),)
    )


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size // max(np.size(out), 1)

    def backward(g):
        return (np.array(_restore_axes(g, a.shape, axis, keepdims)) / count,)

    return _result("mean", out, (a,), backward)


# activations and normalization


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result("relu", np.where(mask, a.data, 0), (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """
    tanh approximation of GELU as used in GPT-2
    """
    x = a.data
    c = np.sqrt(2.0 / np.pi)
    inner = c * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = c * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return _result("gelu", out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a: Tensor) -> Tensor:
    """
    softmax over the last dimension; masked keys carry -inf
    """
    if np.any(np.all(np.isneginf(a.data), axis=-1)):
        raise MaskError(f"softmax: fully masked row in input of shape {a.shape}")
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _result("softmax", out, (a,), backward)


def masked_fill(a: Tensor, mask, value: float = -np.inf) -> Tensor:
    """
    replace entries where mask is True by value (additive -inf before softmax)
    """
    mask = np.asarray(mask, dtype=bool)
    _broadcast_shape("masked_fill", a.shape, mask.shape)
    keep = ~mask
    out = np.where(mask, value, a.data)
    return _result(
        "masked_fill",
        out,
        (a,),
        lambda g: (_unbroadcast(g * keep, a.shape),),
        check_finite=False,
    )


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """
    normalize over the last dim with learnable scale and shift
    """
    if scale.shape != (x.shape[-1],) or shift.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm: scale {scale.shape}/shift {shift.shape} must match last dim of {x.shape}"
        )
    scale = _as_tensor(scale, x)
    shift = _as_tensor(shift, x)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    out = xhat * scale.data + shift.data
    n = x.shape[-1]

    def backward(g):
        gxhat = g * scale.data
        gx = (
            rstd
            / n
            * (
                n * gxhat
                - gxhat.sum(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
            )
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result("layer_norm", out, (x, scale, shift), backward)


# loss primitives


def smooth_l1(a: Tensor, beta: float = 1.0) -> Tensor:
    """
    elementwise Huber: 0.5 x^2 / beta inside |x| < beta, |x| - 0.5 beta outside
    """
    x = a.data
    inside = np.abs(x) < beta
    out = np.where(inside, 0.5 * x * x / beta, np.abs(x) - 0.5 * beta)
    return _result(
        "smooth_l1", out, (a,), lambda g: (g * np.where(inside, x / beta, np.sign(x)),)
    )


def bce(p: TensorLike, y: TensorLike, eps: float = BCE_EPS) -> Tensor:
    """
    elementwise binary cross entropy of probabilities p against targets y,
    p clamped to [eps, 1-eps]
    """
    p, y = _pair(p, y)
    _broadcast_shape("bce", p.shape, y.shape)
    pc = np.clip(p.data, eps, 1.0 - eps)
    log_p = np.log(pc)
    log_q = np.log(1.0 - pc)
    out = -(y.data * log_p + (1.0 - y.data) * log_q)
    inside = (p.data >= eps) & (p.data <= 1.0 - eps)

    def backward(g):
        gp = g * (-y.data / pc + (1.0 - y.data) / (1.0 - pc)) * inside
        gy = g * -(log_p - log_q)
        return _unbroadcast(gp, p.shape), _unbroadcast(gy, y.shape)

    return _result("bce", out, (p, y), backward)


# graph and gradients


@dataclass
class OpRecord:
    """
    one node of the traced graph
    """

    op: str
    input_ids: Tuple[int, ...]
    output_id: int


class Graph:
    """
    the op records reachable from a loss, in topological order
    """

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, loss: Tensor) -> "Graph":
        """
        collect every recorded node reachable from loss
        """
        seen: Dict[int, Tensor] = {}
        stack = [loss] if loss.requires_grad else []
        while stack:
            node = stack.pop()
            if node.node_id in seen:
                continue
            seen[node.node_id] = node
            stack.extend(p for p in node.parents if p.requires_grad)
        nodes = sorted(seen.values(), key=lambda node: node.node_id)
        return cls(nodes)

    @property
    def records(self) -> List[OpRecord]:
        return [
            OpRecord(
                node.op,
                tuple(p.node_id for p in node.parents if p.requires_grad),
                node.node_id,
            )
            for node in self.nodes
        ]

    def gradients(self, loss: Tensor) -> Dict[int, np.ndarray]:
        """
        run reverse accumulation from loss

        Returns:
            dict: node id to gradient array
        """
        grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            grad = grads.get(node.node_id)
            if grad is None or node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(grad)
            for parent, parent_grad in zip(node.parents, parent_grads):
                if not parent.requires_grad or parent_grad is None:
                    continue
                if parent_grad.shape != parent.shape:
                    parent_grad = np.reshape(parent_grad, parent.shape)
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + parent_grad
                else:
                    grads[parent.node_id] = np.array(parent_grad, dtype=parent.dtype)
        return grads


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    """
    gradients of a scalar loss with respect to the named parameters

    Args:
        loss: a scalar tensor
        params: the trainable parameters by name

    Returns:
        dict: parameter name to gradient array of the parameter's shape,
        zeros for parameters the loss does not depend on
    """
    if loss.shape != ():
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads = Graph.trace(loss).gradients(loss) if loss.requires_grad else {}
    result = {}
    for name, param in params.items():
        grad = grads.get(param.node_id) if param.node_id is not None else None
        result[name] = grad if grad is not None else np.zeros_like(param.data)
    return result


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-4,
) -> float:
    """
    compare reverse-mode gradients against central finite differences

    Args:
        loss_fn: deterministic function building the scalar loss from params
        params: f64 parameters, perturbed in place entry by entry
        eps: finite difference step in [1e-6, 1e-3]

    Returns:
        float: max over all entries of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"gradcheck: eps {eps} outside [1e-6, 1e-3]")
    for name, param in params.items():
        if param.dtype != np.float64:
            raise DTypeError(f"gradcheck: parameter {name} is {param.dtype}, need f64")
    if not params:
        return 0.0
    loss = loss_fn()
    with no_grad():
        repeat = loss_fn()
    if loss.data.tobytes() != repeat.data.tobytes():
        raise NonDeterministicError(
            f"gradcheck: loss_fn returned {loss.item()!r} then {repeat.item()!r}"
        )
    analytic = backward(loss, params)
    worst = 0.0
    with no_grad():
        for name, param in params.items():
            grad = analytic[name]
            for index in np.ndindex(param.shape):
                original = param.data[index]
                param.data[index] = original + eps
                plus = loss_fn().item()
                param.data[index] = original - eps
                minus = loss_fn().item()
                param.data[index] = original
                numeric = (plus - minus) / (2 * eps)
                g = float(grad[index])
                error = abs(g - numeric) / max(abs(g), abs(numeric), 1e-8)
                worst = max(worst, error)
    return worst

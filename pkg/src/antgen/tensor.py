"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable op records its parents and a backward closure on the
output tensor. Backward closures are themselves written with tensor ops, so
gradients can be differentiated again (``create_graph=True``), which the
Lipschitz penalty of the critic needs.

Nodes carry a monotonically increasing sequence number. Parents are always
created before their children, so visiting reachable nodes in decreasing
sequence order is a valid reverse topological order.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "Tensor",
    "ShapeError",
    "tensor",
    "zeros",
    "ones",
    "no_grad",
    "enable_grad",
    "is_grad_enabled",
    "precision",
    "get_default_dtype",
    "grad",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "stack",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "erf",
    "gelu",
    "relu",
    "softmax",
    "log_softmax",
    "sum",
    "mean",
    "broadcast_to",
    "sum_to",
    "embedding",
    "dropout",
    "dropout_mask",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


_state = {"grad": True, "dtype": np.dtype(np.float32)}
_seq = itertools.count()


def is_grad_enabled() -> bool:
    return _state["grad"]


@contextlib.contextmanager
def _grad_mode(flag: bool):
    prev = _state["grad"]
    _state["grad"] = flag
    try:
        yield
    finally:
        _state["grad"] = prev


def no_grad():
    """Context manager that stops ops from being recorded."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


def get_default_dtype() -> np.dtype:
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


class Tensor:
    """An n-dimensional float array that optionally participates in autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "_seq", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        dtype = np.dtype(dtype) if dtype is not None else None
        arr = np.asarray(data)
        if dtype is None:
            dtype = _state["dtype"]
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._seq = next(_seq)

    # -- basic protocol ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ---------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        return transpose(self, axes or None)

    def exp(self) -> Tensor:
        return exp(self)

    def log(self) -> Tensor:
        return log(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad, dtype=dtype)


def ones(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _state["dtype"]
    return Tensor(x, dtype=dtype)


def _wrap(data: np.ndarray, parents: tuple, backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_seq)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._op = op
    return out


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return data


def _binary(fn, a: Tensor, b: Tensor, op: str) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- broadcasting helpers ---------------------------------------------------

def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``x`` down to ``shape``, undoing numpy broadcasting."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True, dtype=np.float64).astype(x.dtype, copy=False)
    data = data.reshape(shape)
    src_shape = x.shape

    def backward(g):
        return (broadcast_to(g, src_shape),)

    return _wrap(data, (x,), backward, "sum_to")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        data = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    src_shape = x.shape

    def backward(g):
        return (sum_to(g, src_shape),)

    return _wrap(data, (x,), backward, "broadcast_to")


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def backward(g):
        return sum_to(g, sa), sum_to(g, sb)

    return _wrap(_binary(np.add, a, b, "add"), (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def backward(g):
        return sum_to(g, sa), sum_to(neg(g), sb)

    return _wrap(_binary(np.subtract, a, b, "sub"), (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = sum_to(mul(g, b), sa) if a.requires_grad else None
        gb = sum_to(mul(g, a), sb) if b.requires_grad else None
        return ga, gb

    return _wrap(_binary(np.multiply, a, b, "mul"), (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: divisor contains zeros")
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = sum_to(div(g, b), sa) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), sb) if b.requires_grad else None
        return ga, gb

    return _wrap(_binary(np.divide, a, b, "div"), (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (neg(g),)

    return _wrap(-a.data, (a,), backward, "neg")


# -- linear algebra and shape ops -------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching semantics over leading axes."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = sum_to(matmul(g, swapaxes(b)), sa) if a.requires_grad else None
        gb = sum_to(matmul(swapaxes(a), g), sb) if b.requires_grad else None
        return ga, gb

    return _wrap(data, (a, b), backward, "matmul")


def swapaxes(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: invalid axes {axes} for shape {a.shape}")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (transpose(g, inverse),)

    return _wrap(a.data.transpose(axes), (a,), backward, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} into {tuple(shape)}") from None

    def backward(g):
        return (reshape(g, src),)

    return _wrap(data, (a,), backward, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(int(lo), int(hi))
            grads.append(_getitem(g, tuple(idx)))
        return tuple(grads)

    return _wrap(data, tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        ax = axis % (len(shape) + 1)
        shape.insert(ax, 1)
        expanded.append(reshape(t, shape))
    return concat(expanded, axis=axis)


def _getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    data = a.data[index]
    if not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=a.dtype)
    src = a.shape

    def backward(g):
        return (_index_add(g, index, src),)

    return _wrap(np.ascontiguousarray(data), (a,), backward, "slice")


def _index_add(g: Tensor, index, shape: tuple[int, ...]) -> Tensor:
    """Scatter ``g`` into zeros of ``shape`` at ``index`` (adjoint of indexing)."""
    data = np.zeros(shape, dtype=g.dtype)
    np.add.at(data, index, g.data)

    def backward(gg):
        return (_getitem(gg, index),)

    return _wrap(data, (g,), backward, "index_add")


def embedding(weight: Tensor, ids) -> Tensor:
    """Gather rows of ``weight`` for integer ``ids`` of any shape."""
    ids = np.asarray(ids.data if isinstance(ids, Tensor) else ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding: ids must lie in [0, {weight.shape[0]}), got range [{ids.min()}, {ids.max()}]")
    return _getitem(weight, ids)


# -- elementwise nonlinearities ---------------------------------------------

def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        raw = np.exp(a.data)
    data = _check_finite(raw, "exp")
    out = None

    def backward(g):
        return (mul(g, out),)

    out = _wrap(data, (a,), backward, "exp")
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log: input must be strictly positive")

    def backward(g):
        return (div(g, a),)

    return _wrap(np.log(a.data), (a,), backward, "log")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise ValueError("sqrt: input must be non-negative")
    out = None

    def backward(g):
        return (div(g, mul(out, 2.0)),)

    out = _wrap(np.sqrt(a.data), (a,), backward, "sqrt")
    return out


def tanh(a: Tensor) -> Tensor:
    out = None

    def backward(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = _wrap(np.tanh(a.data), (a,), backward, "tanh")
    return out


_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def erf(a: Tensor) -> Tensor:
    def backward(g):
        return (mul(g, mul(exp(neg(mul(a, a))), _TWO_OVER_SQRT_PI)),)

    return _wrap(special.erf(a.data).astype(a.dtype, copy=False), (a,), backward, "erf")


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with Phi the standard normal CDF."""
    cdf = 0.5 * (1.0 + special.erf(a.data * _INV_SQRT2))
    data = (a.data * cdf).astype(a.dtype, copy=False)

    def backward(g):
        phi = mul(exp(mul(mul(a, a), -0.5)), _INV_SQRT_2PI)
        big_phi = mul(add(erf(mul(a, _INV_SQRT2)), 1.0), 0.5)
        return (mul(g, add(big_phi, mul(a, phi))),)

    return _wrap(data, (a,), backward, "gelu")


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(a.dtype)

    def backward(g):
        return (mul(g, Tensor(mask, dtype=a.dtype)),)

    return _wrap(a.data * mask, (a,), backward, "relu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(a.dtype)
    out = None

    def backward(g):
        dot = sum(mul(g, out), axis=axis, keepdims=True)
        return (mul(out, sub(g, dot)),)

    out = _wrap(data.astype(a.dtype, copy=False), (a,), backward, "softmax")
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"log_softmax: axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True, dtype=np.float64)).astype(a.dtype)
    data = shifted - lse

    def backward(g):
        probs = softmax(a, axis=axis)
        return (sub(g, mul(probs, sum(g, axis=axis, keepdims=True))),)

    return _wrap(data, (a,), backward, "log_softmax")


# -- reductions --------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    src = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(src))

    def backward(g):
        return (broadcast_to(reshape(g, kept), src),)

    return _wrap(np.asarray(data), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


# -- dropout -----------------------------------------------------------------

def dropout_mask(shape, p: float, rng: np.random.Generator, dtype=None) -> np.ndarray:
    """Inverted-dropout Bernoulli mask, already scaled by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    dtype = dtype or _state["dtype"]
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / np.asarray(1.0 - p, dtype=dtype)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Apply an explicit, seeded dropout mask. ``rng=None`` or ``p=0`` is identity."""
    if rng is None or p == 0.0:
        return a
    mask = Tensor(dropout_mask(a.shape, p, rng, a.dtype), dtype=a.dtype)
    return mul(a, mask)


# -- differentiation -----------------------------------------------------------

def _reachable(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack_ = [root]
    while stack_:
        node = stack_.pop()
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        order.append(node)
        stack_.extend(node._parents)
    order.sort(key=lambda n: n._seq, reverse=True)
    return order


def grad(
    output: Tensor,
    inputs: Iterable[Tensor],
    grad_output: Tensor | None = None,
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradients of ``output`` with respect to each of ``inputs``.

    Inputs the output does not depend on receive zeros. With
    ``create_graph=True`` the returned gradients are themselves differentiable.
    """
    inputs = list(inputs)
    if grad_output is None:
        if output.size != 1:
            raise ShapeError(f"grad: output must be scalar without grad_output, got shape {output.shape}")
        grad_output = Tensor(np.ones(output.shape), dtype=output.dtype)
    grads: dict[int, Tensor] = {id(output): grad_output}
    wanted = {id(t) for t in inputs}
    with _grad_mode(create_graph):
        for node in _reachable(output):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            if id(node) not in wanted:
                grads.pop(id(node))
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)
    result = []
    for t in inputs:
        g = grads.get(id(t))
        if g is None:
            g = Tensor(np.zeros(t.shape), dtype=t.dtype)
        result.append(g)
    return result


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, Tensor]:
    """Backpropagate a scalar loss.

    Returns a map from each parameter to its gradient and also stores the
    gradient array on ``param.grad``. When ``params`` is omitted every leaf
    reachable from the loss that requires grad is used.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if params is None:
        params = [n for n in _reachable(loss) if n._backward is None]
    params = list(params)
    grads = grad(loss, params)
    out = {}
    for p, g in zip(params, grads):
        p.grad = g.data
        out[p] = g
    return out

"""A small dense tensor with tape-based reverse-mode differentiation.

Every op builds its output eagerly with numpy and, when any input requires
gradients, attaches a closure that pushes the output gradient back to the
inputs.  ``backward`` walks the recorded graph once in reverse topological
order, accumulates into leaf ``.grad`` arrays and then drops the graph.
"""

from __future__ import annotations

import contextlib

import numpy as np

_default_dtype = np.float32
_grad_enabled = True
_branch_log: list | None = None


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    old = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


@contextlib.contextmanager
def record_branches():
    """Collect the branch decisions taken by non-smooth ops (relu, abs, top-k).

    Two evaluations that log identical decisions lie on the same smooth piece,
    which is what the gradient checker uses to skip kink-crossing coordinates.
    """
    global _branch_log
    old = _branch_log
    _branch_log = []
    try:
        yield _branch_log
    finally:
        _branch_log = old


def _log_branch(tag: str, decision: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append((tag, np.ascontiguousarray(decision).tobytes()))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype.type if arr.dtype.type in (np.float32, np.float64) else _default_dtype
        self.data = np.array(arr, dtype=dtype, copy=True)
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("tensor contains NaN or Inf")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, backward, op: str) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise FloatingPointError(f"{op} produced NaN or Inf")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

    # basic protocol -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    def backward(self) -> None:
        backward(self)

    # operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype.type if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or _default_dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = g.astype(t.data.dtype, copy=False)
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad = t.grad + g


# elementwise ------------------------------------------------------------
def _binary_operands(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return Tensor._from_op(a.data + b.data, (a, b), _bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return Tensor._from_op(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def _bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return Tensor._from_op(a.data * b.data, (a, b), _bw, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("division by zero in tensor div")

    def _bw(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor._from_op(a.data / b.data, (a, b), _bw, "div")


def power(x: Tensor, exponent: float) -> Tensor:
    def _bw(g):
        _accumulate(x, g * exponent * x.data ** (exponent - 1))

    return Tensor._from_op(x.data ** exponent, (x,), _bw, "pow")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as the non-finite error below
        out_data = np.exp(x.data)

    def _bw(g):
        _accumulate(x, g * out_data)

    return Tensor._from_op(out_data, (x,), _bw, "exp")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log of non-positive value")

    def _bw(g):
        _accumulate(x, g / x.data)

    return Tensor._from_op(np.log(x.data), (x,), _bw, "log")


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)

    def _bw(g):
        _accumulate(x, g * 0.5 / out_data)

    return Tensor._from_op(out_data, (x,), _bw, "sqrt")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out_data = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.data.dtype)

    def _bw(g):
        _accumulate(x, g * out_data * (1.0 - out_data))

    return Tensor._from_op(out_data, (x,), _bw, "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _log_branch("relu", mask)

    def _bw(g):
        _accumulate(x, g * mask)

    return Tensor._from_op(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), _bw, "relu")


def tabs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    _log_branch("abs", sign)

    def _bw(g):
        _accumulate(x, g * sign)

    return Tensor._from_op(np.abs(x.data), (x,), _bw, "abs")


# reductions and shape ops -----------------------------------------------
def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return Tensor._from_op(np.asarray(out_data), (x,), _bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    def _bw(g):
        _accumulate(x, g.reshape(x.shape))

    return Tensor._from_op(x.data.reshape(shape), (x,), _bw, "reshape")


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes (plain transpose for matrices)."""
    if x.ndim < 2:
        raise ShapeError(f"transpose needs rank >= 2, got shape {x.shape}")

    def _bw(g):
        _accumulate(x, np.swapaxes(g, -1, -2))

    return Tensor._from_op(np.swapaxes(x.data, -1, -2), (x,), _bw, "transpose")


def getitem(x: Tensor, index) -> Tensor:
    def _bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        _accumulate(x, full)

    return Tensor._from_op(np.array(x.data[index]), (x,), _bw, "getitem")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accumulate(t, piece)

    return Tensor._from_op(out_data, tuple(tensors), _bw, "concat")


# linear algebra ---------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of the last two axes; a leading batch axis is allowed."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def _bw(g):
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return Tensor._from_op(a.data @ b.data, (a, b), _bw, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=axis, keepdims=True)

    def _bw(g):
        dot = np.sum(g * out_data, axis=axis, keepdims=True)
        _accumulate(x, out_data * (g - dot))

    return Tensor._from_op(out_data, (x,), _bw, "softmax")


def topk_mean(x: Tensor, k: int, axis: int = 0) -> Tensor:
    """Mean of the ``k`` largest entries along ``axis``.

    Ties are resolved towards the lowest index, so the selection (and the
    ``1/k`` gradient mask) is deterministic.
    """
    n = x.shape[axis]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    order = np.argsort(-x.data, axis=axis, kind="stable")
    picked = np.take(order, np.arange(k), axis=axis)
    _log_branch("topk", picked)
    mask = np.zeros_like(x.data)
    np.put_along_axis(mask, picked, 1.0, axis=axis)
    out_data = np.sum(x.data * mask, axis=axis) / k

    def _bw(g):
        _accumulate(x, np.expand_dims(g, axis) * mask / k)

    return Tensor._from_op(np.asarray(out_data, dtype=x.data.dtype), (x,), _bw, "topk_mean")


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded temporal cross-correlation.

    ``x`` is ``T x Cin`` (or ``B x T x Cin``), ``w`` is ``K x Cin x Cout`` with
    odd ``K``; output row ``t`` reads input rows ``t - K//2 .. t + K//2`` with
    zeros outside the sequence.
    """
    K, cin, cout = w.shape
    if K % 2 == 0:
        raise ValueError(f"conv1d kernel size must be odd, got {K}")
    if x.shape[-1] != cin:
        raise ShapeError(f"conv1d expects {cin} input channels, got {x.shape[-1]}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv1d bias shape {b.shape} != ({cout},)")
    pad = K // 2
    T = x.shape[-2]
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    out_data = np.zeros(x.shape[:-1] + (cout,), dtype=np.result_type(x.data, w.data))
    for k in range(K):
        out_data += xp[..., k:k + T, :] @ w.data[k]
    if b is not None:
        out_data += b.data
    parents = (x, w) if b is None else (x, w, b)

    def _bw(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp, dtype=g.dtype)
            for k in range(K):
                gxp[..., k:k + T, :] += g @ w.data[k].T
            _accumulate(x, gxp[..., pad:pad + T, :])
        if w.requires_grad:
            gw = np.empty_like(w.data)
            g2 = g.reshape(-1, cout)
            for k in range(K):
                gw[k] = xp[..., k:k + T, :].reshape(-1, cin).T @ g2
            _accumulate(w, gw)
        if b is not None:
            _accumulate(b, g.reshape(-1, cout).sum(axis=0))

    return Tensor._from_op(out_data, parents, _bw, "conv1d")


# backward ---------------------------------------------------------------
def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

    Contributions from multiple paths are summed.  The recorded graph is
    released afterwards, so a second call needs a fresh forward pass.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    # interior nodes hold their gradient in .grad only during the sweep
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is not None:
            node.grad = None
            node._parents = ()
            node._backward = None

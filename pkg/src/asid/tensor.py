"""N-d tensors with a recording tape for reverse-mode differentiation.

Storage is a row-major numpy array. Operations executed while a :class:`Tape`
is active append a node holding the saved activations and a backward closure;
:meth:`Tape.backward` replays the nodes in reverse recording order, which is
a valid topological order because every node is recorded after its inputs.

Outside a tape nothing is recorded, so inference allocates no graph.
"""

from __future__ import annotations

import contextlib
import threading
from collections import Counter
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

# per-op call counters (plus accumulated multiply-adds under "macs")
OP_COUNTS: Counter = Counter()

_local = threading.local()

GELU_C = np.sqrt(2.0 / np.pi)
GELU_K = 0.044715


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def count_ops():
    """Collect op-call counts for the enclosed block into a fresh Counter."""
    before = OP_COUNTS.copy()
    delta: Counter = Counter()
    try:
        yield delta
    finally:
        after = OP_COUNTS.copy()
        after.subtract(before)
        delta.update({k: v for k, v in after.items() if v})


class Tensor:
    """A numeric array that can take part in gradient recording.

    ``requires_grad`` marks leaves (parameters, inputs under test) whose
    gradients :meth:`Tape.backward` reports. Outputs of recorded operations
    carry the identifier of their tape node in ``grad_id``.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.grad_id: int | None = None

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
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("tensor / tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def transpose(self, a: int = -2, b: int = -1):
        return transpose(self, a, b)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


def _lift(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


class _Node:
    __slots__ = ("index", "out", "parents", "backward")

    def __init__(self, index, out, parents, backward):
        self.index = index
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations inside the ``with`` block are
    recorded. A tape can be differentiated once; :meth:`reset` clears it.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[int, Tensor] = {}
        self._outputs: set[int] = set()
        self._next_id = 0
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False

    def reset(self) -> None:
        self.nodes.clear()
        self._leaves.clear()
        self._outputs.clear()
        self._consumed = False

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def record(self, out: Tensor, parents: Sequence[Tensor], backward: Callable) -> None:
        if self._consumed:
            raise ContractError("tape already differentiated; call reset() before recording again")
        for p in parents:
            key = id(p)
            if p.requires_grad and key not in self._outputs and key not in self._leaves:
                self._leaves[key] = p
                p.grad_id = self._new_id()
        out.requires_grad = True
        out.grad_id = self._new_id()
        self._outputs.add(id(out))
        self.nodes.append(_Node(out.grad_id, out, tuple(parents), backward))

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Propagate d(loss)/d(leaf) to every leaf seen by this tape.

        Returns a map leaf -> gradient array and also stores it on
        ``leaf.grad``. Leaves the loss does not depend on get zeros.
        """
        if self._consumed:
            raise ContractError("backward already called on this tape; call reset() first")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._outputs:
            raise ContractError("loss was not produced on this tape")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for p, gp in zip(node.parents, node.backward(g)):
                if gp is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + gp
                else:
                    grads[key] = gp
        result = {}
        for key, leaf in self._leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
            result[leaf] = leaf.grad
        return result


def _result(name: str, data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    OP_COUNTS[name] += 1
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, parents, backward)
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (undoing numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary_shapes(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)
    _binary_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result("add", a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)
    _binary_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result("sub", a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)

    return _result("mul", ad * bd, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} differ") from None
    ad, bd = a.data, b.data
    out = ad @ bd
    OP_COUNTS["macs"] += out.size * ad.shape[-1]

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return _result("matmul", out, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    if not np.all(np.isfinite(xd)):
        raise NumericError("softmax received non-finite input")
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result("softmax", y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    xd = x.data
    t = np.tanh(GELU_C * (xd + GELU_K * xd**3))
    y = 0.5 * xd * (1.0 + t)

    def backward(g):
        dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * dt),)

    return _result("gelu", y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def abs_(x: Tensor) -> Tensor:
    s = np.sign(x.data)
    return _result("abs", np.abs(x.data), (x,), lambda g: (g * s,))


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kept), shape).copy(),)

    return _result("sum", x.data.sum(axis=axes, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    shape = x.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kept) / n, shape).copy(),)

    return _result("mean", x.data.mean(axis=axes, keepdims=keepdims), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None
    old = x.shape
    return _result("reshape", out, (x,), lambda g: (g.reshape(old),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: {axes} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return _result("permute", out, (x,), lambda g: (np.ascontiguousarray(np.transpose(g, inv)),))


def transpose(x: Tensor, a: int = -2, b: int = -1) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return permute(x, axes)


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return _result("getitem", np.ascontiguousarray(x.data[idx]), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result("concat", out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def split(x: Tensor, widths: Iterable[int], axis: int = 0) -> list[Tensor]:
    """Split ``x`` along ``axis`` into consecutive pieces of the given widths."""
    widths = list(widths)
    axis = axis % x.ndim
    if any(w <= 0 for w in widths) or sum(widths) != x.shape[axis]:
        raise DimensionError(f"split: widths {widths} do not partition extent {x.shape[axis]} of axis {axis}")
    pieces, start = [], 0
    for w in widths:
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, start + w)
        pieces.append(getitem(x, tuple(idx)))
        start += w
    return pieces

"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Outside a tape every op is a plain
forward computation, which is what inference and validation use.

    >>> w = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(matvec_affine(w, Tensor([1.0, 1.0]), Tensor([0.0, 0.0])))
    >>> tape.backward(loss)
    >>> w.grad.tolist()
    [[1.0, 1.0], [1.0, 1.0]]

Vectors may carry a leading batch axis: ``matvec_affine`` accepts ``x`` of
shape ``(n,)`` or ``(batch, n)``. Apart from the bias in ``matvec_affine`` and
Python scalars in arithmetic there is no broadcasting.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "matvec_affine",
    "sigmoid",
    "tanh_act",
    "relu",
    "add",
    "sub",
    "mul",
    "concat",
    "take_rows",
    "reshape",
    "sum_all",
    "check_gradients",
]

_local = threading.local()


def _active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nesting is allowed and ops go to the innermost
    tape. Tapes are thread-local, so separate threads can build separate
    graphs concurrently.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> Tape:
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple, backward_fn: Callable) -> None:
        self.nodes.append(_Node(out, inputs, backward_fn))

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf.

    Gradients add onto whatever is already in ``.grad``; callers zero them
    between iterations.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(node.out) for node in tape.nodes}
    if id(loss) not in produced:
        if loss.requires_grad:
            loss.grad = loss.grad + np.ones_like(loss.data)
        return

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in produced:
                leaves[id(inp)] = inp
        g_out = pending.pop(id(node.out), None)
        if g_out is None:
            continue
        for inp, g in zip(node.inputs, node.backward_fn(g_out)):
            if g is None or not inp.requires_grad:
                continue
            if id(inp) in produced:
                key = id(inp)
                pending[key] = pending[key] + g if key in pending else g
            else:
                inp.grad = inp.grad + g if inp.grad is not None else g.copy()
    for leaf in leaves.values():
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)


def _emit(data: np.ndarray, inputs: tuple, backward_fn: Callable) -> Tensor:
    tape = _active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return Tensor(data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = True
    out.grad = None
    tape.record(out, inputs, backward_fn)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} does not match shape {b.shape}")


# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _emit(a.data + c, (a,), lambda g: (g,))
    _same_shape("add", a, b)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _emit(a.data - c, (a,), lambda g: (g,))
    _same_shape("sub", a, b)
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _emit(a.data * c, (a,), lambda g: (g * c,))
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad))


# layer primitives


def matvec_affine(W: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """``W @ x + b`` for a vector ``x``, or row-wise for a ``(batch, n)`` ``x``."""
    if W.data.ndim != 2 or b.shape != (W.shape[0],) or x.data.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(
            f"matvec_affine: weight shape {W.shape} does not conform with "
            f"input shape {x.shape} and bias shape {b.shape}"
        )
    Wd, xd = W.data, x.data
    out = xd @ Wd.T + b.data

    def grad_fn(g):
        if xd.ndim == 1:
            return np.outer(g, xd), g @ Wd, g
        return g.T @ xd, g @ Wd, g.sum(axis=0)

    return _emit(out, (W, x, b), grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh_act(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _emit(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _emit(np.where(pos, x.data, 0.0), (x,), lambda g: (np.where(pos, g, 0.0),))


# structural ops


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        other = [d for k, d in enumerate(t.shape) if k != ax]
        first = [d for k, d in enumerate(tensors[0].shape) if k != ax]
        if t.data.ndim != ndim or other != first:
            raise DimensionError(f"concat: shape {tensors[0].shape} does not match shape {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def grad_fn(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=ax))

    return _emit(out, tensors, grad_fn)


def take_rows(table: Tensor, index) -> Tensor:
    """Select rows of a matrix; gradients scatter-add back into those rows."""
    idx = np.asarray(index, dtype=np.intp)
    n = table.shape[0]
    if np.any(idx < 0) or np.any(idx >= n):
        raise IndexError(f"row index out of range for table with {n} rows")
    shape = table.shape

    def grad_fn(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(table.data[idx], (table,), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view shape {src} as {shape}") from exc
    return _emit(out, (x,), lambda g: (g.reshape(src),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Largest ``|analytic - numeric| / max(1, |numeric|)`` over all entries.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    Numeric gradients use central differences with step ``eps``.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        analytic = p.grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn().item()
            flat[k] = orig - eps
            down = loss_fn().item()
            flat[k] = orig
            numeric = (up - down) / (2 * eps)
            worst = max(worst, abs(analytic[k] - numeric) / max(1.0, abs(numeric)))
    return worst

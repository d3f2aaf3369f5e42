"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active (``with Tape() as tape``)
are recorded in execution order whenever one of their inputs requires a
gradient. ``tape.backward(loss)`` replays the record in reverse and returns a
map from every grad-requiring tensor to its gradient.

Outside a tape nothing is recorded, which is the fast path for inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


_TAPES: list["Tape"] = []


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "Tensor()")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operators
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return swap_last(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes)


@dataclass
class _Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    """Ordered record of executed differentiable operations."""

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(loss, self)


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(
    value: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    op: str = "custom",
) -> Tensor:
    """Wrap a forward value with its local gradient rule.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    parent. Every built-in operation goes through here.
    """
    _check_finite(value, op)
    needs = any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = value
    out.requires_grad = needs
    out.name = ""
    tape = active_tape()
    if needs and tape is not None:
        tape.record(_Node(out, tuple(parents), backward_fn, op))
    return out


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep over ``tape``; returns d(loss)/d(t) for every t."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    keep: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        with np.errstate(over="ignore", invalid="ignore"):
            local = node.backward(g)
        for parent, pg in zip(node.parents, local):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(pg, f"backward of {node.op}")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
                keep[key] = parent
    # what remains are leaves (tensors not produced by a recorded op)
    return {keep[k]: g for k, g in grads.items()}


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return custom_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return custom_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return custom_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise ContractError("division by zero")
    out = a.data / b.data
    return custom_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return custom_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ContractError("log of nonpositive value")
    return custom_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def square(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = a.data * a.data
    return custom_op(out, (a,), lambda g: (2.0 * g * a.data,), "square")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    # tanh saturates long before 1e4; clipping keeps x**3 from overflowing
    xc = np.clip(x, -1e4, 1e4)
    x2 = xc * xc
    t = np.tanh(_GELU_C * xc * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return custom_op(out, (a,), bw, "gelu")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return custom_op(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return custom_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


# reductions and shape ops


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return custom_op(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return custom_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return custom_op(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose"
    )


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a: Tensor, index) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return custom_op(np.array(a.data[index]), (a,), bw, "getitem")


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; ``ids`` may have any integer shape."""
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return custom_op(table.data[ids], (table,), bw, "take_rows")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return custom_op(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat"
    )


# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules on leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # batched input times a shared weight: one flat product instead of a batch of them
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return custom_op(out, (a, b), bw, "matmul")


def softmax_array(x: np.ndarray, keep: np.ndarray | None = None) -> np.ndarray:
    """Softmax over the last axis; entries where ``keep`` is False get weight 0."""
    if keep is not None:
        x = np.where(keep, x, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    if keep is not None and not np.all(np.isfinite(m)):
        raise ContractError("softmax row with no kept entries")
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def row_softmax(m: Tensor, keep: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax along the last axis.

    ``keep`` (boolean, broadcastable) removes entries from the normalization
    entirely rather than assigning them a finite logit.
    """
    p = softmax_array(m.data, keep)

    def bw(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return custom_op(p, (m,), bw, "softmax")


def layer_norm(x: Tensor, scale: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * scale.data + bias.data
    def bw(g):
        gx = gs = gb = None
        if x.requires_grad:
            gh = g * scale.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if scale.requires_grad:
            gs = _unbroadcast(g * xhat, scale.shape)
        if bias.requires_grad:
            gb = _unbroadcast(g, bias.shape)
        return gx, gs, gb

    return custom_op(out, (x, scale, bias), bw, "layer_norm")


# optimisation


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState
) -> AdamState:
    """Bias-corrected Adam; updates ``params`` in place and returns ``state``.

    Parameters absent from ``grads`` receive a zero gradient.
    """
    if state.step < 0:
        raise ContractError("Adam step counter must be >= 0")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, param {p.shape}")
        _check_finite(g, f"gradient of {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        elif m.shape != p.shape:
            raise DimensionError(f"moment for {name} has shape {m.shape}, param {p.shape}")
        with np.errstate(over="ignore"):
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            new = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        _check_finite(v, f"Adam second moment of {name}")
        _check_finite(new, f"Adam update of {name}")
        state.m[name] = m
        state.v[name] = v
        p.data = new
    return state


# validation


def gradcheck(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    floor: float = 1e-7,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst per-coordinate relative error between tape and central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``. With ``max_coords``
    set, each tensor contributes at most that many randomly chosen coordinates.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    params = list(params)
    for p in params:
        p.requires_grad = True
    base = f(params).item()
    if f(params).item() != base:
        raise ContractError("function is not deterministic")
    with Tape() as tape:
        loss = f(params)
    grads = tape.backward(loss)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p in params:
        analytic = grads.get(p, np.zeros_like(p.data))
        flat = p.data.reshape(-1)
        coords: Iterable[int] = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = f(params).item()
            flat[i] = orig - eps
            down = f(params).item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst

"""Rank-4 float64 tensors with a recording tape for reverse-mode autodiff.

Every value is a ``(batch, channels, height, width)`` array. Operations record
themselves on the innermost active :class:`Tape`; outside a tape they run in
plain inference mode and build no graph.

    with Tape() as tape:
        y = hadamard(w, x)
        loss = sum_all(y)
    grads = backward(tape, loss)
    grads[w]  # ndarray shaped like w
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import faults
from .errors import NonScalarLoss, ShapeMismatch

GradFn = Callable[[np.ndarray], np.ndarray]

_ids = itertools.count()
_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tensor:
    """A graph node holding one rank-4 float64 array.

    ``parents`` is a list of ``(parent, local_grad_fn)`` pairs where the
    function maps the gradient w.r.t. this node to the gradient w.r.t. the
    parent. Leaves (parameters, inputs) have no parents.
    """

    __slots__ = ("data", "requires_grad", "parents", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeMismatch(f"Tensor4 needs rank 4, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.parents: list[tuple[Tensor, GradFn]] = []
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar for the elementwise family
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return hadamard(self, other)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def zeros_like(x: Tensor) -> Tensor:
    return Tensor(np.zeros_like(x.data))


def constant(value: float, shape) -> Tensor:
    return Tensor(np.full(shape, float(value)))


class Tape:
    """Ordered record of the nodes created while the tape is active.

    Creation order is a valid topological order because a node can only be
    built from nodes that already exist. The active-tape stack is per thread,
    so workers can each record their own tape.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def record_branches():
    """Collect the branch choices of piecewise ops (relu, rectified_tanh, max pool).

    Two evaluations with equal records ran through the same linear pieces, so
    a finite difference between them is not straddling a kink.
    """
    prev = getattr(_local, "branches", None)
    _local.branches = out = []
    try:
        yield out
    finally:
        _local.branches = prev


def note_branch(choice: np.ndarray) -> None:
    rec = getattr(_local, "branches", None)
    if rec is not None:
        rec.append(choice.tobytes())


def _node(data: np.ndarray, parents: Iterable[tuple[Tensor, GradFn]]) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is None:
        return out
    live = [(p, fn) for p, fn in parents if p.requires_grad]
    if live:
        out.requires_grad = True
        out.parents = live
        tape.nodes.append(out)
    return out


class Gradients(dict):
    """Map node-id -> gradient array; also indexable by the tensor itself."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.id
        return super().__getitem__(key)

    def get(self, key, default=None):
        if isinstance(key, Tensor):
            key = key.id
        return super().get(key, default)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.id
        return super().__contains__(key)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse sweep over ``tape`` seeded with d loss / d loss = 1.

    Fan-out is handled by summation. Leaves that received no gradient are
    absent from the result; callers treat a missing entry as zero.
    """
    if loss.shape != (1, 1, 1, 1):
        raise NonScalarLoss(f"loss must have shape (1, 1, 1, 1), got {loss.shape}")
    grads = Gradients()
    grads[loss.id] = np.ones(loss.shape)
    for node in reversed(tape.nodes):
        g = dict.get(grads, node.id)
        if g is None:
            continue
        for parent, fn in node.parents:
            contrib = fn(g)
            prev = dict.get(grads, parent.id)
            grads[parent.id] = contrib if prev is None else prev + contrib
    return grads


# ---------------------------------------------------------------- elementwise


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    n, c, h, w = a.shape
    bn, bc, bh, bw = b.shape
    ok = (
        bn in (1, n)
        and bc in (1, c)
        and ((bh, bw) == (1, 1) or (bh, bw) == (h, w))
    )
    if not ok:
        raise ShapeMismatch(f"cannot broadcast {b.shape} against {a.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    sb = b.shape
    return _node(a.data + b.data, [(a, lambda g: g), (b, lambda g: _unbroadcast(g, sb))])


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    sb = b.shape
    return _node(a.data - b.data, [(a, lambda g: g), (b, lambda g: -_unbroadcast(g, sb))])


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be a channel signal ``(., c|1, 1, 1)`` or a
    single-channel map ``(., 1, h, w)`` broadcast against ``a``."""
    _check_broadcast(a, b)
    ad, bd, sb = a.data, b.data, b.shape
    if "detach" in faults.ACTIVE:
        return _node(ad * bd, [(a, lambda g: g * bd)])
    return _node(ad * bd, [(a, lambda g: g * bd), (b, lambda g: _unbroadcast(g * ad, sb))])


_ELEMENTWISE = {"add": add, "sub": sub, "hadamard": hadamard}


def elementwise(op_kind: str, a: Tensor, b: Tensor) -> Tensor:
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(a, b)


def scale(x: Tensor, k: float) -> Tensor:
    return _node(x.data * k, [(x, lambda g: g * k)])


def add_scalar(x: Tensor, k: float) -> Tensor:
    return _node(x.data + k, [(x, lambda g: g)])


def one_minus(x: Tensor) -> Tensor:
    return _node(1.0 - x.data, [(x, lambda g: -g)])


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _node(np.array(x.data.sum()).reshape(1, 1, 1, 1), [(x, lambda g: np.broadcast_to(g, shape).copy())])


def mean_all(x: Tensor) -> Tensor:
    shape, size = x.shape, x.data.size
    return _node(
        np.array(x.data.mean()).reshape(1, 1, 1, 1),
        [(x, lambda g: np.full(shape, g.item() / size))],
    )


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)`` against a constant array (handy for probing gradients)."""
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), x.shape)
    return _node(np.array((x.data * w).sum()).reshape(1, 1, 1, 1), [(x, lambda g: g.item() * w)])


def mse(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse operands differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    k = 2.0 / diff.size
    return _node(
        np.array((diff * diff).mean()).reshape(1, 1, 1, 1),
        [(pred, lambda g: g.item() * k * diff), (target, lambda g: -g.item() * k * diff)],
    )


# ---------------------------------------------------------------- activations


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _node(y, [(x, lambda g: g * (1.0 - y * y))])


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _node(y, [(x, lambda g: g * y * (1.0 - y))])


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    note_branch(mask)
    return _node(np.where(mask, x.data, 0.0), [(x, lambda g: g * mask)])


def rectified_tanh(x: Tensor) -> Tensor:
    """``max(tanh(x), 0)``; the subgradient at exactly 0 is 0."""
    t = np.tanh(x.data)
    mask = x.data > 0
    note_branch(mask)
    y = np.where(mask, t, 0.0)
    return _node(y, [(x, lambda g: g * mask * (1.0 - y * y))])


ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "rectified_tanh": rectified_tanh}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def softmax_over_group(values: Sequence[Tensor]) -> list[Tensor]:
    """Softmax across a list of same-shaped tensors, independently at every index."""
    if not values:
        raise ValueError("softmax_over_group needs at least one tensor")
    shape = values[0].shape
    if any(v.shape != shape for v in values):
        raise ShapeMismatch(f"softmax group shapes differ: {[v.shape for v in values]}")
    stacked = np.stack([v.data for v in values])
    e = np.exp(stacked - stacked.max(axis=0, keepdims=True))
    denom = e.sum(axis=0, keepdims=True)
    if "softmax" in faults.ACTIVE:
        denom = denom + 0.5
    p = e / denom

    # one node per output; d p_j / d x_i = p_j (delta_ij - p_i)
    outs = []
    for j in range(len(values)):
        pj = p[j]
        parents = []
        for i, v in enumerate(values):
            if i == j:
                parents.append((v, lambda g, pj=pj: g * pj * (1.0 - pj)))
            else:
                parents.append((v, lambda g, pj=pj, pi=p[i]: -g * pj * pi))
        outs.append(_node(pj, parents))
    return outs


# ---------------------------------------------------------------- channel plumbing


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_channels needs at least one part")
    n, _, h, w = parts[0].shape
    for p in parts:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeMismatch(f"concat parts disagree: {[q.shape for q in parts]}")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    data = np.concatenate([p.data for p in parts], axis=1)
    parents = [
        (p, lambda g, lo=lo, hi=hi: g[:, lo:hi])
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:])
    ]
    return _node(data, parents)


def split_channels(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if sum(sizes) != x.shape[1]:
        raise ShapeMismatch(f"split sizes {list(sizes)} do not cover {x.shape[1]} channels")
    outs = []
    lo = 0
    shape = x.shape
    for size in sizes:
        hi = lo + size

        def fn(g, lo=lo, hi=hi):
            full = np.zeros(shape)
            full[:, lo:hi] = g
            return full

        outs.append(_node(x.data[:, lo:hi], [(x, fn)]))
        lo = hi
    return outs


def sum_tensors(items: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors as a single node (cheaper than chained adds)."""
    if not items:
        raise ValueError("sum_tensors needs at least one tensor")
    if len(items) == 1:
        return items[0]
    shape = items[0].shape
    if any(t.shape != shape for t in items):
        raise ShapeMismatch(f"sum_tensors shapes differ: {[t.shape for t in items]}")
    data = items[0].data.copy()
    for t in items[1:]:
        data += t.data
    return _node(data, [(t, lambda g: g) for t in items])

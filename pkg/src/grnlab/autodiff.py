"""Reverse-mode automatic differentiation on a flat tape.

A ``Tape`` records nodes in creation order, which is already a topological
order of the (acyclic) graph, so the backward sweep is a single reversed pass
over the tape.  Tapes are rebuilt for every forward pass and are strictly
single-threaded; distinct tapes share nothing, so independent models may run
on independent threads.

Gradient conventions: relu's subgradient at exactly 0 is 0, and layernorm
uses eps = 1e-6 inside the variance square root.  Gradients accumulate in
reverse tape order with parents visited in fixed argument order, so repeated
backward passes over freshly built tapes are bit-identical.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import linalg
from .linalg import ShapeError, as_tensor

LAYERNORM_EPS = 1e-6
MASK_NEG = -1e30


class Node:
    """One tape entry: a value plus how to push gradients to its parents."""

    __slots__ = ("tape", "value", "op", "parents", "grad", "_push")

    def __init__(self, tape: "Tape", value: np.ndarray, op: str,
                 parents: tuple["Node", ...],
                 push: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None):
        self.tape = tape
        self.value = value
        self.op = op
        self.parents = parents
        self.grad: np.ndarray | None = None
        self._push = push
        tape._nodes.append(self)

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Recording context for one forward/backward pass."""

    def __init__(self):
        self._nodes: list[Node] = []

    def leaf(self, value) -> Node:
        return Node(self, as_tensor(value), "leaf", (), None)

    def constant(self, value) -> Node:
        return Node(self, as_tensor(value), "const", (), None)

    def __len__(self):
        return len(self._nodes)


def _same_tape(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ValueError("nodes from different tapes cannot be combined")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_value(a: Node, b: Node, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


def add(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _broadcast_value(a, b, "add")
    value = a.value + b.value

    def push(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Node(tape, value, "add", (a, b), push)


def sub(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _broadcast_value(a, b, "sub")
    value = a.value - b.value

    def push(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Node(tape, value, "sub", (a, b), push)


def hadamard(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _broadcast_value(a, b, "hadamard")
    value = a.value * b.value

    def push(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Node(tape, value, "hadamard", (a, b), push)


def scale(a: Node, c: float) -> Node:
    c = float(c)
    value = a.value * c

    def push(g):
        return (g * c,)

    return Node(a.tape, value, "scale", (a,), push)


def matmul(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    value = linalg.matmul(a.value, b.value)

    def push(g):
        return linalg.matmul(g, b.value.T), linalg.matmul(a.value.T, g)

    return Node(tape, value, "matmul", (a, b), push)


def relu(a: Node) -> Node:
    value = np.maximum(a.value, 0.0)
    mask = a.value > 0.0

    def push(g):
        return (g * mask,)

    return Node(a.tape, value, "relu", (a,), push)


def softmax(a: Node, axis: int = -1) -> Node:
    if a.value.shape[axis] == 0:
        raise ShapeError("softmax: empty axis")
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def push(g):
        inner = (g * value).sum(axis=axis, keepdims=True)
        return (value * (g - inner),)

    return Node(a.tape, value, "softmax", (a,), push)


def layernorm(x: Node, gain: Node, bias: Node, axis: int = -1,
              eps: float = LAYERNORM_EPS) -> Node:
    tape = _same_tape(x, gain, bias)
    n = x.value.shape[axis]
    if gain.value.shape != (n,) or bias.value.shape != (n,):
        raise ShapeError(
            f"layernorm: gain/bias must have shape ({n},), got "
            f"{gain.value.shape} and {bias.value.shape}"
        )
    bshape = [1] * x.value.ndim
    bshape[axis] = n
    gain_b = gain.value.reshape(bshape)
    mu = x.value.mean(axis=axis, keepdims=True)
    centered = x.value - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    value = xhat * gain_b + bias.value.reshape(bshape)
    other_axes = tuple(i for i in range(x.value.ndim) if i != axis % x.value.ndim)

    def push(g):
        dgain = (g * xhat).sum(axis=other_axes)
        dbias = g.sum(axis=other_axes)
        dxhat = g * gain_b
        dx = inv * (
            dxhat
            - dxhat.mean(axis=axis, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True)
        )
        return dx, dgain, dbias

    return Node(tape, value, "layernorm", (x, gain, bias), push)


def gather(table: Node, ids) -> Node:
    """Rows of ``table`` selected by integer ``ids`` (embedding lookup)."""
    ids = np.asarray(ids)
    if ids.ndim != 1 or not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("gather: ids must be a 1-d integer array")
    if ids.size and (ids.min() < 0 or ids.max() >= table.value.shape[0]):
        raise ValueError(
            f"gather: id out of range [0, {table.value.shape[0]}) "
            f"(got min {ids.min()}, max {ids.max()})"
        )
    value = table.value[ids].copy()

    def push(g):
        dt = np.zeros_like(table.value)
        np.add.at(dt, ids, g)
        return (dt,)

    return Node(table.tape, value, "gather", (table,), push)


def narrow(a: Node, axis: int, start: int, length: int) -> Node:
    """Contiguous slice of ``length`` entries along ``axis``."""
    extent = a.value.shape[axis]
    if not (0 <= start and start + length <= extent):
        raise ShapeError(f"narrow: [{start}, {start + length}) outside axis of extent {extent}")
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    value = a.value[index].copy()

    def push(g):
        da = np.zeros_like(a.value)
        da[index] = g
        return (da,)

    return Node(a.tape, value, "narrow", (a,), push)


def concat(nodes: list[Node], axis: int = 0) -> Node:
    if not nodes:
        raise ShapeError("concat: need at least one node")
    tape = _same_tape(*nodes)
    value = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = [n.value.shape[axis] for n in nodes]

    def push(g):
        outs = []
        offset = 0
        for n, size in zip(nodes, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            outs.append(g[tuple(index)].copy())
            offset += size
        return tuple(outs)

    return Node(tape, value, "concat", tuple(nodes), push)


def transpose(a: Node) -> Node:
    if a.value.ndim != 2:
        raise ShapeError("transpose: expected a 2-d tensor")
    value = np.ascontiguousarray(a.value.T)

    def push(g):
        return (np.ascontiguousarray(g.T),)

    return Node(a.tape, value, "transpose", (a,), push)


def reshape(a: Node, shape) -> Node:
    value = a.value.reshape(shape).copy()

    def push(g):
        return (g.reshape(a.value.shape),)

    return Node(a.tape, value, "reshape", (a,), push)


def sum_(a: Node, axis: int | None = None) -> Node:
    value = np.asarray(a.value.sum(axis=axis))

    def push(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.value.shape).copy(),)

    return Node(a.tape, value, "sum", (a,), push)


def mean(a: Node, axis: int | None = None) -> Node:
    count = a.value.size if axis is None else a.value.shape[axis]
    if count == 0:
        raise ShapeError("mean: empty axis")
    value = np.asarray(a.value.mean(axis=axis))

    def push(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.value.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g / count, axis), a.value.shape).copy(),)

    return Node(a.tape, value, "mean", (a,), push)


def cross_entropy(logits: Node, targets) -> Node:
    """Per-row cross entropy of integer ``targets`` under row logits."""
    targets = np.asarray(targets)
    if logits.value.ndim != 2:
        raise ShapeError("cross_entropy: logits must be (n, classes)")
    n, classes = logits.value.shape
    if classes == 0:
        raise ShapeError("cross_entropy: empty class axis")
    if targets.shape != (n,) or not np.issubdtype(targets.dtype, np.integer):
        raise ShapeError("cross_entropy: targets must be an (n,) integer array")
    if n and (targets.min() < 0 or targets.max() >= classes):
        raise ValueError("cross_entropy: target id out of range")
    m = logits.value.max(axis=1, keepdims=True)
    e = np.exp(logits.value - m)
    z = e.sum(axis=1, keepdims=True)
    lse = np.log(z)[:, 0] + m[:, 0]
    value = lse - logits.value[np.arange(n), targets]
    probs = e / z

    def push(g):
        dl = probs * g[:, None]
        dl[np.arange(n), targets] -= g
        return (dl,)

    return Node(logits.tape, value, "cross_entropy", (logits,), push)


def _backward_from(node: Node, seed: np.ndarray) -> None:
    seed = as_tensor(seed)
    if seed.shape != node.value.shape:
        raise ShapeError("backward seed shape mismatch")
    tape = node.tape
    for n in tape._nodes:
        n.grad = None
    node.grad = seed
    for n in reversed(tape._nodes):
        if n.grad is None or n._push is None:
            continue
        parent_grads = n._push(n.grad)
        for parent, g in zip(n.parents, parent_grads):
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


def backward(loss: Node) -> None:
    """Populate ``grad`` on every node reachable from the scalar ``loss``."""
    if loss.value.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    _backward_from(loss, np.ones(()))


def jacobian(f, x) -> np.ndarray:
    """Jacobian of a vector map assembled row by row from backward passes.

    ``f(tape, x_node)`` must return a node of the same shape as ``x``.
    """
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError("jacobian: x must be a 1-d tensor")
    tape = Tape()
    xn = tape.leaf(x)
    y = f(tape, xn)
    if y.value.shape != x.shape:
        raise ShapeError(
            f"jacobian: map is not square ({x.shape} -> {y.value.shape})"
        )
    d = x.size
    jac = np.zeros((d, d))
    for i in range(d):
        seed = np.zeros(d)
        seed[i] = 1.0
        _backward_from(y, seed)
        jac[i, :] = xn.grad
    return jac

"""Layer-output stacks and the generalized residual combination rules.

A ``LayerStack`` collects, per forward pass, the model input and every block
output (autodiff nodes of identical shape).  Combines form the next block
input as a weighted column sum:

* v1: one scalar weight per column,
* v2: one weight per (feature, column),
* v3: v2 plus an input-dependent, relu-gated per-column offset shared
  across features.

Weights initialize to ones (offsets to zeros), so at initialization every
combine reduces to the plain residual sum and every variant computes exactly
the standard residual network.  Plain residual models reuse the same
reduction with constant ones, which makes that equivalence bit-exact.

First/last-k mode keeps the model input, a running sum of evicted
intermediate outputs, and the last k block outputs.  The reduction order is
pinned as: running sum first, then surviving block outputs oldest to newest,
then the model input last.  Because the running sum accumulates evicted
outputs in the same (oldest-first) order, a truncated stack under all-ones
weights sums in exactly the same floating-point order as the full stack, so
truncation is bit-exact there too.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .linalg import ShapeError
from .params import ParamSet
from .rng import Rng

VARIANTS = ("v1", "v2", "v3")
ARCHS = ("baseline", "resnet", "v1", "v2", "v3")


def stack_width(position: int, k: int | None) -> int:
    """Stack width seen by block ``position`` (1-based; width before push).

    Full mode: the input plus ``position - 1`` outputs.  First/last-k keeps
    at most k + 2 columns.
    """
    if position < 1:
        raise ValueError("position is 1-based")
    width = position
    if k is not None:
        width = min(width, k + 2)
    return width


class LayerStack:
    """Per-forward-pass stack of layer outputs (mode: full or first/last-k)."""

    def __init__(self, input_node: Node, k: int | None = None):
        if k is not None and k < 0:
            raise ValueError("k must be nonnegative")
        self.input = input_node
        self.k = k
        self.running_sum: Node | None = None
        self.window: list[Node] = []
        self.pushed = 0

    def push(self, out: Node) -> None:
        if out.value.shape != self.input.value.shape:
            raise ShapeError(
                f"stack push: shape {out.value.shape} != input shape "
                f"{self.input.value.shape}"
            )
        self.window.append(out)
        self.pushed += 1
        if self.k is not None and len(self.window) > self.k:
            evicted = self.window.pop(0)
            if self.running_sum is None:
                self.running_sum = evicted
            else:
                self.running_sum = ad.add(self.running_sum, evicted)

    @property
    def width(self) -> int:
        return 1 + (1 if self.running_sum is not None else 0) + len(self.window)

    def ordered(self) -> list[Node]:
        """Columns in the pinned reduction order (input last)."""
        cols = []
        if self.running_sum is not None:
            cols.append(self.running_sum)
        cols.extend(self.window)
        cols.append(self.input)
        return cols

    def slot_labels(self) -> list[str]:
        """Label per slot, aligned with ``ordered()`` (window entries carry
        the 1-based index of the block that produced them)."""
        labels = []
        if self.running_sum is not None:
            labels.append("running_sum")
        first = self.pushed - len(self.window) + 1
        labels.extend(f"out{first + j:02d}" for j in range(len(self.window)))
        labels.append("input")
        return labels


class GrnParams:
    """Learnable combine weights for one stack consumer.

    ``b`` rows are indexed by stack slot in reduction order; v1 stores one
    scalar per slot, v2/v3 store a d-vector per slot, and v3 adds the gate
    direction ``w``.
    """

    def __init__(self, params: ParamSet, name: str, variant: str, width: int, d: int):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant: {variant}")
        self.name = name
        self.variant = variant
        self.width = width
        self.d = d
        if variant == "v1":
            self.b = params.add(f"{name}.b", np.ones(width))
        else:
            self.b = params.add(f"{name}.b", np.ones((width, d)))
        self.w = params.add(f"{name}.w", np.zeros((d, 1))) if variant == "v3" else None


def _accumulate(terms: list[Node]) -> Node:
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


def combine_ones(cols: list[Node]) -> Node:
    """Plain residual sum in the pinned reduction order."""
    return _accumulate(cols)


def combine_v1(cols: list[Node], b: Node) -> Node:
    if b.value.shape != (len(cols),):
        raise ShapeError(
            f"combine_v1: got {len(cols)} columns but weights {b.value.shape}"
        )
    terms = [ad.hadamard(col, ad.narrow(b, 0, j, 1)) for j, col in enumerate(cols)]
    return _accumulate(terms)


def combine_v2(cols: list[Node], b: Node) -> Node:
    d = cols[0].value.shape[-1]
    if b.value.shape != (len(cols), d):
        raise ShapeError(
            f"combine_v2: need weights ({len(cols)}, {d}), got {b.value.shape}"
        )
    terms = [ad.hadamard(col, ad.narrow(b, 0, j, 1)) for j, col in enumerate(cols)]
    return _accumulate(terms)


def combine_v3(cols: list[Node], b: Node, w: Node) -> Node:
    d = cols[0].value.shape[-1]
    if b.value.shape != (len(cols), d):
        raise ShapeError(
            f"combine_v3: need weights ({len(cols)}, {d}), got {b.value.shape}"
        )
    if w.value.shape != (d, 1):
        raise ShapeError(f"combine_v3: gate must be ({d}, 1), got {w.value.shape}")
    terms = []
    for j, col in enumerate(cols):
        gate = ad.relu(ad.matmul(col, w))          # one offset per row, all features
        weights = ad.add(ad.narrow(b, 0, j, 1), gate)
        terms.append(ad.hadamard(col, weights))
    return _accumulate(terms)


def combine(stack: LayerStack, grn: GrnParams | None,
            binding: dict[str, Node]) -> Node:
    """Apply a combine (or the plain residual sum when ``grn`` is None)."""
    cols = stack.ordered()
    if grn is None:
        return combine_ones(cols)
    b = binding[grn.b.name]
    if grn.variant == "v1":
        return combine_v1(cols, b)
    if grn.variant == "v2":
        return combine_v2(cols, b)
    return combine_v3(cols, b, binding[grn.w.name])


class LinearModel:
    """Stack of T rank-limited linear blocks under one of five wirings.

    Each block's map is a d x r_t times r_t x d factored matrix (no
    activation).  ``baseline`` chains blocks without skips; ``resnet`` uses
    plain sums; v1/v2/v3 use learned combines, including one final combine
    after the last block.
    """

    def __init__(self, arch: str, d: int, layers: int, ranks: list[int],
                 init_rng: Rng, k: int | None = None,
                 init_std: float | None = None, activation: str = "none"):
        if arch not in ARCHS:
            raise ValueError(f"unknown arch: {arch}")
        if len(ranks) != layers or any(r < 1 for r in ranks):
            raise ValueError(
                f"ranks must list {layers} positive ints, got {ranks}"
            )
        if activation not in ("none", "relu"):
            raise ValueError(f"unknown activation: {activation}")
        self.arch = arch
        self.d = d
        self.layers = layers
        self.ranks = list(ranks)
        self.k = k
        self.activation = activation
        self.params = ParamSet()
        std = 1.0 / np.sqrt(d) if init_std is None else init_std
        for t in range(1, layers + 1):
            r = ranks[t - 1]
            self.params.add(f"layer{t:02d}.w_in", init_rng.normals((d, r)) * std)
            self.params.add(f"layer{t:02d}.w_out", init_rng.normals((r, d)) * std)
        self.combines: list[GrnParams | None] = []
        if arch in VARIANTS:
            for t in range(1, layers + 2):
                width = stack_width(t, k)
                self.combines.append(
                    GrnParams(self.params, f"combine{t:02d}", arch, width, d)
                )
        else:
            self.combines = [None] * (layers + 1)

    def _block(self, binding: dict[str, Node], t: int, g: Node) -> Node:
        h = ad.matmul(g, binding[f"layer{t:02d}.w_in"])
        if self.activation == "relu":
            h = ad.relu(h)
        return ad.matmul(h, binding[f"layer{t:02d}.w_out"])

    def forward(self, tape: Tape, binding: dict[str, Node], x: Node) -> Node:
        """Map a batch (n, d) through the network."""
        if self.arch == "baseline":
            h = x
            for t in range(1, self.layers + 1):
                h = self._block(binding, t, h)
            return h
        stack = LayerStack(x, self.k)
        for t in range(1, self.layers + 1):
            g = combine(stack, self.combines[t - 1], binding)
            stack.push(self._block(binding, t, g))
        return combine(stack, self.combines[self.layers], binding)

    def loss(self, tape: Tape, binding: dict[str, Node], x: np.ndarray,
             y: np.ndarray) -> Node:
        """Mean per-example squared error over a batch."""
        pred = self.forward(tape, binding, tape.constant(x))
        diff = ad.sub(pred, tape.constant(y))
        return ad.scale(ad.sum_(ad.hadamard(diff, diff)), 1.0 / x.shape[0])

    def matrix(self) -> np.ndarray:
        """The d x d linear map this model currently computes (via jacobian)."""

        def f(tape, xn):
            binding = self.params.bind(tape)
            out = self.forward(tape, binding, ad.reshape(xn, (1, self.d)))
            return ad.reshape(out, (self.d,))

        return ad.jacobian(f, np.zeros(self.d))

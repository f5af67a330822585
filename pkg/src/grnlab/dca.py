"""Deep cross-attention decoder blocks and the toy autoregressive LM.

A DCA block feeds three independent v3 combines of the layer stack into the
query, key, and value inputs of standard multi-head causal attention (the
attention mechanism itself is unchanged).  The block's stack contribution is

    a + FFN(LN2(s_v + a)),   a = attention(LN1(s_q), LN1(s_k), LN1(s_v))

with pre-norm placement and the FFN skip taken from the value stream.  At
initialization (combine weights all ones, gates zero) s_q = s_k = s_v equals
the plain residual stream, so the whole model computes exactly a standard
pre-norm transformer; the baseline transformer here is literally the same
code with constant-ones combines, which makes that equality bit-exact and
makes retrofitting a trained baseline a pure weight copy.

One layernorm parameter set is shared by the q/k/v inputs within a block
(they coincide at init); positional embeddings are learned absolute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MASK_NEG, Node, Tape
from .grn import GrnParams, LayerStack, combine, stack_width
from .linalg import ShapeError
from .params import ParamSet
from .rng import Rng

LM_ARCHS = ("transformer", "dca")


@dataclass
class LmConfig:
    vocab_size: int = 256
    d: int = 64
    heads: int = 4
    blocks: int = 4
    seq_len: int = 64
    ffn_mult: int = 4
    k: int | None = None

    def validate(self) -> None:
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.vocab_size < 1 or self.blocks < 1 or self.seq_len < 1:
            raise ValueError("vocab_size, blocks and seq_len must be positive")
        if self.k is not None and self.k < 0:
            raise ValueError("k must be nonnegative")


def causal_mask(tape: Tape, seq: int) -> Node:
    """Additive mask: 0 where position i may attend to j <= i, else -1e30."""
    m = np.triu(np.full((seq, seq), MASK_NEG), k=1)
    return tape.constant(m)


def attention(q: Node, k: Node, v: Node, wq: Node, wk: Node, wv: Node,
              wo: Node, heads: int, mask: Node, batch: int = 1) -> Node:
    """Multi-head scaled dot-product attention with a causal mask.

    ``q``, ``k``, ``v`` are (batch*seq, d) input streams; projections and the
    output matrix are applied inside.  Sequences are laid out contiguously
    along axis 0.
    """
    n, d = q.value.shape
    if k.value.shape != (n, d) or v.value.shape != (n, d):
        raise ShapeError("attention: q, k, v must share one (n, d) shape")
    if d % heads != 0:
        raise ShapeError(f"attention: d={d} not divisible by heads={heads}")
    if n % batch != 0:
        raise ShapeError(f"attention: {n} rows not divisible by batch={batch}")
    seq = n // batch
    dh = d // heads
    qp = ad.matmul(q, wq)
    kp = ad.matmul(k, wk)
    vp = ad.matmul(v, wv)
    per_item = []
    for b in range(batch):
        qb = ad.narrow(qp, 0, b * seq, seq)
        kb = ad.narrow(kp, 0, b * seq, seq)
        vb = ad.narrow(vp, 0, b * seq, seq)
        head_outs = []
        for h in range(heads):
            qh = ad.narrow(qb, 1, h * dh, dh)
            kh = ad.narrow(kb, 1, h * dh, dh)
            vh = ad.narrow(vb, 1, h * dh, dh)
            scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / np.sqrt(dh))
            probs = ad.softmax(ad.add(scores, mask), axis=-1)
            head_outs.append(ad.matmul(probs, vh))
        per_item.append(ad.concat(head_outs, axis=1))
    ctx = per_item[0] if batch == 1 else ad.concat(per_item, axis=0)
    return ad.matmul(ctx, wo)


class LmModel:
    """Byte-level causal LM built from DCA or plain transformer blocks."""

    def __init__(self, arch: str, config: LmConfig, init_rng: Rng):
        if arch not in LM_ARCHS:
            raise ValueError(f"unknown LM arch: {arch}")
        config.validate()
        self.arch = arch
        self.config = config
        self.params = ParamSet()
        c = config
        # Random draws happen in a fixed order shared by both architectures,
        # so a transformer and a DCA model built from the same seed have
        # identical shared weights.
        self.params.add("embed.tok", init_rng.normals((c.vocab_size, c.d)) * 0.02)
        self.params.add("embed.pos", init_rng.normals((c.seq_len, c.d)) * 0.02)
        s_d = 1.0 / np.sqrt(c.d)
        s_f = 1.0 / np.sqrt(c.ffn_mult * c.d)
        for i in range(1, c.blocks + 1):
            pre = f"block{i:02d}"
            self.params.add(f"{pre}.attn.wq", init_rng.normals((c.d, c.d)) * s_d)
            self.params.add(f"{pre}.attn.wk", init_rng.normals((c.d, c.d)) * s_d)
            self.params.add(f"{pre}.attn.wv", init_rng.normals((c.d, c.d)) * s_d)
            self.params.add(f"{pre}.attn.wo", init_rng.normals((c.d, c.d)) * s_d)
            self.params.add(f"{pre}.ffn.w1", init_rng.normals((c.d, c.ffn_mult * c.d)) * s_d)
            self.params.add(f"{pre}.ffn.w2", init_rng.normals((c.ffn_mult * c.d, c.d)) * s_f)
            self.params.add(f"{pre}.ln1.g", np.ones(c.d))
            self.params.add(f"{pre}.ln1.b", np.zeros(c.d))
            self.params.add(f"{pre}.ln2.g", np.ones(c.d))
            self.params.add(f"{pre}.ln2.b", np.zeros(c.d))
        self.params.add("final.ln.g", np.ones(c.d))
        self.params.add("final.ln.b", np.zeros(c.d))
        self.params.add("final.proj", init_rng.normals((c.d, c.vocab_size)) * s_d)
        self.block_grns: list[dict[str, GrnParams]] = []
        self.final_grn: GrnParams | None = None
        if arch == "dca":
            for i in range(1, c.blocks + 1):
                width = stack_width(i, c.k)
                self.block_grns.append({
                    role: GrnParams(self.params, f"block{i:02d}.grn_{role}",
                                    "v3", width, c.d)
                    for role in ("q", "k", "v")
                })
            self.final_grn = GrnParams(
                self.params, "final.combine", "v3",
                stack_width(c.blocks + 1, c.k), c.d)

    def forward(self, tape: Tape, binding: dict[str, Node],
                tokens: np.ndarray) -> Node:
        """Logits (batch*seq, vocab) for a (batch, seq) token array."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        batch, seq = tokens.shape
        c = self.config
        if seq > c.seq_len:
            raise ShapeError(f"sequence length {seq} exceeds limit {c.seq_len}")
        flat = tokens.reshape(-1)
        emb = ad.gather(binding["embed.tok"], flat)
        pos_ids = np.tile(np.arange(seq), batch)
        pos = ad.gather(binding["embed.pos"], pos_ids)
        x0 = ad.add(emb, pos)
        mask = causal_mask(tape, seq)
        stack = LayerStack(x0, c.k)
        for i in range(1, c.blocks + 1):
            pre = f"block{i:02d}"
            if self.arch == "dca":
                grns = self.block_grns[i - 1]
                s_q = combine(stack, grns["q"], binding)
                s_k = combine(stack, grns["k"], binding)
                s_v = combine(stack, grns["v"], binding)
            else:
                s_q = s_k = s_v = combine(stack, None, binding)
            g1, b1 = binding[f"{pre}.ln1.g"], binding[f"{pre}.ln1.b"]
            ln_q = ad.layernorm(s_q, g1, b1)
            ln_k = ln_q if s_k is s_q else ad.layernorm(s_k, g1, b1)
            ln_v = ln_q if s_v is s_q else ad.layernorm(s_v, g1, b1)
            a = attention(ln_q, ln_k, ln_v,
                          binding[f"{pre}.attn.wq"], binding[f"{pre}.attn.wk"],
                          binding[f"{pre}.attn.wv"], binding[f"{pre}.attn.wo"],
                          c.heads, mask, batch)
            h = ad.layernorm(ad.add(s_v, a),
                             binding[f"{pre}.ln2.g"], binding[f"{pre}.ln2.b"])
            ffn = ad.matmul(ad.relu(ad.matmul(h, binding[f"{pre}.ffn.w1"])),
                            binding[f"{pre}.ffn.w2"])
            stack.push(ad.add(a, ffn))
        y = combine(stack, self.final_grn, binding)
        y = ad.layernorm(y, binding["final.ln.g"], binding["final.ln.b"])
        return ad.matmul(y, binding["final.proj"])

    def loss(self, tape: Tape, binding: dict[str, Node],
             tokens: np.ndarray) -> Node:
        """Mean next-token cross entropy over a (batch, seq+1) token array."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        inputs = tokens[:, :-1]
        targets = tokens[:, 1:].reshape(-1)
        logits = self.forward(tape, binding, inputs)
        return ad.mean(ad.cross_entropy(logits, targets))

    def eval_loss(self, tokens: np.ndarray) -> float:
        tape = Tape()
        binding = self.params.bind(tape)
        return float(self.loss(tape, binding, tokens).value)


def retrofit(baseline: LmModel) -> LmModel:
    """Wrap a trained baseline transformer in DCA wiring without changing
    its function: shared weights are copied, combine weights start at ones
    and gates at zero."""
    if baseline.arch != "transformer":
        raise ValueError("retrofit expects a baseline transformer model")
    model = LmModel("dca", baseline.config, Rng(0))
    model.params.load_values(baseline.params.values(), strict=False)
    return model


def load_lm(arch: str, config: LmConfig, values: dict[str, np.ndarray]) -> LmModel:
    """Rebuild a model from checkpointed values, verifying the architecture."""
    model = LmModel(arch, config, Rng(0))
    missing = [n for n in model.params.names() if n not in values]
    extra = [n for n in values if n not in model.params]
    if missing or extra:
        raise ValueError(
            f"checkpoint does not match architecture {arch}: "
            f"missing {missing[:3]}, unexpected {extra[:3]}"
        )
    model.params.load_values(values)
    return model

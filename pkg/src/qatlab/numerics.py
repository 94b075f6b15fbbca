"""Small dense-tensor engine with reverse-mode gradients.

Only the operations the decoder model needs are provided. Each op is fused
(forward and hand-derived backward live together), so a graph for one
micro-batch holds a few dozen nodes rather than thousands.

Arrays are float32 by default; pass float64 data for gradient checking.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

RMS_EPS = 1e-6
ROPE_BASE = 10000.0


class ConfigError(ValueError):
    """Raised for shape or configuration mismatches."""


class DataError(ValueError):
    """Raised for invalid data (bad token ids, empty corpora, ...)."""


class NumericsError(ArithmeticError):
    """Raised when a computation produces non-finite values."""


class Tensor:
    """An ndarray plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.dtype})"


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    out.parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in parents)
    out.backward_fn = backward_fn if out.requires_grad else None
    out.op = op
    return out


class Graph:
    """Topologically ordered view of everything a root tensor depends on.

    ``nodes[i]`` is an op record, ``parents[i]`` the indices of its inputs.
    Parents always precede children, so a reverse sweep visits every node
    exactly once after all of its consumers.
    """

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.nodes = order
        index = {id(n): i for i, n in enumerate(order)}
        self.parents = [[index[id(p)] for p in n.parents] for n in order]
        self.grads: list[np.ndarray | None] = [None] * len(order)
        self.visits = 0

    def backward(self, seed: np.ndarray | float = 1.0) -> None:
        """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf."""
        root = self.nodes[-1]
        self.grads = [None] * len(self.nodes)
        self.grads[-1] = np.broadcast_to(np.asarray(seed, dtype=root.dtype), root.shape).copy()
        self.visits = 0
        for i in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[i]
            g = self.grads[i]
            self.visits += 1
            if g is None or not node.requires_grad:
                continue
            if node.backward_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            pgrads = node.backward_fn(g)
            for pi, pg in zip(self.parents[i], pgrads):
                if pg is None or not self.nodes[pi].requires_grad:
                    continue
                cur = self.grads[pi]
                self.grads[pi] = pg if cur is None else cur + pg
            self.grads[i] = None


def backward(root: Tensor, seed: float = 1.0) -> Graph:
    graph = Graph(root)
    graph.backward(seed)
    return graph


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply ``x`` by a 0-d tensor ``s`` (used for the skip gates)."""
    if s.data.ndim != 0:
        raise ConfigError("scale: multiplier must be a scalar tensor")

    def bwd(g):
        return g * s.data, np.asarray(np.sum(g * x.data), dtype=s.dtype)

    return _node(x.data * s.data, (x, s), bwd, "scale")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def linear(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w.T`` with ``w`` stored as [out, in]."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ConfigError(f"linear: cannot apply weight {w.shape} to input {x.shape}")
    xd, wd = x.data, w.data

    def bwd(g):
        gx = g @ wd
        gw = g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1])
        return gx, gw

    return _node(xd @ wd.T, (x, w), bwd, "linear")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise DataError(f"token id out of range for vocabulary of {vocab}")

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (gt,)

    return _node(table.data[ids], (table,), bwd, "embedding")


def rmsnorm(x: Tensor, gain: Tensor, eps: float = RMS_EPS) -> Tensor:
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,):
        raise ConfigError(f"rmsnorm: gain shape {gain.shape} does not match last dim {d}")
    xd = x.data
    inv = 1.0 / np.sqrt(np.mean(xd * xd, axis=-1, keepdims=True) + eps)
    normed = xd * inv

    def bwd(g):
        gn = g * gain.data
        gx = inv * (gn - normed * np.mean(gn * normed, axis=-1, keepdims=True))
        gg = np.sum((g * normed).reshape(-1, d), axis=0)
        return gx, gg

    return _node(normed * gain.data, (x, gain), bwd, "rmsnorm")


def relu2(x: Tensor) -> Tensor:
    pos = np.maximum(x.data, 0)
    return _node(pos * pos, (x,), lambda g: (2 * pos * g,), "relu2")


def rope_angles(seq: int, head_dim: int, base: float = ROPE_BASE, dtype=np.float64) -> np.ndarray:
    """Rotation angles [seq, head_dim/2]: position * base**(-2i/head_dim)."""
    if head_dim % 2:
        raise ConfigError(f"rope: head_dim must be even, got {head_dim}")
    freqs = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    return (np.arange(seq, dtype=np.float64)[:, None] * freqs[None, :]).astype(dtype)


@lru_cache(maxsize=32)
def _rope_tables(seq: int, head_dim: int, base: float, dtype: str):
    ang = rope_angles(seq, head_dim, base)
    return np.cos(ang).astype(dtype)[:, None, :], np.sin(ang).astype(dtype)[:, None, :]


def rope_apply(x: Tensor, base: float = ROPE_BASE) -> Tensor:
    """Rotate channel pairs (i, i + head_dim/2) of a [..., seq, heads, head_dim] tensor."""
    seq, head_dim = x.shape[-3], x.shape[-1]
    cos, sin = _rope_tables(seq, head_dim, float(base), x.dtype.name)
    half = head_dim // 2
    x1, x2 = x.data[..., :half], x.data[..., half:]
    out = np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)

    def bwd(g):
        g1, g2 = g[..., :half], g[..., half:]
        return (np.concatenate([g1 * cos + g2 * sin, g2 * cos - g1 * sin], axis=-1),)

    return _node(out, (x,), bwd, "rope")


def _grouped(q: np.ndarray, k: np.ndarray, v: np.ndarray):
    """Lay out [..., S, H, D] arrays as [..., Hkv, G*S, D] queries and [..., Hkv, S, D] keys/values.

    Stacking the G query heads of a group along the row axis turns grouped
    attention into one plain batched matmul per KV head.
    """
    seq, hq, dh = q.shape[-3:]
    hkv = k.shape[-2]
    if hq % hkv:
        raise ConfigError(f"gqa: {hq} query heads not divisible by {hkv} kv heads")
    lead = q.shape[:-3]
    qg = np.moveaxis(q.reshape(*lead, seq, hkv, hq // hkv, dh), -4, -2)  # [..., Hkv, G, S, D]
    qg = qg.reshape(*lead, hkv, (hq // hkv) * seq, dh)
    kg = np.moveaxis(k, -3, -2)
    vg = np.moveaxis(v, -3, -2)
    return qg, kg, vg


def causal_attention_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Softmax attention weights [..., Hkv, group, S, S] with a causal mask."""
    qg, kg, _ = _grouped(q, k, k)
    p = _softmax_scores(qg, kg)
    seq = k.shape[-3]
    return p.reshape(*p.shape[:-2], -1, seq, seq)


@lru_cache(maxsize=32)
def _causal_bias(seq: int, dtype: str) -> np.ndarray:
    return np.triu(np.full((seq, seq), -np.inf, dtype=dtype), k=1)


def _softmax_scores(qg, kg):
    """Row softmax of masked scaled scores, returned as [..., Hkv, G*S, S]."""
    seq, dh = kg.shape[-2], qg.shape[-1]
    scores = qg @ np.swapaxes(kg, -1, -2)
    scores *= qg.dtype.type(1.0 / math.sqrt(dh))
    view = scores.reshape(*scores.shape[:-2], -1, seq, seq)
    view += _causal_bias(seq, qg.dtype.name)
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores, out=scores)
    p /= p.sum(axis=-1, keepdims=True)
    return p


def gqa_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Causal grouped-query attention over [..., seq, heads, head_dim] inputs."""
    if k.shape != v.shape or q.shape[:-2] != k.shape[:-2] or q.shape[-1] != k.shape[-1]:
        raise ConfigError(f"gqa: incompatible shapes q={q.shape} k={k.shape} v={v.shape}")
    qg, kg, vg = _grouped(q.data, k.data, v.data)
    p = _softmax_scores(qg, kg)
    og = p @ vg  # [..., Hkv, G*S, D]
    out_shape = q.shape
    lead, seq, hq, dh = q.shape[:-3], q.shape[-3], q.shape[-2], q.shape[-1]
    hkv = k.shape[-2]
    inv_sqrt = q.dtype.type(1.0 / math.sqrt(dh))

    def to_heads(a):  # [..., Hkv, G*S, D] -> [..., S, Hq, D]
        a = a.reshape(*lead, hkv, hq // hkv, seq, dh)
        return np.moveaxis(a, -2, -4).reshape(out_shape)

    def from_heads(g):  # inverse of to_heads
        g = np.moveaxis(g.reshape(*lead, seq, hkv, hq // hkv, dh), -4, -2)
        return g.reshape(*lead, hkv, (hq // hkv) * seq, dh)

    def kv_heads(a):  # [..., Hkv, S, D] -> [..., S, Hkv, D]
        return np.moveaxis(a, -3, -2)

    def bwd(g):
        gg = from_heads(g)
        gv = np.swapaxes(p, -1, -2) @ gg
        gs = gg @ np.swapaxes(vg, -1, -2)
        gs -= np.sum(gs * p, axis=-1, keepdims=True)
        gs *= p
        gs *= inv_sqrt
        gq = gs @ kg
        gk = np.swapaxes(gs, -1, -2) @ qg
        return to_heads(gq), kv_heads(gk), kv_heads(gv)

    return _node(to_heads(og), (q, k, v), bwd, "gqa_attention")


def cross_entropy_nats(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean next-token negative log-likelihood in nats."""
    targets = np.asarray(targets)
    vocab = logits.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    tflat = targets.reshape(-1)
    if tflat.shape[0] != flat.shape[0]:
        raise ConfigError("cross_entropy: targets do not match logits")
    if tflat.size and (tflat.min() < 0 or tflat.max() >= vocab):
        raise DataError(f"target id out of range for vocabulary of {vocab}")
    shifted = flat - flat.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(flat.shape[0])
    n = flat.shape[0]
    loss = np.asarray(np.mean(lse - shifted[rows, tflat]), dtype=logits.dtype)

    def bwd(g):
        probs = np.exp(shifted - lse[:, None])
        probs[rows, tflat] -= 1.0
        return ((probs * (g / n)).reshape(logits.shape),)

    return _node(loss, (logits,), bwd, "cross_entropy")


def straight_through(x: Tensor, forward_value: np.ndarray, op: str = "ste") -> Tensor:
    """Forward ``forward_value``; pass the incoming gradient to ``x`` unchanged."""
    if forward_value.shape != x.shape:
        raise ConfigError("straight_through: value shape must match input")
    return _node(np.asarray(forward_value, dtype=x.dtype), (x,), lambda g: (g,), op)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-5,
               coords: Sequence[int] | None = None) -> float:
    """Max relative error between backprop and central differences.

    ``f`` maps a float64 leaf tensor to a scalar tensor. ``coords`` limits the
    check to a subset of flat indices (all coordinates by default).
    """
    x = np.array(x, dtype=np.float64)
    leaf = Tensor(x.copy(), requires_grad=True)
    out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise NumericsError("grad_check: f(x) is not finite")
    backward(out)
    analytic = np.zeros_like(x) if leaf.grad is None else leaf.grad
    idx = range(x.size) if coords is None else coords
    worst = 0.0
    flat = x.reshape(-1)
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = float(f(Tensor(x.copy())).data)
        flat[i] = old - h
        fm = float(f(Tensor(x.copy())).data)
        flat[i] = old
        num = (fp - fm) / (2 * h)
        ana = float(analytic.reshape(-1)[i])
        err = abs(ana - num) / (abs(ana) + abs(num) + 1e-12)
        worst = max(worst, err)
    return worst

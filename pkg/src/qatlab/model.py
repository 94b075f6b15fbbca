"""Decoder-only transformer family: GQA, RMSNorm pre-norm, ReLU^2 MLP, RoPE,
tied embeddings and zero-gated U-net skips between symmetric layer pairs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import ConfigError, DataError, Tensor
from .quant import QuantMode, fake_quant, get_mode


@dataclass(frozen=True)
class ModelConfig:
    model_dim: int
    num_layers: int
    num_heads: int = 8
    num_kv_heads: int = 4
    vocab_size: int = 8192
    mlp_mult: int = 3
    seq_len: int = 2048
    quantize_embeddings: bool = True
    rope_base: float = nx.ROPE_BASE

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by {self.num_heads} heads")
        if self.num_heads % self.num_kv_heads:
            raise ConfigError(f"{self.num_heads} heads not divisible by {self.num_kv_heads} kv heads")
        if self.head_dim % 2:
            raise ConfigError(f"head_dim {self.head_dim} must be even for rotary embeddings")
        if self.num_layers < 1 or self.vocab_size < 2:
            raise ConfigError("need at least one layer and two vocabulary entries")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def kv_dim(self) -> int:
        return self.num_kv_heads * self.head_dim

    @property
    def num_skips(self) -> int:
        return self.num_layers // 2


# (model_dim, num_layers) as printed for the paper sizes.
PAPER_SIZES = {
    "3M": (144, 8),
    "5M": (192, 10),
    "8M": (240, 12),
    "10M": (256, 12),
    "15M": (320, 14),
    "30M": (432, 16),
    "50M": (528, 18),
    "100M": (688, 22),
    "175M": (832, 26),
    "250M": (960, 28),
    "350M": (1088, 32),
}

DESK_SIZES = {
    "desk-S": (64, 4),
    "desk-M": (128, 6),
}

PRINTED_HEAD_DIM = {"15M": 40, "30M": 54, "50M": 66, "100M": 86}
PRINTED_PARAMS_M = {"15M": 15.5, "30M": 30.4, "50M": 49.5, "100M": 99.4}


def size_preset(name: str, seq_len: int | None = None) -> ModelConfig:
    if name in PAPER_SIZES:
        dim, layers = PAPER_SIZES[name]
        cfg = ModelConfig(dim, layers, vocab_size=8192, seq_len=seq_len or 2048)
        if name in PRINTED_HEAD_DIM:
            assert cfg.head_dim == PRINTED_HEAD_DIM[name], name
        return cfg
    if name in DESK_SIZES:
        dim, layers = DESK_SIZES[name]
        return ModelConfig(dim, layers, vocab_size=256, seq_len=seq_len or 256)
    raise ConfigError(f"unknown size preset {name!r}")


def size_in_millions(name: str) -> float:
    """Nominal size for scaling fits ("30M" -> 30.0); desk presets use their exact count."""
    if name.endswith("M") and name[:-1].replace(".", "").isdigit():
        return float(name[:-1])
    return param_count(size_preset(name)) / 1e6


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, kv, hidden = cfg.model_dim, cfg.kv_dim, cfg.mlp_mult * cfg.model_dim
    shapes: dict[str, tuple[int, ...]] = {"embed": (cfg.vocab_size, d)}
    for i in range(cfg.num_layers):
        p = f"layers.{i}."
        shapes[p + "attn_norm"] = (d,)
        shapes[p + "wq"] = (d, d)
        shapes[p + "wk"] = (kv, d)
        shapes[p + "wv"] = (kv, d)
        shapes[p + "wo"] = (d, d)
        shapes[p + "mlp_norm"] = (d,)
        shapes[p + "w_up"] = (hidden, d)
        shapes[p + "w_down"] = (d, hidden)
    shapes["final_norm"] = (d,)
    for i in range(cfg.num_skips):
        shapes[f"skip_gates.{i}"] = ()
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return int(sum(int(np.prod(s)) for s in param_shapes(cfg).values()))


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


class Model:
    """Named parameter tensors plus the forward pass."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        for name, shape in param_shapes(cfg).items():
            if name == "embed":
                arr = _trunc_normal(rng, shape, 0.02)
            elif len(shape) == 2:
                arr = rng.standard_normal(shape) / np.sqrt(shape[1])
            elif name.startswith("skip_gates"):
                arr = np.zeros(shape)
            else:
                arr = np.ones(shape)
            self.params[name] = Tensor(arr.astype(self.dtype), requires_grad=True)

    # -- parameter views ---------------------------------------------------

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def matrix_names(self) -> list[str]:
        """All 2-D trainable matrices (the probe set and the default quantised set)."""
        return [k for k, t in self.params.items() if t.data.ndim == 2]

    def quantized_names(self) -> list[str]:
        return [k for k in self.matrix_names() if k != "embed" or self.cfg.quantize_embeddings]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray | None]:
        return {k: t.grad for k, t in self.params.items()}

    def n_params(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    # -- forward -----------------------------------------------------------

    def _weights(self, mode: QuantMode) -> dict[str, Tensor]:
        qset = set(self.quantized_names())
        return {k: (fake_quant(t, mode) if k in qset else t) for k, t in self.params.items()}

    def _block(self, x: Tensor, w: dict[str, Tensor], i: int, batch: int, seq: int) -> Tensor:
        cfg = self.cfg
        p = f"layers.{i}."
        h = nx.rmsnorm(x, w[p + "attn_norm"])
        q = nx.reshape(nx.linear(h, w[p + "wq"]), (batch, seq, cfg.num_heads, cfg.head_dim))
        k = nx.reshape(nx.linear(h, w[p + "wk"]), (batch, seq, cfg.num_kv_heads, cfg.head_dim))
        v = nx.reshape(nx.linear(h, w[p + "wv"]), (batch, seq, cfg.num_kv_heads, cfg.head_dim))
        q = nx.rope_apply(q, cfg.rope_base)
        k = nx.rope_apply(k, cfg.rope_base)
        att = nx.reshape(nx.gqa_attention(q, k, v), (batch, seq, cfg.model_dim))
        x = nx.add(x, nx.linear(att, w[p + "wo"]))
        h = nx.rmsnorm(x, w[p + "mlp_norm"])
        h = nx.linear(nx.relu2(nx.linear(h, w[p + "w_up"])), w[p + "w_down"])
        return nx.add(x, h)

    def logits(self, inputs: np.ndarray, mode="FP16", skips: bool = True) -> Tensor:
        cfg = self.cfg
        inputs = np.asarray(inputs)
        if inputs.ndim == 1:
            inputs = inputs[None, :]
        batch, seq = inputs.shape
        if seq > cfg.seq_len:
            raise DataError(f"sequence length {seq} exceeds model seq_len {cfg.seq_len}")
        w = self._weights(get_mode(mode))
        x = nx.embedding(w["embed"], inputs)
        L = cfg.num_layers
        saved: dict[int, Tensor] = {}
        for i in range(L):
            j = L - 1 - i
            if skips and j < i and j in saved:
                x = nx.add(x, nx.scale(saved[j], w[f"skip_gates.{j}"]))
            x = self._block(x, w, i, batch, seq)
            if i < L // 2:
                saved[i] = x
        x = nx.rmsnorm(x, w["final_norm"])
        return nx.linear(x, w["embed"])

    def forward_loss(self, tokens: np.ndarray, mode="FP16", skips: bool = True) -> Tensor:
        """Mean next-token cross-entropy (nats) of a [batch, seq+1] token block."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        logits = self.logits(tokens[:, :-1], mode, skips)
        return nx.cross_entropy_nats(logits, tokens[:, 1:])

    # -- checkpoints -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        manifest = {
            "config": asdict(self.cfg),
            "dtype": self.dtype.name,
            "tensors": [{"name": k, "shape": list(t.shape)} for k, t in self.params.items()],
        }
        blob = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, __manifest__=blob, **{k: t.data for k, t in self.params.items()})

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        with np.load(path) as z:
            manifest = json.loads(bytes(z["__manifest__"]).decode())
            model = cls(ModelConfig(**manifest["config"]), dtype=manifest["dtype"])
            for entry in manifest["tensors"]:
                arr = z[entry["name"]]
                if list(arr.shape) != entry["shape"]:
                    raise DataError(f"checkpoint tensor {entry['name']} has shape {arr.shape}")
                model.params[entry["name"]].data = arr.astype(model.dtype, copy=True)
        return model


def forward_loss(model: Model, tokens: np.ndarray, mode="FP16") -> Tensor:
    return model.forward_loss(tokens, mode)


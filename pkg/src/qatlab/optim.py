"""Muon for 2-D matrices, AdamW for everything else.

Weight decay is fixed at zero for both, so AdamW reduces to bias-corrected
Adam here; the decoupled-decay term is kept so the knob is still honoured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import ConfigError

NS_COEFFS = (3.4445, -4.7750, 2.0315)


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "muon+adamw"  # or "all_adamw"
    muon_momentum: float = 0.95
    muon_nesterov: bool = False
    ns_iters: int = 5
    ns_coeffs: tuple[float, float, float] = NS_COEFFS
    muon_shape_scale: bool = True
    weight_decay: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    adam_eps: float = 1e-10
    embed_optimizer: str = "adamw"

    def __post_init__(self):
        if self.kind not in ("muon+adamw", "all_adamw"):
            raise ConfigError(f"unknown optimiser kind {self.kind!r}")
        if self.embed_optimizer not in ("adamw", "muon"):
            raise ConfigError(f"unknown embedding optimiser {self.embed_optimizer!r}")


@dataclass
class MuonState:
    momentum: np.ndarray


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def newton_schulz(G: np.ndarray, iters: int = 5, coeffs=NS_COEFFS, eps: float = 1e-7) -> np.ndarray:
    """Quintic Newton-Schulz approximation of the orthogonal polar factor of ``G``.

    The default coefficients trade exact convergence for speed: singular values
    of the result land roughly in [0.7, 1.2] rather than at exactly 1.
    """
    if G.ndim != 2:
        raise ConfigError("newton_schulz expects a matrix")
    norm = np.linalg.norm(G)
    if norm == 0:
        return G.copy()
    a, b, c = coeffs
    X = G / (norm + eps)
    transposed = X.shape[0] > X.shape[1]
    if transposed:
        X = X.T
    for _ in range(iters):
        A = X @ X.T
        X = a * X + (b * A + c * (A @ A)) @ X
    return X.T if transposed else X


def muon_step(w: np.ndarray, grad: np.ndarray, state: MuonState | None, lr: float,
              cfg: OptimConfig = OptimConfig()):
    """One heavy-ball Muon update. Returns (new_w, state)."""
    if w.ndim != 2:
        raise ConfigError("Muon only handles 2-D parameters; route others to AdamW")
    if state is None:
        state = MuonState(np.zeros_like(w))
    buf = state.momentum
    buf *= cfg.muon_momentum
    buf += grad
    direction_src = grad + cfg.muon_momentum * buf if cfg.muon_nesterov else buf
    direction = newton_schulz(direction_src, cfg.ns_iters, cfg.ns_coeffs)
    if cfg.muon_shape_scale:
        direction = direction * math.sqrt(max(1.0, w.shape[0] / w.shape[1]))
    new_w = w - lr * direction.astype(w.dtype)
    if cfg.weight_decay:
        new_w -= lr * cfg.weight_decay * w
    return new_w, state


def adamw_step(w: np.ndarray, grad: np.ndarray, state: AdamState | None, lr: float,
               cfg: OptimConfig = OptimConfig()):
    if state is None:
        state = AdamState(np.zeros_like(w), np.zeros_like(w))
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.step += 1
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1 ** state.step)
    v_hat = state.v / (1 - b2 ** state.step)
    new_w = w - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    if cfg.weight_decay:
        new_w = new_w - lr * cfg.weight_decay * w
    return np.asarray(new_w, dtype=w.dtype), state


@dataclass
class ParamGroup:
    name: str
    rule: str  # "muon" | "adamw"
    lr_kind: str  # "matrix" | "scalar" | "embed"


def route(name: str, shape: tuple[int, ...], cfg: OptimConfig, is_embedding: bool = False) -> ParamGroup:
    """Decide which optimiser and which base LR a parameter gets."""
    if is_embedding:
        rule = "muon" if (cfg.embed_optimizer == "muon" and cfg.kind == "muon+adamw") else "adamw"
        return ParamGroup(name, rule, "embed")
    if len(shape) == 2:
        return ParamGroup(name, "muon" if cfg.kind == "muon+adamw" else "adamw", "matrix")
    return ParamGroup(name, "adamw", "scalar")


@dataclass
class Optimizer:
    """Applies the routed update rule to a dict of named parameter arrays."""

    cfg: OptimConfig
    groups: dict[str, ParamGroup]
    state: dict[str, object] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None],
             lrs: dict[str, float]) -> None:
        for name, group in self.groups.items():
            g = grads.get(name)
            if g is None:
                continue
            lr = lrs[group.lr_kind]
            fn = muon_step if group.rule == "muon" else adamw_step
            new, self.state[name] = fn(params[name], g, self.state.get(name), lr, self.cfg)
            params[name][...] = new

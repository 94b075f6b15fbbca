"""Warmup-Stable-Decay learning-rate multipliers and LR magnitude presets."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .numerics import ConfigError

WARMDOWN_TAGS = {"wd00": 0.0, "wd10": 0.10, "wd33": 0.33, "wd50": 0.50}


def warmdown_steps(total_steps: int, fraction: float) -> int:
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"warmdown fraction must lie in [0, 1), got {fraction}")
    # half-up, not banker's rounding
    return int(math.floor(fraction * total_steps + 0.5))


def warmdown_tag(fraction: float) -> str:
    for tag, frac in WARMDOWN_TAGS.items():
        if abs(frac - fraction) < 1e-12:
            return tag
    return f"wd{round(fraction * 100):02d}"


def parse_warmdown(value) -> float:
    """Accept ``0.33``, ``"0.33"`` or ``"wd33"``."""
    if isinstance(value, str) and value.lower().startswith("wd"):
        key = value.lower()
        if key in WARMDOWN_TAGS:
            return WARMDOWN_TAGS[key]
        return int(key[2:]) / 100.0
    return float(value)


@dataclass(frozen=True)
class ScheduleConfig:
    total_steps: int
    warmdown_fraction: float = 0.33
    warmup_steps: int = 100
    shape: str = "linear"

    def __post_init__(self):
        if self.shape not in ("linear", "cosine"):
            raise ConfigError(f"unknown warmdown shape {self.shape!r}")
        if self.total_steps < 1 or self.warmup_steps < 0:
            raise ConfigError("schedule needs total_steps >= 1 and warmup_steps >= 0")
        if self.warmup_steps + self.warmdown_steps > self.total_steps:
            raise ConfigError(
                f"warmup ({self.warmup_steps}) + warmdown ({self.warmdown_steps}) "
                f"exceeds total steps ({self.total_steps})")

    @property
    def warmdown_steps(self) -> int:
        return warmdown_steps(self.total_steps, self.warmdown_fraction)

    @property
    def warmdown_start(self) -> int:
        return self.total_steps - self.warmdown_steps


def lr_at(t: int, cfg: ScheduleConfig) -> float:
    """LR multiplier in [0, 1] at step ``t`` (0 <= t <= T)."""
    T = cfg.total_steps
    if t < 0 or t > T:
        raise ValueError(f"step {t} outside [0, {T}]")
    if t < cfg.warmup_steps:
        return t / cfg.warmup_steps
    wd = cfg.warmdown_steps
    if wd == 0 or t < T - wd:
        return 1.0
    u = (t - (T - wd)) / wd
    if cfg.shape == "linear":
        return 1.0 - u
    return 0.5 * (1.0 + math.cos(math.pi * u))


@dataclass(frozen=True)
class LRMagnitudes:
    matrix_lr: float
    scalar_lr: float
    tied_embed_lr: float

    def scaled(self, factor: float) -> "LRMagnitudes":
        return LRMagnitudes(self.matrix_lr * factor, self.scalar_lr * factor, self.tied_embed_lr * factor)


_LR1X = LRMagnitudes(0.0125, 0.0125, 0.0175)

LR_PRESETS = {
    "lr05": LRMagnitudes(0.00625, 0.00625, 0.00875),
    "lr1x": _LR1X,
    "lr2x": LRMagnitudes(0.025, 0.025, 0.035),
    "adamw_cal": LRMagnitudes(0.001, 0.001, 0.0014),
}


def lr_magnitudes(tag: str) -> LRMagnitudes:
    try:
        return LR_PRESETS[tag]
    except KeyError:
        raise ConfigError(f"unknown LR tag {tag!r} (expected one of {', '.join(LR_PRESETS)})") from None

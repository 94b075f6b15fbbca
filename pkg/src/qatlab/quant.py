"""Per-channel symmetric fake quantisation with straight-through gradients.

All integer modes share one scale per output row, ``s = max|w_row| / 127``.
INT6 and INT4 are sub-grids of the INT8 code space: codes are rounded to
multiples of 4 (INT6) or 16 (INT4) and clamped to the printed level sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ConfigError, Tensor, straight_through


class UnsupportedModeError(ValueError):
    pass


@dataclass(frozen=True)
class QuantMode:
    tag: str
    code_step: int = 0
    code_min: int = 0
    code_max: int = 0

    @property
    def is_float(self) -> bool:
        return self.code_step == 0

    def levels(self) -> np.ndarray:
        """Every representable integer code (empty for FP16)."""
        if self.is_float:
            return np.zeros(0, dtype=np.int64)
        return np.arange(self.code_min, self.code_max + 1, self.code_step, dtype=np.int64)

    def __str__(self) -> str:
        return self.tag


FP16 = QuantMode("FP16")
INT8 = QuantMode("INT8", 1, -127, 127)
INT6 = QuantMode("INT6", 4, -124, 124)
INT4 = QuantMode("INT4", 16, -128, 112)

MODES = {m.tag: m for m in (FP16, INT8, INT6, INT4)}


def get_mode(tag: str | QuantMode) -> QuantMode:
    if isinstance(tag, QuantMode):
        return tag
    key = str(tag).upper()
    if key not in MODES:
        raise ConfigError(f"unknown quant mode {tag!r} (expected one of {', '.join(MODES)})")
    return MODES[key]


def _array(w) -> np.ndarray:
    return w.data if isinstance(w, Tensor) else np.asarray(w)


def channel_scales(w) -> np.ndarray:
    """One scale per output row: ``max|w_row| / 127`` (0 for an all-zero row)."""
    arr = _array(w)
    if arr.ndim != 2:
        raise ConfigError(f"channel_scales expects a 2-D weight, got shape {arr.shape}")
    return np.abs(arr).max(axis=1) / arr.dtype.type(127) if arr.size else np.zeros(arr.shape[0], arr.dtype)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_codes(w, mode, scales: np.ndarray | None = None) -> np.ndarray:
    """Integer codes in INT8 code space for every element of ``w``."""
    mode = get_mode(mode)
    if mode.is_float:
        raise UnsupportedModeError("FP16 has no integer grid")
    arr = _array(w)
    s = channel_scales(arr) if scales is None else np.asarray(scales)
    s64 = s.astype(np.float64)[:, None]
    safe = np.where(s64 > 0, s64, 1.0)
    r = np.clip(round_half_away(arr.astype(np.float64) / safe), -127, 127)
    if mode.code_step > 1:
        step = mode.code_step
        r = np.clip(round_half_away(r / step) * step, mode.code_min, mode.code_max)
    r = np.where(s64 > 0, r, 0.0)
    return r.astype(np.int64)


def quantize_values(w, mode, scales: np.ndarray | None = None) -> np.ndarray:
    """Dequantised weights ``code * s`` as a plain array (no graph)."""
    mode = get_mode(mode)
    arr = _array(w)
    if mode.is_float:
        return arr.copy()
    s = channel_scales(arr) if scales is None else np.asarray(scales, dtype=arr.dtype)
    codes = quantize_codes(arr, mode, s)
    return codes.astype(arr.dtype) * s[:, None].astype(arr.dtype)


def fake_quant(w, mode, scales: np.ndarray | None = None):
    """Quantise-dequantise in the forward pass, identity in the backward pass.

    Accepts a Tensor (returns a graph node) or a bare array (returns an array).
    Scales are recomputed from ``w`` unless given explicitly; passing the
    scales a tensor was quantised with makes re-quantisation a no-op.
    """
    mode = get_mode(mode)
    if not isinstance(w, Tensor):
        return quantize_values(w, mode, scales)
    if mode.is_float:
        return w
    return straight_through(w, quantize_values(w.data, mode, scales), op=f"fake_quant[{mode.tag}]")


def grid_distance_int6(w, scales: np.ndarray | None = None) -> float:
    """RMS distance between ``w`` and its INT6 fake-quantised counterpart."""
    arr = _array(w)
    if arr.ndim != 2:
        raise ConfigError("grid_distance_int6 expects a 2-D weight")
    if arr.size == 0:
        return 0.0
    diff = arr.astype(np.float64) - quantize_values(arr, INT6, scales).astype(np.float64)
    return float(np.sqrt(np.mean(diff * diff)))

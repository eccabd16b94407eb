"""Symmetric min-max linear quantization of float weights."""
from dataclasses import dataclass

import numpy as np

from .errors import DataError, InvalidBitwidthError, ShapeError
from .packed import int_range
from .rounding import RoundingStrategy, round_array


@dataclass(eq=False)
class QuantizedTensor:
    ints: np.ndarray
    scale: np.ndarray  # float32 scalar, or per-channel vector along axis 0
    bits: int

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float32)
        if np.any(self.scale <= 0):
            raise DataError("quantization scale must be positive")

    @property
    def per_channel(self) -> bool:
        return self.scale.ndim > 0


def _check_bits(n):
    if not 2 <= n <= 8:
        raise InvalidBitwidthError(f"weight bitwidth must be in 2..8, got {n}")


def _broadcast(scale, ndim):
    scale = np.asarray(scale, dtype=np.float32)
    if scale.ndim == 0:
        return scale
    return scale.reshape((-1,) + (1,) * (ndim - 1))


def compute_scale(w, n: int, per_channel: bool = False):
    """``max|w| / (2^(n-1) - 1)`` as float32; all-zero tensors (or channels) get 1."""
    _check_bits(n)
    w = np.asarray(w, dtype=np.float32)
    if w.size == 0:
        raise DataError("cannot compute a scale for an empty tensor")
    if not np.all(np.isfinite(w)):
        raise DataError("weights contain NaN or infinity")
    qmax = (1 << (n - 1)) - 1
    if per_channel and w.ndim >= 1:
        peak = np.abs(w.reshape(w.shape[0], -1)).max(axis=1).astype(np.float64)
        scale = np.where(peak > 0, peak / qmax, 1.0)
        return scale.astype(np.float32)
    peak = float(np.abs(w).max())
    return np.float32(peak / qmax) if peak > 0 else np.float32(1.0)


def quantize(w, s, n: int, strategy=RoundingStrategy.RTN, group_axis=0) -> np.ndarray:
    """Integer tensor ``Clip(round(w / s), -2^(n-1), 2^(n-1)-1)``."""
    _check_bits(n)
    w = np.asarray(w, dtype=np.float32)
    s = _broadcast(s, w.ndim)
    if np.any(s <= 0):
        raise DataError("quantization scale must be positive")
    scaled = w.astype(np.float64) / s.astype(np.float64)
    lo, hi = int_range(n)
    return np.clip(round_array(scaled, strategy, group_axis), lo, hi)


def quantize_tensor(w, n: int, strategy=RoundingStrategy.RTN, per_channel=False) -> QuantizedTensor:
    s = compute_scale(w, n, per_channel)
    return QuantizedTensor(quantize(w, s, n, strategy), s, n)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    s = _broadcast(q.scale, np.ndim(q.ints))
    return (s * np.asarray(q.ints, dtype=np.float32)).astype(np.float32)


def perturbation(w, q: QuantizedTensor) -> np.ndarray:
    """Per-element rounding perturbation ``w / s - w_int``."""
    w = np.asarray(w, dtype=np.float32)
    if w.shape != np.shape(q.ints):
        raise ShapeError(f"weight shape {w.shape} != integer shape {np.shape(q.ints)}")
    s = _broadcast(q.scale, w.ndim).astype(np.float64)
    return w.astype(np.float64) / s - q.ints

"""Rounding strategies used when deriving integer weights.

``ADAPTIVE`` is a data-free surrogate for Hessian-guided rounding: start from
round-to-nearest (ties to even, so exact halves carry no sign bias), then,
inside each kernel group, flip the elements closest to their rounding boundary
until the accumulated perturbation of the group is at most 0.5 in magnitude.
"""
import enum
import math
from fractions import Fraction

import numpy as np

from . import kernels


class RoundingStrategy(str, enum.Enum):
    BITSHIFT = "bitshift"
    RTN = "rtn"
    UP = "up"
    DOWN = "down"
    ADAPTIVE = "adaptive"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown rounding strategy {value!r} (choose from {choices})") from None


SCALAR_STRATEGIES = (
    RoundingStrategy.BITSHIFT,
    RoundingStrategy.RTN,
    RoundingStrategy.UP,
    RoundingStrategy.DOWN,
)


def round_half_away(x):
    """Round to nearest, ties away from zero. Works on scalars and arrays."""
    if isinstance(x, Fraction):
        q = math.floor(abs(x) + Fraction(1, 2))
        return q if x >= 0 else -q
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def round_scalar(x, strategy) -> int:
    strategy = RoundingStrategy.parse(strategy)
    if strategy is RoundingStrategy.ADAPTIVE:
        raise ValueError("adaptive rounding is defined on groups, not scalars")
    if not isinstance(x, Fraction):
        x = Fraction(x)
    if strategy in (RoundingStrategy.BITSHIFT, RoundingStrategy.DOWN):
        return math.floor(x)
    if strategy is RoundingStrategy.UP:
        return math.ceil(x)
    return int(round_half_away(x))


def _as_groups(fp, group_axis):
    if fp.ndim <= 1 or group_axis is None:
        return fp.reshape(1, -1), None
    moved = np.moveaxis(fp, group_axis, 0)
    return moved.reshape(moved.shape[0], -1), moved.shape


def adaptive_round(fp, group_axis=0) -> np.ndarray:
    """Floor/ceil assignment with per-group accumulated error ``|sum(fp - out)| <= 0.5``.

    Groups are the slices along ``group_axis`` (output channels by default).
    One-dimensional input, or ``group_axis=None``, forms a single group.
    Flip candidates are ranked by distance to their rounding boundary, ties
    going to the lowest flat index within the group.
    """
    fp = np.asarray(fp, dtype=np.float64)
    if fp.size == 0:
        return np.zeros(fp.shape, dtype=np.int64)
    rows, moved_shape = _as_groups(fp, group_axis)
    out = kernels.adaptive_rows(np.ascontiguousarray(rows))
    if moved_shape is None:
        return out.reshape(fp.shape)
    return np.moveaxis(out.reshape(moved_shape), 0, group_axis)


def round_array(x, strategy, group_axis=0) -> np.ndarray:
    """Apply ``strategy`` elementwise (or per group for adaptive) to float data."""
    strategy = RoundingStrategy.parse(strategy)
    x = np.asarray(x, dtype=np.float64)
    if strategy is RoundingStrategy.ADAPTIVE:
        return adaptive_round(x, group_axis)
    if strategy is RoundingStrategy.RTN:
        r = round_half_away(x)
    elif strategy is RoundingStrategy.UP:
        r = np.ceil(x)
    else:
        r = np.floor(x)
    return r.astype(np.int64)

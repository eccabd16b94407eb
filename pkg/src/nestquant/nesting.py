"""Integer weight decomposition into nested high/low parts.

An n-bit integer weight splits as ``w_int = w_high * 2**l + w_low`` with
``l = n - h``. ``w_high`` is an h-bit integer obtained by re-rounding
``w_int / 2**l``; ``w_low`` is the residual. Storing the residual with one
extra bit, ``l + 1`` bits, makes recomposition lossless for every rounding
strategy.
"""
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import prod

import numpy as np

from .errors import CorruptionError, InvalidCombinationError, NestQuantError, ShapeError
from .packed import PackedTensor, int_range, pack, unpack
from .quantizer import QuantizedTensor, compute_scale, quantize
from .rounding import SCALAR_STRATEGIES, RoundingStrategy, adaptive_round

log = logging.getLogger(__name__)

NEST_BITS = (6, 8)


def check_combination(n: int, h: int, strict: bool = True):
    """Validate an INT(n|h) pair.

    ``strict`` limits to the evaluated space n in {6, 8}, 3 <= h < n; the
    loose form only needs 1 <= h < n <= 8.
    """
    if not (1 <= h < n <= 8):
        raise InvalidCombinationError(f"INT({n}|{h}): need 1 <= h < n <= 8")
    if strict and (n not in NEST_BITS or h < 3):
        raise InvalidCombinationError(f"INT({n}|{h}): nesting supports n in {{6, 8}} and 3 <= h < n")


def shift_round(w_int, l: int, strategy, group_axis=0) -> np.ndarray:
    """Round ``w_int / 2**l`` with integer arithmetic (adaptive uses exact dyadic floats)."""
    strategy = RoundingStrategy.parse(strategy)
    w = np.asarray(w_int, dtype=np.int64)
    if strategy in (RoundingStrategy.BITSHIFT, RoundingStrategy.DOWN):
        return w >> l
    if strategy is RoundingStrategy.UP:
        return -((-w) >> l)
    if strategy is RoundingStrategy.RTN:
        q = (np.abs(w) + (1 << (l - 1))) >> l
        return np.where(w < 0, -q, q)
    # values are k-bit integers over 2**l: exactly representable in float64
    return adaptive_round(w.astype(np.float64) / float(1 << l), group_axis)


def decompose(w_int, h: int, strategy=RoundingStrategy.ADAPTIVE, compensate: bool = True,
              n: int = 8, group_axis=0):
    """Split n-bit integers into (w_high, w_low).

    Without compensation the residual is clipped to the l-bit range, which
    loses information; with it the residual is kept in the (l+1)-bit range.
    """
    check_combination(n, h, strict=False)
    l = n - h
    w = np.asarray(w_int, dtype=np.int64)
    lo, hi = int_range(n)
    if w.size and (w.min() < lo or w.max() > hi):
        raise CorruptionError(f"input outside the INT{n} range")
    hlo, hhi = int_range(h)
    w_high = np.clip(shift_round(w, l, strategy, group_axis), hlo, hhi)
    residual = w - (w_high << l)
    if compensate:
        llo, lhi = int_range(l + 1)
        if residual.size and (residual.min() < llo or residual.max() > lhi):
            raise CorruptionError("residual escaped the (l+1)-bit range")
        return w_high, residual
    llo, lhi = int_range(l)
    return w_high, np.clip(residual, llo, lhi)


def recompose(w_high, w_low, l: int, n: int | None = None) -> np.ndarray:
    w_high = np.asarray(w_high, dtype=np.int64)
    w_low = np.asarray(w_low, dtype=np.int64)
    if w_high.shape != w_low.shape:
        raise ShapeError(f"high shape {w_high.shape} != low shape {w_low.shape}")
    out = (w_high << l) + w_low
    if n is not None and out.size:
        lo, hi = int_range(n)
        if out.min() < lo or out.max() > hi:
            raise CorruptionError(f"recomposed weights leave the INT{n} range")
    return out


@dataclass
class ErrorCensus:
    strategy: RoundingStrategy
    n: int
    h: int
    nonzero_count: int
    error_min: int
    error_max: int
    histogram: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.histogram.values())

    def as_row(self):
        return [self.strategy.value, self.n, self.h, self.nonzero_count, self.error_min, self.error_max]


def error_census(n: int, h: int, strategy, compensate: bool = False) -> ErrorCensus:
    """Decompose-recompose error over every n-bit value."""
    strategy = RoundingStrategy.parse(strategy)
    if strategy not in SCALAR_STRATEGIES:
        raise ValueError("the census is defined for bitshift, rtn, up and down")
    lo, hi = int_range(n)
    values = np.arange(lo, hi + 1, dtype=np.int64)
    w_high, w_low = decompose(values, h, strategy, compensate, n=n)
    errors = values - recompose(w_high, w_low, n - h)
    hist = Counter(int(e) for e in errors)
    return ErrorCensus(
        strategy, n, h,
        nonzero_count=int(np.count_nonzero(errors)),
        error_min=int(errors.min()),
        error_max=int(errors.max()),
        histogram=dict(sorted(hist.items())),
    )


def advise_nested_bits(fp32_size_mb: float, n: int) -> int:
    """Critical nested bitwidth from the FP32 model size (30 MB / 300 MB cut-offs)."""
    if fp32_size_mb <= 0:
        raise ValueError("model size must be positive")
    if n not in NEST_BITS:
        raise InvalidCombinationError(f"size pattern is defined for n in {{6, 8}}, got {n}")
    if fp32_size_mb < 30:
        return n // 2 + 1
    if fp32_size_mb < 300:
        return n // 2
    return n // 2 - 1


@dataclass(eq=False)
class NestedLayer:
    """One layer of an INT(n|h) model. ``h == n`` marks a plain quantized layer."""

    name: str
    shape: tuple
    n: int
    h: int
    scale: np.float32
    w_high: PackedTensor
    w_low: PackedTensor | None

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        self.scale = np.float32(self.scale)
        if not self.scale > 0:
            raise CorruptionError(f"layer {self.name!r}: non-positive scale")
        if self.w_high.bitwidth != self.h or tuple(self.w_high.shape) != self.shape:
            raise ShapeError(f"layer {self.name!r}: high tensor does not match ({self.h} bits, {self.shape})")
        if self.nested:
            if self.w_low is None or self.w_low.bitwidth != self.l + 1 or tuple(self.w_low.shape) != self.shape:
                raise ShapeError(f"layer {self.name!r}: low tensor must be {self.l + 1}-bit with shape {self.shape}")
        elif self.w_low is not None:
            raise ShapeError(f"layer {self.name!r}: plain layer carries no low tensor")

    @property
    def nested(self) -> bool:
        return self.h < self.n

    @property
    def l(self) -> int:
        return self.n - self.h

    @property
    def scale_high(self) -> np.float32:
        return np.float32(self.scale * np.float32(2.0 ** self.l))

    @property
    def size(self) -> int:
        return prod(self.shape)

    def high_ints(self) -> np.ndarray:
        return unpack(self.w_high)

    def low_ints(self) -> np.ndarray:
        if self.w_low is None:
            return np.zeros(self.shape, dtype=np.int64)
        return unpack(self.w_low)

    def full_ints(self) -> np.ndarray:
        if not self.nested:
            return self.high_ints()
        return recompose(self.high_ints(), self.low_ints(), self.l, self.n)

    def full_quantized(self) -> QuantizedTensor:
        return QuantizedTensor(self.full_ints(), self.scale, self.n)

    def part_quantized(self) -> QuantizedTensor:
        return QuantizedTensor(self.high_ints(), self.scale_high, self.h)


@dataclass(eq=False)
class NestedModel:
    name: str
    n: int
    h: int
    layers: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise NestQuantError("layer names must be unique")
        for layer in self.layers:
            if (layer.n, layer.h) != (self.n, self.h):
                raise InvalidCombinationError(
                    f"layer {layer.name!r} is INT({layer.n}|{layer.h}), model is INT({self.n}|{self.h})")

    @property
    def nested(self) -> bool:
        return self.h < self.n

    @property
    def l(self) -> int:
        return self.n - self.h

    @property
    def param_count(self) -> int:
        return sum(layer.size for layer in self.layers)

    def layer(self, name) -> NestedLayer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def full_weights(self) -> dict:
        return {layer.name: layer.full_quantized() for layer in self.layers}

    def part_weights(self) -> dict:
        return {layer.name: layer.part_quantized() for layer in self.layers}


def _items(fp_model):
    if hasattr(fp_model, "items"):
        return list(fp_model.items())
    return list(fp_model)


def quantize_layer(w, n: int, strategy=RoundingStrategy.ADAPTIVE) -> QuantizedTensor:
    """Full-precision quantization of one layer (adaptive rounding by default)."""
    w = np.asarray(w, dtype=np.float32)
    s = compute_scale(w, n)
    return QuantizedTensor(quantize(w, s, n, strategy), s, n)


def nest_layer(name, w, n: int, h: int, strategy=RoundingStrategy.ADAPTIVE,
               base_strategy=RoundingStrategy.ADAPTIVE) -> NestedLayer:
    q = quantize_layer(w, n, base_strategy)
    w_high, w_low = decompose(q.ints, h, strategy, compensate=True, n=n)
    shape = np.shape(w)
    return NestedLayer(name, shape, n, h, q.scale, pack(w_high, h, shape), pack(w_low, n - h + 1, shape))


def plain_layer(name, w, n: int, strategy=RoundingStrategy.ADAPTIVE) -> NestedLayer:
    q = quantize_layer(w, n, strategy)
    return NestedLayer(name, np.shape(w), n, n, q.scale, pack(q.ints, n, np.shape(w)), None)


def _run_layers(fn, items, jobs):
    def one(item):
        name, w = item
        try:
            return fn(name, w)
        except NestQuantError as exc:
            raise type(exc)(f"layer {name!r}: {exc}") from exc

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]


def nest_model(fp_model, n: int, h: int, strategy=RoundingStrategy.ADAPTIVE, *,
               base_strategy=RoundingStrategy.ADAPTIVE, name: str = "", jobs: int = 1,
               strict: bool = True) -> NestedModel:
    """Quantize every float layer to INT n and nest an INT h model inside it.

    ``fp_model`` maps layer names to float arrays (any ordered mapping or
    sequence of pairs). Output channels (axis 0) are the rounding groups.
    """
    check_combination(n, h, strict)
    strategy = RoundingStrategy.parse(strategy)
    items = _items(fp_model)
    layers = _run_layers(lambda nm, w: nest_layer(nm, w, n, h, strategy, base_strategy), items, jobs)
    log.info("nested %d layers at INT(%d|%d) with %s rounding", len(layers), n, h, strategy.value)
    meta = {"strategy": strategy.value, "base_strategy": RoundingStrategy.parse(base_strategy).value}
    return NestedModel(name, n, h, layers, meta)


def quantize_model(fp_model, n: int, strategy=RoundingStrategy.ADAPTIVE, *, name: str = "",
                   jobs: int = 1) -> NestedModel:
    """Standalone INT n model (no nesting); stored with ``h == n``."""
    if not 2 <= n <= 8:
        raise InvalidCombinationError(f"INT{n} is not supported")
    strategy = RoundingStrategy.parse(strategy)
    layers = _run_layers(lambda nm, w: plain_layer(nm, w, n, strategy), _items(fp_model), jobs)
    return NestedModel(name, n, n, layers, {"strategy": strategy.value})

"""Closed-form storage, switching-overhead and memory arithmetic.

Values are kept as exact fractions; round only when presenting.
"""
from dataclasses import dataclass
from fractions import Fraction

from .errors import UndefinedRatioError
from .nesting import check_combination


def ideal_storage_reduction(n: int, h: int) -> Fraction:
    """Nested storage ``n + 1`` bits/weight against ``n + h`` for two separate models."""
    check_combination(n, h, strict=False)
    return 1 - Fraction(n + 1, n + h)


def nest_page_costs(disk_bytes, n: int, h: int) -> tuple[Fraction, Fraction]:
    """Split a nested model's disk size into (high, low) shares ``h : l+1``."""
    check_combination(n, h, strict=False)
    if disk_bytes <= 0:
        raise ValueError("disk size must be positive")
    d = Fraction(disk_bytes)
    l = n - h
    high = d * Fraction(h, h + l + 1)
    return high, d - high


def _pair(t):
    if hasattr(t, "bytes_paged_in"):
        return t.bytes_paged_in, t.bytes_paged_out
    page_in, page_out = t
    return page_in, page_out


def _total(t):
    return sum(_pair(t))


def reduced_overhead(nest, diverse) -> Fraction:
    """``1 - nest_total / diverse_total``; accepts Transitions or (in, out) pairs."""
    d = _total(diverse)
    if d == 0:
        raise UndefinedRatioError("diverse-bitwidth switch moved zero bytes")
    return 1 - Fraction(_total(nest)) / Fraction(d)


def memory_usage_estimate(u_int8, k: int):
    if not 1 <= k <= 8:
        raise ValueError(f"bitwidth must be in 1..8, got {k}")
    return Fraction(k, 8) * Fraction(u_int8)


def percent(x, digits=1) -> float:
    return round(float(x) * 100, digits)


@dataclass
class OverheadReport:
    nest_page_in: int
    nest_page_out: int
    diverse_page_in: int
    diverse_page_out: int

    @property
    def reduced_fraction(self) -> Fraction:
        return reduced_overhead((self.nest_page_in, self.nest_page_out),
                                (self.diverse_page_in, self.diverse_page_out))

    def as_dict(self):
        d = dict(self.__dict__)
        d["reduced_percent"] = percent(self.reduced_fraction)
        return d


def overhead_report(nest, diverse) -> OverheadReport:
    return OverheadReport(*_pair(nest), *_pair(diverse))

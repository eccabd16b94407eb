"""k-bit signed integers packed ``64 // k`` to a little-endian 64-bit word.

Element ``i`` lives in slot ``i % capacity`` of word ``i // capacity``; slot 0
is the least-significant ``k`` bits. Values are stored as k-bit two's
complement and unused trailing slots are zero.
"""
from dataclasses import dataclass, field
from math import prod

import numpy as np

from . import kernels
from .errors import FormatError, InvalidBitwidthError, RangeError, ShapeError

MAX_BITS = 8


def _check_bits(k):
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= MAX_BITS:
        raise InvalidBitwidthError(f"bitwidth must be in 1..{MAX_BITS}, got {k!r}")


def capacity(k: int) -> int:
    _check_bits(k)
    return 64 // k


def int_range(k: int) -> tuple[int, int]:
    """Inclusive signed range of a k-bit two's-complement integer."""
    return -(1 << (k - 1)), (1 << (k - 1)) - 1


def word_count(n: int, k: int) -> int:
    cap = capacity(k)
    return -(-n // cap)


def packed_byte_size(param_count: int, k: int) -> int:
    return 8 * word_count(param_count, k)


@dataclass(frozen=True, eq=False)
class PackedTensor:
    bitwidth: int
    logical_len: int
    words: np.ndarray = field(repr=False)
    shape: tuple

    @property
    def nbytes(self) -> int:
        return 8 * len(self.words)

    def tobytes(self) -> bytes:
        return self.words.astype("<u8", copy=False).tobytes()

    def __eq__(self, other):
        if not isinstance(other, PackedTensor):
            return NotImplemented
        return (
            self.bitwidth == other.bitwidth
            and self.logical_len == other.logical_len
            and tuple(self.shape) == tuple(other.shape)
            and np.array_equal(self.words, other.words)
        )


def pack(values, k: int, shape=None) -> PackedTensor:
    _check_bits(k)
    arr = np.asarray(values)
    if shape is None:
        shape = arr.shape
    shape = tuple(int(d) for d in shape)
    flat = arr.reshape(-1)
    if prod(shape) != flat.size:
        raise ShapeError(f"shape {shape} holds {prod(shape)} elements, got {flat.size}")
    if flat.size and not np.issubdtype(flat.dtype, np.integer):
        if not np.all(np.equal(np.mod(flat, 1), 0)):
            raise RangeError("non-integer value in integer tensor")
    flat = flat.astype(np.int64)
    lo, hi = int_range(k)
    bad = np.flatnonzero((flat < lo) | (flat > hi))
    if bad.size:
        i = int(bad[0])
        raise RangeError(f"value {int(flat[i])} at index {i} outside [{lo}, {hi}] for k={k}", index=i)
    cap = 64 // k
    nwords = -(-flat.size // cap)
    pattern = (flat & ((1 << k) - 1)).astype(np.uint64)
    words = kernels.pack_words(pattern, k, cap, nwords)
    return PackedTensor(k, int(flat.size), words, shape)


def from_words(words, k: int, shape) -> PackedTensor:
    """Wrap raw words read from storage, validating count and padding."""
    _check_bits(k)
    shape = tuple(int(d) for d in shape)
    n = prod(shape)
    words = np.asarray(words, dtype=np.uint64)
    expected = word_count(n, k)
    if len(words) != expected:
        raise FormatError(f"{n} {k}-bit values need {expected} words, got {len(words)}")
    if not kernels.padding_clear(words, k, 64 // k, n):
        raise FormatError("non-zero padding bits in final word")
    return PackedTensor(k, n, words, shape)


def unpack(p: PackedTensor) -> np.ndarray:
    """Return the sign-extended values as an int64 array of ``p.shape``."""
    _check_bits(p.bitwidth)
    cap = 64 // p.bitwidth
    if len(p.words) != -(-p.logical_len // cap):
        raise FormatError(
            f"{p.logical_len} values need {-(-p.logical_len // cap)} words, got {len(p.words)}"
        )
    if p.logical_len == 0:
        return np.zeros(p.shape, dtype=np.int64)
    words = np.ascontiguousarray(p.words, dtype=np.uint64)
    flat = kernels.unpack_words(words, p.bitwidth, cap, p.logical_len)
    return flat.reshape(p.shape)

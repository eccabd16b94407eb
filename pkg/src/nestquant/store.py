"""The ``.nqt`` nested-model container and the ``.nqf`` float archive.

``.nqt`` layout, little-endian throughout::

    "NQNT" | version u16 | n u8 | h u8 | layer count u32
    | name len u16 + UTF-8 | metadata len u32 + JSON UTF-8
    per layer:
        name len u16 + UTF-8 | rank u8 | dims u32 * rank | scale f32
        | high byte length u64 + words | low byte length u64 + words

Each layer stores its high words before its low words, so a part-bit load is
one forward scan that seeks over the low sections. Plain quantized models
(``h == n``) have zero-length low sections.

``.nqf`` layout: "NQF0" | layer count u32 | per layer: name len u16 + UTF-8
| rank u8 | dims u32 * rank | raw float32 data.
"""
import io
import json
import os
import struct
from dataclasses import dataclass, field
from math import prod

import numpy as np

from .errors import CorruptionError, FormatError, RangeError, TruncationError, VersionError
from .nesting import NestedLayer, NestedModel, recompose
from .packed import PackedTensor, from_words, unpack, word_count

MAGIC = b"NQNT"
FP32_MAGIC = b"NQF0"
VERSION = 1

_HEAD = struct.Struct("<4sHBBI")


# -- low-level I/O ---------------------------------------------------------


class _Reader:
    def __init__(self, fh, size):
        self.fh = fh
        self.size = size
        self.offset = 0
        self.bytes_read = 0

    def read(self, n, what="data"):
        data = self.fh.read(n)
        if len(data) != n:
            raise TruncationError(
                f"truncated {what} at offset {self.offset}: expected {n} bytes, got {len(data)}",
                expected=self.offset + n, actual=self.offset + len(data), offset=self.offset)
        self.offset += n
        self.bytes_read += n
        return data

    def skip(self, n, what="data"):
        if self.offset + n > self.size:
            raise TruncationError(
                f"truncated {what} at offset {self.offset}: expected {n} bytes, got {self.size - self.offset}",
                expected=self.offset + n, actual=self.size, offset=self.offset)
        self.fh.seek(n, io.SEEK_CUR)
        self.offset += n

    def unpack(self, fmt, what="field"):
        st = struct.Struct("<" + fmt)
        return st.unpack(self.read(st.size, what))

    def string(self, what="name"):
        (length,) = self.unpack("H", what)
        raw = self.read(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} is not valid UTF-8", offset=self.offset - length) from exc

    def shape(self):
        (rank,) = self.unpack("B", "rank")
        return tuple(self.unpack("I" * rank, "dims")) if rank else ()


def _string(s):
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError("name longer than 65535 bytes")
    return struct.pack("<H", len(raw)) + raw


def _shape(shape):
    return struct.pack("<B", len(shape)) + struct.pack("<" + "I" * len(shape), *shape)


def _metadata_bytes(meta):
    if not meta:
        return b""
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


# -- .nqt ------------------------------------------------------------------


def header_bytes(m: NestedModel) -> bytes:
    meta = _metadata_bytes(m.metadata)
    return (_HEAD.pack(MAGIC, VERSION, m.n, m.h, len(m.layers)) + _string(m.name)
            + struct.pack("<I", len(meta)) + meta)


def _layer_prefix(layer: NestedLayer) -> bytes:
    return _string(layer.name) + _shape(layer.shape) + struct.pack("<f", layer.scale)


def iter_sections(m: NestedModel):
    """Yield ``(kind, bytes)`` chunks in file order; kind is 'meta', 'high' or 'low'.

    Length prefixes are 'meta'; only packed words are 'high'/'low'.
    """
    yield "meta", header_bytes(m)
    for layer in m.layers:
        high = layer.w_high.tobytes()
        low = layer.w_low.tobytes() if layer.w_low is not None else b""
        yield "meta", _layer_prefix(layer) + struct.pack("<Q", len(high))
        yield "high", high
        yield "meta", struct.pack("<Q", len(low))
        yield "low", low


def serialize(m: NestedModel) -> bytes:
    return b"".join(chunk for _, chunk in iter_sections(m))


def save(m: NestedModel, path) -> int:
    data = serialize(m)
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return len(data)


def _read_header(r: _Reader):
    magic = r.read(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0 (expected {MAGIC!r})", offset=0)
    version, n, h, count = r.unpack("HBBI", "header")
    if version != VERSION:
        raise VersionError(f"unsupported format version {version} (this build reads {VERSION})", offset=4)
    if not 1 <= h <= n <= 8:
        raise FormatError(f"invalid bitwidths n={n}, h={h} in header", offset=6)
    name = r.string("model name")
    (meta_len,) = r.unpack("I", "metadata length")
    raw = r.read(meta_len, "metadata")
    try:
        meta = json.loads(raw.decode("utf-8")) if raw else {}
    except ValueError as exc:
        raise FormatError("metadata is not valid JSON", offset=r.offset - meta_len) from exc
    return n, h, count, name, meta


def _read_words(r, k, shape, what):
    expected = 8 * word_count(prod(shape), k) if k else 0
    (length,) = r.unpack("Q", f"{what} length")
    if length != expected:
        raise FormatError(f"{what} declares {length} bytes, shape {shape} at {k} bits needs {expected}",
                          offset=r.offset - 8)
    return np.frombuffer(r.read(length, what), dtype="<u8").astype(np.uint64)


def _check_recomposed(layer: NestedLayer):
    try:
        layer.full_ints()
    except CorruptionError as exc:
        raise RangeError(f"layer {layer.name!r}: {exc}") from exc


def _parse(fh, size) -> NestedModel:
    r = _Reader(fh, size)
    n, h, count, name, meta = _read_header(r)
    l = n - h
    layers = []
    for _ in range(count):
        lname = r.string("layer name")
        shape = r.shape()
        (scale,) = r.unpack("f", "scale")
        if not np.isfinite(scale) or scale <= 0:
            raise RangeError(f"layer {lname!r}: scale {scale} is not positive")
        high = from_words(_read_words(r, h, shape, "high payload"), h, shape)
        low_words = _read_words(r, l + 1 if l else 0, shape, "low payload")
        low = from_words(low_words, l + 1, shape) if l else None
        layer = NestedLayer(lname, shape, n, h, scale, high, low)
        _check_recomposed(layer)
        layers.append(layer)
    if r.offset != size:
        raise FormatError(f"{size - r.offset} trailing bytes after last layer", offset=r.offset)
    return NestedModel(name, n, h, layers, meta)


def parse(data: bytes) -> NestedModel:
    return _parse(io.BytesIO(data), len(data))


def load(path) -> NestedModel:
    with open(path, "rb") as fh:
        return _parse(fh, os.fstat(fh.fileno()).st_size)


@dataclass
class PartLayer:
    name: str
    shape: tuple
    scale: np.float32
    w_high: PackedTensor
    low_offset: int
    low_nbytes: int


@dataclass
class PartBitModel:
    """High weights and scales only, plus where each low section lives on disk."""

    path: str
    name: str
    n: int
    h: int
    layers: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    bytes_read: int = 0

    @property
    def l(self):
        return self.n - self.h

    @property
    def low_bytes(self):
        return sum(layer.low_nbytes for layer in self.layers)

    @property
    def high_bytes(self):
        return sum(layer.w_high.nbytes for layer in self.layers)

    def part_weights(self):
        from .quantizer import QuantizedTensor

        scale_up = np.float32(2.0 ** self.l)
        return {
            layer.name: QuantizedTensor(unpack(layer.w_high), np.float32(layer.scale * scale_up), self.h)
            for layer in self.layers
        }


def load_part_bit(path) -> PartBitModel:
    """Read manifest and high sections; seek over every low section."""
    with open(path, "rb") as fh:
        size = os.fstat(fh.fileno()).st_size
        r = _Reader(fh, size)
        n, h, count, name, meta = _read_header(r)
        l = n - h
        layers = []
        for _ in range(count):
            lname = r.string("layer name")
            shape = r.shape()
            (scale,) = r.unpack("f", "scale")
            if not np.isfinite(scale) or scale <= 0:
                raise RangeError(f"layer {lname!r}: scale {scale} is not positive")
            high = from_words(_read_words(r, h, shape, "high payload"), h, shape)
            expected = 8 * word_count(prod(shape), l + 1) if l else 0
            (length,) = r.unpack("Q", "low payload length")
            if length != expected:
                raise FormatError(f"low payload declares {length} bytes, expected {expected}",
                                  offset=r.offset - 8)
            layers.append(PartLayer(lname, shape, np.float32(scale), high, r.offset, length))
            r.skip(length, "low payload")
        if r.offset != size:
            raise FormatError(f"{size - r.offset} trailing bytes after last layer", offset=r.offset)
    return PartBitModel(str(path), name, n, h, layers, meta, r.bytes_read)


def read_low_section(fh, layer: PartLayer, k: int) -> PackedTensor:
    fh.seek(layer.low_offset)
    data = fh.read(layer.low_nbytes)
    if len(data) != layer.low_nbytes:
        raise TruncationError(
            f"low payload of {layer.name!r} truncated: expected {layer.low_nbytes} bytes, got {len(data)}",
            expected=layer.low_offset + layer.low_nbytes, actual=layer.low_offset + len(data),
            offset=layer.low_offset)
    words = np.frombuffer(data, dtype="<u8").astype(np.uint64)
    return from_words(words, k, layer.shape)


# -- size accounting -------------------------------------------------------


@dataclass
class ModelSizeReport:
    high_bytes: int
    low_bytes: int
    scale_bytes: int
    header_bytes: int
    total_bytes: int
    fp32_equivalent_bytes: int

    def as_dict(self):
        return dict(self.__dict__)


def size_report(m: NestedModel) -> ModelSizeReport:
    high = low = other = 0
    for kind, chunk in iter_sections(m):
        if kind == "high":
            high += len(chunk)
        elif kind == "low":
            low += len(chunk)
        else:
            other += len(chunk)
    scale = 4 * len(m.layers)
    return ModelSizeReport(high, low, scale, other - scale, high + low + other, 4 * m.param_count)


def plain_file_size(m: NestedModel, bits: int) -> int:
    """Exact size of a plain INT ``bits`` file with the same name and layers as ``m``."""
    meta = len(_metadata_bytes(m.metadata))
    total = _HEAD.size + 2 + len(m.name.encode()) + 4 + meta
    for layer in m.layers:
        total += len(_layer_prefix(layer)) + 16 + 8 * word_count(layer.size, bits)
    return total


# -- split image for transfer ---------------------------------------------


def split_low(data: bytes) -> tuple[bytes, bytes]:
    """Split a serialized model into (everything but low words, low words)."""
    m = parse(data)
    part, low = [], []
    for kind, chunk in iter_sections(m):
        (low if kind == "low" else part).append(chunk)
    return b"".join(part), b"".join(low)


def join_low(part_image: bytes, low_blob: bytes) -> bytes:
    """Inverse of :func:`split_low`; validates the part image while walking it."""
    fh = io.BytesIO(part_image)
    r = _Reader(fh, len(part_image))
    n, h, count, _, _ = _read_header(r)
    l = n - h
    out = [part_image[: r.offset]]
    low_pos = 0
    for _ in range(count):
        start = r.offset
        r.string("layer name")
        shape = r.shape()
        r.unpack("f", "scale")
        (hlen,) = r.unpack("Q", "high payload length")
        r.skip(hlen, "high payload")
        (llen,) = r.unpack("Q", "low payload length")
        expected = 8 * word_count(prod(shape), l + 1) if l else 0
        if llen != expected:
            raise FormatError(f"low payload declares {llen} bytes, expected {expected}", offset=r.offset - 8)
        out.append(part_image[start: r.offset])
        chunk = low_blob[low_pos: low_pos + llen]
        if len(chunk) != llen:
            raise TruncationError("low delta shorter than the part image declares",
                                  expected=low_pos + llen, actual=len(low_blob))
        out.append(chunk)
        low_pos += llen
    if r.offset != len(part_image):
        raise FormatError("trailing bytes in part image", offset=r.offset)
    if low_pos != len(low_blob):
        raise FormatError(f"low delta carries {len(low_blob) - low_pos} unexpected trailing bytes")
    return b"".join(out)


def inspect_part_image(part_image: bytes) -> tuple[str, int, int, int]:
    """Validate a part image (header, shapes, high words); return (name, n, h, low byte total)."""
    r = _Reader(io.BytesIO(part_image), len(part_image))
    n, h, count, name, _ = _read_header(r)
    if h == n:
        raise FormatError("part image of a plain model has nothing to nest")
    total = 0
    for _ in range(count):
        r.string("layer name")
        shape = r.shape()
        (scale,) = r.unpack("f", "scale")
        if not np.isfinite(scale) or scale <= 0:
            raise RangeError(f"scale {scale} is not positive")
        from_words(_read_words(r, h, shape, "high payload"), h, shape)
        (llen,) = r.unpack("Q", "low payload length")
        expected = 8 * word_count(prod(shape), n - h + 1)
        if llen != expected:
            raise FormatError(f"low payload declares {llen} bytes, expected {expected}", offset=r.offset - 8)
        total += llen
    if r.offset != len(part_image):
        raise FormatError("trailing bytes in part image", offset=r.offset)
    return name, n, h, total


# -- .nqf float archive ----------------------------------------------------


def save_fp32(tensors, path) -> int:
    items = list(tensors.items()) if hasattr(tensors, "items") else list(tensors)
    parts = [FP32_MAGIC, struct.pack("<I", len(items))]
    for name, arr in items:
        arr = np.asarray(arr, dtype=np.float32)
        parts += [_string(name), _shape(arr.shape), arr.astype("<f4").tobytes()]
    data = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_fp32(path) -> dict:
    with open(path, "rb") as fh:
        size = os.fstat(fh.fileno()).st_size
        r = _Reader(fh, size)
        magic = r.read(4, "magic")
        if magic != FP32_MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0 (expected {FP32_MAGIC!r})", offset=0)
        (count,) = r.unpack("I", "layer count")
        out = {}
        for _ in range(count):
            name = r.string("tensor name")
            shape = r.shape()
            raw = r.read(4 * prod(shape), f"tensor {name!r}")
            arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
            if not np.all(np.isfinite(arr)):
                raise FormatError(f"tensor {name!r} contains non-finite values")
            out[name] = arr
        if r.offset != size:
            raise FormatError(f"{size - r.offset} trailing bytes", offset=r.offset)
    return out

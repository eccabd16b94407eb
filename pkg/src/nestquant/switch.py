"""Full-bit / part-bit switching with byte accounting.

A part-bit instance keeps only the high weights resident. Upgrading pages the
low sections in from the model file and materialises the recomposed n-bit
weights; downgrading drops both again. Nothing else is read or released.
"""
import enum
import os
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import NestQuantError, SwitchError
from .nesting import recompose
from .packed import unpack
from .quantizer import QuantizedTensor
from .resources import memory_usage_estimate
from .store import PartBitModel, load_part_bit, read_low_section


class Mode(str, enum.Enum):
    PART = "part"
    FULL = "full"


@dataclass
class Transition:
    direction: str
    bytes_paged_in: int
    bytes_paged_out: int
    timestamp: float = field(default_factory=time.time)

    @property
    def total(self):
        return self.bytes_paged_in + self.bytes_paged_out

    def as_dict(self):
        return dict(self.__dict__)


class _RWLock:
    """Many readers or one writer."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


class SwitchState:
    """Runtime state of one nested model. Create with :func:`launch_part_bit`."""

    def __init__(self, part: PartBitModel):
        self.part = part
        self.path = part.path
        self.mode = Mode.PART
        self.resident_high = {layer.name: unpack(layer.w_high) for layer in part.layers}
        self.resident_low = None
        self.resident_full = None
        self.transition_log = []
        self.bytes_read = part.bytes_read
        self._lock = _RWLock()

    @property
    def n(self):
        return self.part.n

    @property
    def h(self):
        return self.part.h

    @property
    def low_bytes(self):
        return self.part.low_bytes

    @property
    def high_bytes(self):
        return self.part.high_bytes

    def upgrade(self) -> "SwitchState":
        with self._lock.write():
            if self.mode is not Mode.PART:
                raise SwitchError("upgrade requires a part-bit instance")
            if self.part.n == self.part.h:
                raise SwitchError("plain quantized model has no low weights to page in")
            k = self.part.l + 1
            low, full, paged = {}, {}, 0
            try:
                with open(self.path, "rb") as fh:
                    for layer in self.part.layers:
                        packed = read_low_section(fh, layer, k)
                        paged += packed.nbytes
                        ints = unpack(packed)
                        low[layer.name] = ints
                        full[layer.name] = recompose(self.resident_high[layer.name], ints, self.part.l, self.part.n)
            except (OSError, NestQuantError) as exc:
                raise SwitchError(f"upgrade failed, still part-bit: {exc}") from exc
            self.resident_low, self.resident_full = low, full
            self.mode = Mode.FULL
            self.transition_log.append(Transition("upgrade", paged, 0))
            return self

    def downgrade(self) -> "SwitchState":
        with self._lock.write():
            if self.mode is not Mode.FULL:
                raise SwitchError("downgrade requires a full-bit instance")
            released = self.low_bytes
            self.resident_low = None
            self.resident_full = None
            self.mode = Mode.PART
            self.transition_log.append(Transition("downgrade", 0, released))
            return self

    def weights(self) -> dict:
        """QuantizedTensor per layer for the current mode."""
        with self._lock.read():
            out = {}
            for layer in self.part.layers:
                if self.mode is Mode.FULL:
                    out[layer.name] = QuantizedTensor(self.resident_full[layer.name], layer.scale, self.n)
                else:
                    s_high = np.float32(layer.scale * np.float32(2.0 ** self.part.l))
                    out[layer.name] = QuantizedTensor(self.resident_high[layer.name], s_high, self.h)
            return out

    def memory_estimate(self, u_int8):
        bits = self.n if self.mode is Mode.FULL else self.h
        return memory_usage_estimate(u_int8, bits)

    def paged_totals(self):
        return (sum(t.bytes_paged_in for t in self.transition_log),
                sum(t.bytes_paged_out for t in self.transition_log))


def launch_part_bit(path) -> SwitchState:
    return SwitchState(load_part_bit(path))


def diverse_switch_baseline(int_n_path, int_h_path, direction="upgrade") -> Transition:
    """Switching between two standalone models: page in one file, page out the other."""
    size_n = os.path.getsize(int_n_path)
    size_h = os.path.getsize(int_h_path)
    if direction == "upgrade":
        return Transition("diverse-upgrade", size_n, size_h)
    if direction == "downgrade":
        return Transition("diverse-downgrade", size_h, size_n)
    raise ValueError(f"direction must be 'upgrade' or 'downgrade', got {direction!r}")

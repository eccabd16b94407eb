"""Push nested models over TCP with exact application-layer byte counts.

Wire frame: ``"NQTX" | opcode u8 | payload length u64 LE | payload``.

A push is one data frame answered by ACK (payload: u64 count of bytes the
server received for that frame) or ERROR (payload: UTF-8 reason).

* ``full``      FULL_MODEL carries the whole ``.nqt`` file.
* ``part``      HIGH_PAYLOAD carries the file minus every low word section.
* ``low_delta`` LOW_PAYLOAD carries only the low words. The server applies it
  to the most recently received part image and writes the full ``.nqt``.

MANIFEST (empty payload) asks the server what it holds; the reply is a
MANIFEST frame with a JSON listing.
"""
import json
import logging
import os
import re
import socket
import socketserver
import struct
import tempfile
import threading
from pathlib import Path

from . import store
from .errors import FormatError, NestQuantError, TransferError, TruncationError

log = logging.getLogger(__name__)

MAGIC = b"NQTX"
MANIFEST, HIGH_PAYLOAD, LOW_PAYLOAD, FULL_MODEL, ACK, ERROR = range(1, 7)
OPCODES = {MANIFEST, HIGH_PAYLOAD, LOW_PAYLOAD, FULL_MODEL, ACK, ERROR}
HEADER = struct.Struct("<4sBQ")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 1 << 34

WHAT = {"full": FULL_MODEL, "part": HIGH_PAYLOAD, "low_delta": LOW_PAYLOAD, "low-delta": LOW_PAYLOAD}


def encode_frame(opcode: int, payload: bytes = b"") -> bytes:
    if opcode not in OPCODES:
        raise FormatError(f"unknown opcode {opcode}")
    return HEADER.pack(MAGIC, opcode, len(payload)) + payload


def _recv_exact(sock, n):
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            raise TruncationError(f"connection closed after {got} of {n} bytes", expected=n, actual=got)
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock, allow_eof=False):
    """Return ``(opcode, payload)``; ``None`` on clean EOF when ``allow_eof``."""
    first = sock.recv(HEADER_SIZE)
    if not first:
        if allow_eof:
            return None
        raise TruncationError("connection closed before frame header", expected=HEADER_SIZE, actual=0)
    head = first + (_recv_exact(sock, HEADER_SIZE - len(first)) if len(first) < HEADER_SIZE else b"")
    magic, opcode, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad frame magic {magic!r}", offset=0)
    if opcode not in OPCODES:
        raise FormatError(f"unknown opcode {opcode}", offset=4)
    if length > MAX_PAYLOAD:
        raise FormatError(f"frame payload of {length} bytes exceeds limit", offset=5)
    return opcode, _recv_exact(sock, length)


def parse_endpoint(endpoint):
    if isinstance(endpoint, tuple):
        return endpoint
    host, _, port = str(endpoint).rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


# -- server ----------------------------------------------------------------


def _safe_name(name):
    cleaned = re.sub(r"[^A-Za-z0-9._-]", "_", name or "model").strip(".")
    return cleaned or "model"


def _atomic_write(directory: Path, filename: str, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".incoming-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, directory / filename)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ModelStore:
    """Receiver-side persistence. Files appear only via atomic rename."""

    PENDING = ".pending-part"

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def accept_full(self, data: bytes) -> str:
        model = store.parse(data)
        fname = _safe_name(model.name) + ".nqt"
        with self._lock:
            _atomic_write(self.dir, fname, data)
        return fname

    def accept_part(self, image: bytes) -> str:
        name, _, _, _ = store.inspect_part_image(image)
        base = _safe_name(name)
        with self._lock:
            _atomic_write(self.dir, base + ".part", image)
            _atomic_write(self.dir, self.PENDING, base.encode())
        return base + ".part"

    def accept_low(self, low: bytes) -> str:
        with self._lock:
            pointer = self.dir / self.PENDING
            if not pointer.exists():
                raise NestQuantError("no part-bit model held; push part first")
            base = pointer.read_text()
            image = (self.dir / (base + ".part")).read_bytes()
            _, _, _, expected = store.inspect_part_image(image)
            if len(low) != expected:
                raise FormatError(f"low delta has {len(low)} bytes, part-bit model {base!r} expects {expected}")
            full = store.join_low(image, low)
            store.parse(full)  # range and recomposition checks
            _atomic_write(self.dir, base + ".nqt", full)
        return base + ".nqt"

    def listing(self):
        pointer = self.dir / self.PENDING
        return {
            "models": sorted(p.name for p in self.dir.glob("*.nqt")),
            "parts": sorted(p.name for p in self.dir.glob("*.part")),
            "pending": pointer.read_text() if pointer.exists() else None,
        }


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        models: ModelStore = self.server.models
        while True:
            try:
                frame = read_frame(sock, allow_eof=True)
            except (FormatError, TruncationError) as exc:
                log.warning("dropping session from %s: %s", self.client_address, exc)
                self._reply(ERROR, str(exc).encode())
                return
            if frame is None:
                return
            opcode, payload = frame
            received = HEADER_SIZE + len(payload)
            try:
                if opcode == FULL_MODEL:
                    stored = models.accept_full(payload)
                elif opcode == HIGH_PAYLOAD:
                    stored = models.accept_part(payload)
                elif opcode == LOW_PAYLOAD:
                    stored = models.accept_low(payload)
                elif opcode == MANIFEST:
                    self._reply(MANIFEST, json.dumps(models.listing()).encode())
                    continue
                else:
                    raise FormatError(f"opcode {opcode} is not a request")
            except (NestQuantError, OSError) as exc:
                self._reply(ERROR, str(exc).encode())
                return
            log.info("stored %s (%d bytes received)", stored, received)
            self._reply(ACK, struct.pack("<Q", received))

    def _reply(self, opcode, payload):
        try:
            self.request.sendall(encode_frame(opcode, payload))
        except OSError:
            pass


class ModelServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, endpoint, store_dir):
        super().__init__(parse_endpoint(endpoint), _Handler)
        self.models = ModelStore(store_dir)

    @property
    def endpoint(self):
        host, port = self.server_address[:2]
        return f"{host}:{port}"


def serve(endpoint, store_dir):
    """Serve until interrupted."""
    with ModelServer(endpoint, store_dir) as server:
        log.info("listening on %s, storing into %s", server.endpoint, store_dir)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass


def start_background(endpoint, store_dir) -> ModelServer:
    server = ModelServer(endpoint, store_dir)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


# -- client ----------------------------------------------------------------


def payload_for(data: bytes, what: str) -> tuple[int, bytes]:
    try:
        opcode = WHAT[what]
    except KeyError:
        raise ValueError(f"what must be one of full, part, low_delta; got {what!r}") from None
    model = store.parse(data)
    if opcode == FULL_MODEL:
        return opcode, data
    if not model.nested:
        raise ValueError("a plain quantized model cannot be split into part and low sections")
    part, low = store.split_low(data)
    return opcode, (part if opcode == HIGH_PAYLOAD else low)


def push(model_path, endpoint, what="full", timeout=30.0) -> int:
    """Send one section of ``model_path``; returns bytes sent (frame header included)."""
    data = Path(model_path).read_bytes()
    opcode, payload = payload_for(data, what)
    frame = encode_frame(opcode, payload)
    try:
        with socket.create_connection(parse_endpoint(endpoint), timeout=timeout) as sock:
            sock.sendall(frame)
            reply, body = read_frame(sock)
    except OSError as exc:
        raise TransferError(f"push to {endpoint} failed: {exc}") from exc
    if reply == ERROR:
        raise TransferError(f"receiver rejected {what}: {body.decode(errors='replace')}")
    if reply != ACK or len(body) != 8:
        raise TransferError(f"unexpected reply opcode {reply}")
    (acked,) = struct.unpack("<Q", body)
    if acked != len(frame):
        raise TransferError(f"receiver counted {acked} bytes, sent {len(frame)}")
    return len(frame)


def query(endpoint, timeout=10.0) -> dict:
    with socket.create_connection(parse_endpoint(endpoint), timeout=timeout) as sock:
        sock.sendall(encode_frame(MANIFEST))
        opcode, body = read_frame(sock)
    if opcode != MANIFEST:
        raise TransferError(f"unexpected reply opcode {opcode}")
    return json.loads(body)

import socket
import struct

import numpy as np
import pytest

from nestquant import store, transfer
from nestquant.errors import FormatError, TransferError
from nestquant.nesting import nest_model, quantize_model


@pytest.fixture
def server(tmp_path):
    srv = transfer.start_background("127.0.0.1:0", tmp_path / "recv")
    yield srv
    srv.shutdown()
    srv.server_close()


@pytest.fixture
def model_path(tmp_path, rng):
    path = tmp_path / "m.nqt"
    store.save(nest_model({"w": rng.normal(size=(16, 100)).astype(np.float32)}, 8, 4, name="m"), path)
    return path


def test_frame_layout():
    frame = transfer.encode_frame(transfer.ACK, b"abc")
    assert frame == b"NQTX" + bytes([5]) + struct.pack("<Q", 3) + b"abc"
    assert transfer.HEADER_SIZE == 13
    with pytest.raises(FormatError):
        transfer.encode_frame(99)


def test_parse_endpoint():
    assert transfer.parse_endpoint("localhost:9000") == ("localhost", 9000)
    with pytest.raises(ValueError):
        transfer.parse_endpoint("9000")


def test_full_push_is_byte_identical(server, model_path, tmp_path):
    sent = transfer.push(model_path, server.endpoint, "full")
    assert sent == model_path.stat().st_size + 13
    assert (tmp_path / "recv" / "m.nqt").read_bytes() == model_path.read_bytes()


def test_part_then_low_delta(server, model_path, tmp_path):
    part = transfer.push(model_path, server.endpoint, "part")
    listing = transfer.query(server.endpoint)
    assert listing["pending"] and "m.nqt" not in listing["models"]
    low = transfer.push(model_path, server.endpoint, "low-delta")
    assert part + low == model_path.stat().st_size + 2 * 13
    assert (tmp_path / "recv" / "m.nqt").read_bytes() == model_path.read_bytes()
    assert "m.nqt" in transfer.query(server.endpoint)["models"]


def test_low_delta_without_part_rejected(server, model_path):
    with pytest.raises(TransferError):
        transfer.push(model_path, server.endpoint, "low_delta")


def test_plain_model_cannot_split(server, tmp_path):
    path = tmp_path / "p.nqt"
    store.save(quantize_model({"w": np.eye(4, dtype=np.float32)}, 8), path)
    with pytest.raises(ValueError):
        transfer.push(path, server.endpoint, "part")


def test_killed_mid_transfer_leaves_nothing(server, model_path, tmp_path):
    data = model_path.read_bytes()
    frame = transfer.encode_frame(transfer.FULL_MODEL, data)
    with socket.create_connection(transfer.parse_endpoint(server.endpoint)) as sock:
        sock.sendall(frame[: len(frame) // 2])
    # a fresh session still works and nothing partial was published
    transfer.push(model_path, server.endpoint, "full")
    recv = tmp_path / "recv"
    assert sorted(p.name for p in recv.iterdir() if not p.name.startswith(".pending")) == ["m.nqt"]
    assert (recv / "m.nqt").read_bytes() == data


def test_corrupt_payload_rejected(server, model_path, tmp_path):
    bad = tmp_path / "bad.nqt"
    bad.write_bytes(model_path.read_bytes()[:-8])
    with pytest.raises(Exception):
        transfer.push(bad, server.endpoint, "full")
    with socket.create_connection(transfer.parse_endpoint(server.endpoint)) as sock:
        sock.sendall(transfer.encode_frame(transfer.FULL_MODEL, b"junk"))
        opcode, body = transfer.read_frame(sock)
    assert opcode == transfer.ERROR and body
    assert not (tmp_path / "recv" / "bad.nqt").exists()


def test_bad_magic_gets_error(server):
    with socket.create_connection(transfer.parse_endpoint(server.endpoint)) as sock:
        sock.sendall(b"XXXX" + bytes(9))
        opcode, _ = transfer.read_frame(sock)
    assert opcode == transfer.ERROR


def test_unreachable(model_path):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    with pytest.raises(TransferError):
        transfer.push(model_path, f"127.0.0.1:{port}", "full", timeout=2)

import numpy as np
import pytest

from nestquant.errors import DataError, InvalidBitwidthError
from nestquant.quantizer import (
    QuantizedTensor,
    compute_scale,
    dequantize,
    perturbation,
    quantize,
    quantize_tensor,
)


def test_scale_is_peak_over_qmax():
    w = np.array([0.5, -2.54, 1.0], dtype=np.float32)
    assert compute_scale(w, 8) == np.float32(2.54 / 127)
    assert compute_scale(w, 4) == np.float32(2.54 / 7)
    assert compute_scale(np.zeros(3), 8) == np.float32(1.0)


def test_per_channel_scale():
    w = np.array([[1.0, -3.0], [0.0, 0.0]], dtype=np.float32)
    s = compute_scale(w, 8, per_channel=True)
    np.testing.assert_array_equal(s, np.array([3 / 127, 1.0], dtype=np.float32))
    q = quantize_tensor(w, 8, per_channel=True)
    assert q.per_channel
    np.testing.assert_array_equal(q.ints, [[42, -127], [0, 0]])


def test_rtn_reference(rng):
    w = rng.normal(size=1000).astype(np.float32)
    s = compute_scale(w, 8)
    x = w.astype(np.float64) / np.float64(s)
    want = np.clip(np.sign(x) * np.floor(np.abs(x) + 0.5), -128, 127)
    np.testing.assert_array_equal(quantize(w, s, 8, "rtn"), want)


def test_peak_maps_to_qmax(rng):
    w = rng.normal(size=(16, 9)).astype(np.float32)
    for n in range(2, 9):
        for strat in ("rtn", "adaptive", "up", "down"):
            q = quantize_tensor(w, n, strat)
            assert q.ints.max() <= 2 ** (n - 1) - 1 and q.ints.min() >= -(2 ** (n - 1))


def test_adaptive_error_bounded(rng):
    w = rng.normal(size=(8, 64)).astype(np.float32)
    q = quantize_tensor(w, 8, "adaptive")
    assert np.all(np.abs(perturbation(w, q)) < 1.0)
    assert np.all(np.abs(perturbation(w, q).sum(axis=1)) <= 0.5 + 1e-4)


def test_dequantize_float32():
    q = QuantizedTensor(np.array([-3, 0, 5]), np.float32(0.25), 4)
    out = dequantize(q)
    assert out.dtype == np.float32
    np.testing.assert_array_equal(out, [-0.75, 0, 1.25])


def test_errors():
    with pytest.raises(DataError):
        compute_scale(np.array([1.0, np.nan]), 8)
    with pytest.raises(DataError):
        compute_scale(np.array([]), 8)
    with pytest.raises(InvalidBitwidthError):
        compute_scale(np.ones(3), 9)
    with pytest.raises(DataError):
        QuantizedTensor(np.zeros(2), 0.0, 8)

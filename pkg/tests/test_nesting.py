import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestquant.errors import CorruptionError, InvalidCombinationError, NestQuantError, ShapeError
from nestquant.nesting import (
    advise_nested_bits,
    check_combination,
    decompose,
    error_census,
    nest_model,
    quantize_model,
    recompose,
)
from nestquant.quantizer import dequantize
from nestquant.rounding import RoundingStrategy

ALL = list(RoundingStrategy)


def reference_decompose(w, n, h, strategy, compensate):
    """Scalar reference on Python ints."""
    l = n - h
    if strategy in ("bitshift", "down"):
        q = w >> l
    elif strategy == "up":
        q = -((-w) >> l)
    else:  # rtn, half away from zero
        q = (abs(w) + (1 << (l - 1))) >> l
        q = q if w >= 0 else -q
    high = max(-(1 << (h - 1)), min((1 << (h - 1)) - 1, q))
    low = w - (high << l)
    if not compensate:
        low = max(-(1 << (l - 1)), min((1 << (l - 1)) - 1, low))
    return high, low


@pytest.mark.parametrize("n", [6, 8])
@pytest.mark.parametrize("strategy", ["bitshift", "rtn", "up", "down"])
@pytest.mark.parametrize("compensate", [False, True])
def test_matches_scalar_reference(n, strategy, compensate):
    values = np.arange(-(1 << (n - 1)), 1 << (n - 1))
    for h in range(3, n):
        hi, lo = decompose(values, h, strategy, compensate, n=n)
        want = [reference_decompose(int(v), n, h, strategy, compensate) for v in values]
        assert list(zip(hi.tolist(), lo.tolist())) == want


def test_worked_example():
    hi, lo = decompose(np.array([-67]), 4, "bitshift", compensate=False)
    assert (hi[0], lo[0], recompose(hi, lo, 4)[0]) == (-5, 7, -73)
    hi, lo = decompose(np.array([-67]), 4, "bitshift", compensate=True)
    assert (hi[0], lo[0], recompose(hi, lo, 4)[0]) == (-5, 13, -67)


@pytest.mark.parametrize("n", [6, 8])
@pytest.mark.parametrize("strategy", ALL)
def test_compensated_is_lossless_exhaustive(n, strategy):
    values = np.arange(-(1 << (n - 1)), 1 << (n - 1))
    for h in range(3, n):
        hi, lo = decompose(values, h, strategy, n=n)
        assert hi.min() >= -(1 << (h - 1)) and hi.max() < 1 << (h - 1)
        l = n - h
        assert lo.min() >= -(1 << l) and lo.max() < 1 << l
        np.testing.assert_array_equal(recompose(hi, lo, l, n), values)


@settings(max_examples=150, deadline=None)
@given(st.sampled_from([6, 8]).flatmap(lambda n: st.tuples(
    st.just(n), st.integers(3, n - 1), st.sampled_from(ALL),
    st.lists(st.integers(-(1 << (n - 1)), (1 << (n - 1)) - 1), min_size=1, max_size=64))))
def test_compensated_is_lossless_property(case):
    n, h, strategy, vals = case
    w = np.array(vals)
    hi, lo = decompose(w, h, strategy, n=n)
    np.testing.assert_array_equal(recompose(hi, lo, n - h, n), w)


def test_census_rtn_row():
    got = [(c.nonzero_count, c.error_min, c.error_max)
           for c in (error_census(8, h, "rtn") for h in (7, 6, 5, 4, 3))]
    assert got == [(65, 0, 1), (34, 0, 2), (20, 0, 4), (16, 0, 8), (20, 0, 16)]
    c = error_census(8, 4, "rtn", compensate=True)
    assert c.nonzero_count == 0 and c.total == 256
    assert error_census(8, 4, "rtn").as_row() == ["rtn", 8, 4, 16, 0, 8]
    with pytest.raises(ValueError):
        error_census(8, 4, "adaptive")


def test_combinations():
    check_combination(8, 3)
    check_combination(6, 5)
    for n, h in [(8, 8), (8, 2), (7, 4), (4, 2), (8, 0)]:
        with pytest.raises(InvalidCombinationError):
            check_combination(n, h)
    check_combination(4, 2, strict=False)


@pytest.mark.parametrize("mb,n,want", [(16.3, 8, 5), (29.99, 8, 5), (30.0, 8, 4), (299.9, 8, 4),
                                       (300.0, 8, 3), (1161.0, 8, 3), (20, 6, 4), (100, 6, 3), (500, 6, 2)])
def test_advisor(mb, n, want):
    assert advise_nested_bits(mb, n) == want


def test_advisor_errors():
    with pytest.raises(InvalidCombinationError):
        advise_nested_bits(10, 7)
    with pytest.raises(ValueError):
        advise_nested_bits(0, 8)


def test_decompose_errors():
    with pytest.raises(CorruptionError):
        decompose(np.array([200]), 4, n=8)
    with pytest.raises(ShapeError):
        recompose(np.zeros(2), np.zeros(3), 4)
    with pytest.raises(CorruptionError):
        recompose(np.array([7]), np.array([16]), 4, n=8)


def fp_model(rng):
    return {"a": rng.normal(size=(8, 3, 3, 3)).astype(np.float32),
            "b": rng.normal(size=(10, 72)).astype(np.float32)}


def test_nest_model_views(rng):
    weights = fp_model(rng)
    m = nest_model(weights, 8, 4, name="m")
    assert m.param_count == 8 * 27 + 720 and m.nested and m.l == 4
    plain = quantize_model(weights, 8)
    for layer, ref in zip(m.layers, plain.layers):
        np.testing.assert_array_equal(layer.full_ints(), ref.full_ints())
        part = layer.part_quantized()
        assert part.bits == 4 and part.scale == np.float32(layer.scale * 16)
        np.testing.assert_array_equal(part.ints, layer.high_ints())
    full = m.full_weights()["b"]
    np.testing.assert_allclose(dequantize(full), weights["b"], atol=float(full.scale) + 1e-6)  # adaptive: under one step


def test_jobs_match_serial(rng):
    weights = fp_model(rng)
    a = nest_model(weights, 8, 5, jobs=1)
    b = nest_model(weights, 8, 5, jobs=4)
    for x, y in zip(a.layers, b.layers):
        assert x.w_high == y.w_high and x.w_low == y.w_low


def test_layer_error_names_layer():
    with pytest.raises(NestQuantError, match="'bad'"):
        nest_model({"ok": np.ones((2, 2)), "bad": np.array([[np.nan, 1.0]])}, 8, 4)


def test_plain_model():
    m = quantize_model({"w": np.eye(3, dtype=np.float32)}, 6)
    assert m.h == 6 and not m.nested and m.layers[0].w_low is None

"""
TsallisSeg - Tensor helpers and TSEG1 container tests.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backend.core_logic.tensor_core import (
    check_finite, derive_rng, log_softmax, one_hot, one_hot_map, softmax, uniform_noise,
)
from shared.tensor_io import decode_tensor, encode_tensor, read_tensor, write_tensor
from shared.utils import NonFiniteError, TSEGFormatError, format_eps, parse_fraction


# ============== TEST 1: Softmax ==============

logit_columns = st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=8)


@settings(max_examples=50, deadline=None)
@given(logit_columns)
def test_softmax_is_a_distribution(values):
    probs = softmax(np.asarray(values, dtype=np.float64))
    assert np.all(probs >= 0)
    assert abs(probs.sum() - 1.0) < 1e-9


def test_softmax_keeps_storage_dtype():
    logits = np.zeros((3, 2, 2), dtype=np.float32)
    assert softmax(logits).dtype == np.float32
    assert softmax(logits.astype(np.float64)).dtype == np.float64
    np.testing.assert_allclose(softmax(logits), 1.0 / 3.0, rtol=1e-6)


def test_softmax_survives_huge_logits():
    probs = softmax(np.array([1000.0, 0.0, -1000.0]))
    np.testing.assert_allclose(probs, [1.0, 0.0, 0.0], atol=1e-12)


def test_softmax_rejects_single_class_and_nan():
    with pytest.raises(ValueError):
        softmax(np.zeros((1, 2, 2)))
    with pytest.raises(NonFiniteError):
        softmax(np.array([0.0, np.nan]))


def test_log_softmax_matches_log_of_softmax():
    logits = np.array([[2.0, -1.0], [0.5, 0.5], [-3.0, 4.0]])
    np.testing.assert_allclose(log_softmax(logits), np.log(softmax(logits)), atol=1e-12)


# ============== TEST 2: Indicators ==============

def test_one_hot():
    np.testing.assert_array_equal(one_hot(2, 4), [0, 0, 1, 0])
    with pytest.raises(ValueError):
        one_hot(4, 4)


def test_one_hot_map_zeroes_ignored_pixels():
    labels = np.array([[0, 1], [255, 2]], dtype=np.uint8)
    field = one_hot_map(labels, 3, 255)
    assert field.shape == (3, 2, 2)
    np.testing.assert_array_equal(field[:, 1, 0], [0, 0, 0])
    np.testing.assert_array_equal(field.sum(axis=0), [[1, 1], [0, 1]])
    with pytest.raises(ValueError):
        one_hot_map(np.array([[3]]), 3, 255)


def test_check_finite_reports_count():
    with pytest.raises(NonFiniteError, match="2 non-finite"):
        check_finite("x", np.array([1.0, np.inf, np.nan]))


# ============== TEST 3: Randomness ==============

def test_derive_rng_depends_only_on_seed_and_index():
    a = derive_rng(7, 3).uniform(size=5)
    b = derive_rng(7, 3).uniform(size=5)
    c = derive_rng(7, 4).uniform(size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(ValueError):
        derive_rng(-1, 0)


def test_uniform_noise_stays_in_bounds():
    noise = uniform_noise(derive_rng(0, 0), (3, 16, 16), -0.1, 0.1)
    assert noise.dtype == np.float32
    assert noise.min() >= np.float32(-0.1) and noise.max() <= np.float32(0.1)
    with pytest.raises(ValueError):
        uniform_noise(derive_rng(0, 0), (2,), 1.0, 0.0)


# ============== TEST 4: TSEG1 container ==============

def test_tseg_header_layout():
    buffer = encode_tensor(np.arange(6, dtype=np.uint8).reshape(2, 3))
    assert buffer[:5] == b"TSEG1"
    assert buffer[5] == 1 and buffer[6] == 2
    assert buffer[7:15] == b"\x02\x00\x00\x00\x03\x00\x00\x00"
    assert buffer[15:] == bytes(range(6))


def test_tseg_file_round_trip(tmp_path):
    array = np.linspace(0, 1, 24, dtype=np.float32).reshape(2, 3, 4)
    path = tmp_path / "x.tseg"
    write_tensor(path, array)
    loaded = read_tensor(path)
    assert loaded.dtype == np.float32
    np.testing.assert_array_equal(loaded, array)


def test_tseg_rejects_bad_input(tmp_path):
    with pytest.raises(TSEGFormatError):
        encode_tensor(np.zeros(3, dtype=np.float64))
    with pytest.raises(TSEGFormatError):
        encode_tensor(np.zeros((1, 1, 1, 1, 1), dtype=np.float32))
    with pytest.raises(TSEGFormatError):
        decode_tensor(b"NOPE!\x00\x01\x01\x00\x00\x00")
    good = encode_tensor(np.zeros(4, dtype=np.float32))
    with pytest.raises(TSEGFormatError, match="truncated"):
        decode_tensor(good[:-1])
    path = tmp_path / "trailing.tseg"
    path.write_bytes(good + b"\x00")
    with pytest.raises(TSEGFormatError, match="trailing"):
        read_tensor(path)


def test_tseg_truncated_dims_raise_format_error():
    good = encode_tensor(np.zeros((2, 3), dtype=np.float32))
    # cuts inside the rank byte, the first dim and the second dim
    for cut in (6, 9, 14):
        with pytest.raises(TSEGFormatError, match="truncated"):
            decode_tensor(good[:cut])


# ============== TEST 5: Radius text ==============

def test_parse_fraction_and_format_eps():
    assert parse_fraction("8/255") == 8 / 255
    assert parse_fraction("0.25/255") == 0.25 / 255
    assert parse_fraction("0.03") == 0.03
    with pytest.raises(ValueError):
        parse_fraction("1/0")
    with pytest.raises(ValueError):
        parse_fraction("eight")
    assert format_eps(8 / 255) == "8/255"
    assert format_eps(0.5 / 255) == "0.5/255"
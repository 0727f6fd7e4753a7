import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bridgediff.exceptions import FormatError, InvalidShapeError
from bridgediff.numerics import (
    as_tensor,
    make_rng,
    read_tensor,
    rng_from_state,
    rng_state,
    sample_standard_normal,
    split_rng,
    tensor_from_bytes,
    tensor_to_bytes,
)


def test_same_seed_same_draws():
    a = sample_standard_normal(make_rng(1), [4])
    b = sample_standard_normal(make_rng(1), [4])
    assert np.array_equal(a, b)


def test_streams_differ():
    assert not np.array_equal(sample_standard_normal(make_rng(1, 0), [4]), sample_standard_normal(make_rng(1, 1), [4]))


def test_gaussian_moments():
    n = 100_000
    x = sample_standard_normal(make_rng(7), [n])
    # 3 sigma standard-error bands
    assert abs(x.mean()) < 3 / np.sqrt(n)
    assert abs(x.var() - 1) < 3 * np.sqrt(2 / n)
    assert abs(x.mean()) < 0.02 and abs(x.var() - 1) < 0.03


@pytest.mark.parametrize("shape", [[0], [], [3, 0], [2**40, 2**20]])
def test_invalid_shapes(shape):
    with pytest.raises(InvalidShapeError):
        sample_standard_normal(make_rng(0), shape)


def test_split_is_deterministic_from_same_state():
    parent = make_rng(3)
    state = rng_state(parent)
    a1, b1 = split_rng(parent)
    a2, b2 = split_rng(rng_from_state(state))
    assert np.array_equal(a1.standard_normal(10), a2.standard_normal(10))
    assert np.array_equal(b1.standard_normal(10), b2.standard_normal(10))


def test_split_children_uncorrelated():
    left, right = split_rng(make_rng(5))
    x, y = left.standard_normal(1000), right.standard_normal(1000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.05


def test_split_advances_parent():
    parent, untouched = make_rng(9), make_rng(9)
    split_rng(parent)
    assert not np.array_equal(parent.standard_normal(8), untouched.standard_normal(8))


def test_rng_state_roundtrip():
    rng = make_rng(11)
    rng.standard_normal(5)
    clone = rng_from_state(rng_state(rng))
    assert np.array_equal(rng.standard_normal(5), clone.standard_normal(5))


def test_as_tensor_rejects_nonfinite():
    with pytest.raises(InvalidShapeError):
        as_tensor([1.0, np.nan])
    with pytest.raises(InvalidShapeError):
        as_tensor([np.inf])


def test_bbt1_layout():
    blob = tensor_to_bytes(np.array([[1.0, 2.0, 3.0]]))
    assert blob[:4] == b"BBT1"
    assert blob[4:8] == (2).to_bytes(4, "little")
    assert blob[8:16] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert np.frombuffer(blob[16:], "<f8").tolist() == [1.0, 2.0, 3.0]


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5), elements=st.floats(allow_nan=False)))
def test_bbt1_roundtrip_bit_exact(arr):
    back = tensor_from_bytes(tensor_to_bytes(arr))
    assert back.shape == arr.shape
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_bbt1_errors():
    blob = tensor_to_bytes(np.ones((2, 2)))
    with pytest.raises(FormatError):
        tensor_from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        read_tensor(io.BytesIO(blob[:-3]))
    with pytest.raises(FormatError):
        tensor_from_bytes(blob + b"\x00")

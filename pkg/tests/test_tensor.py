import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftadd.errors import GeometryError
from shiftadd.tensor import ConvGeometry, extract_patch, flat_offset, flatten, tensor_elementwise, unflatten

from . import oracles


def test_geometry_output_size():
    g = ConvGeometry(3, 4, 3, 3, stride=2, padding=1, in_rows=8, in_cols=7)
    assert (g.output_rows, g.output_cols) == ((8 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)
    with pytest.raises(GeometryError):
        ConvGeometry(1, 1, 5, 5, in_rows=3, in_cols=3)
    with pytest.raises(GeometryError):
        ConvGeometry(0, 1, 1, 1)


def test_whole_input_patch():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    g = ConvGeometry(1, 1, 2, 2, 1, 0, 2, 2)
    np.testing.assert_array_equal(extract_patch(x, g, 0, 0), [[[1, 2], [3, 4]]])


def test_stride_two_indexing():
    x = np.eye(3)[None]
    g = ConvGeometry(1, 1, 1, 1, 2, 0, 3, 3)
    assert extract_patch(x, g, 1, 1).item() == x[0, 2, 2]


def test_patches_match_loop_oracle(rng):
    x = rng.normal(size=(3, 5, 5))
    g = ConvGeometry(3, 1, 3, 3, 1, 1, 5, 5)
    refs = 0
    for e in range(g.output_rows):
        for f in range(g.output_cols):
            p = extract_patch(x, g, e, f)
            np.testing.assert_array_equal(p, oracles.patch(x, 3, 3, 1, 1, e, f))
            refs += p.size
    assert refs == 3 * 3 * 3 * g.output_rows * g.output_cols


def test_patch_errors():
    g = ConvGeometry(1, 1, 1, 1, 1, 0, 2, 2)
    with pytest.raises(GeometryError):
        extract_patch(np.zeros((2, 2, 2)), g, 0, 0)
    with pytest.raises(GeometryError):
        extract_patch(np.zeros((1, 2, 2)), g, 2, 0)


def test_elementwise():
    np.testing.assert_array_equal(tensor_elementwise("add", [1, 2], [3, 4]), [4, 6])
    x = np.array([0.3, -2.0])
    np.testing.assert_array_equal(tensor_elementwise("sub", x, x), [0, 0])
    np.testing.assert_array_equal(tensor_elementwise("clamp", [-3, 0.5, 2], lo=-1, hi=1), [-1, 0.5, 1])
    np.testing.assert_array_equal(tensor_elementwise("mul", [2, 3], [4, 5]), [8, 15])
    with pytest.raises(GeometryError):
        tensor_elementwise("add", [1, 2], [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**31))
def test_flatten_roundtrip(shape, seed):
    t = np.random.default_rng(seed).normal(size=shape)
    s, data = flatten(t)
    np.testing.assert_array_equal(unflatten(s, data), t)
    idx = tuple(np.random.default_rng(seed).integers(0, n) for n in shape)
    assert data[flat_offset(shape, idx)] == t[idx]


def test_flat_offset_rejects_out_of_range():
    with pytest.raises(GeometryError):
        flat_offset((2, 3), (2, 0))
    with pytest.raises(GeometryError):
        unflatten((2, 2), np.zeros(3))

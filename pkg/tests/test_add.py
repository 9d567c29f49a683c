import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftadd.add import (AddWeights, add_backward, add_forward, add_forward_strided, add_prune, hardtanh,
                          weight_histogram)
from shiftadd.errors import ConfigError, GeometryError
from shiftadd.quant import choose_scale, quantize
from shiftadd.tensor import ConvGeometry

from . import oracles


def test_direct_substitution(backend):
    g = ConvGeometry(1, 1, 1, 2, 1, 0, 1, 2)
    w = AddWeights.dense(np.array([[[[0.0, 1.0]]]]))
    assert add_forward(np.array([[[1.0, -2.0]]]), w, g, backend=backend).item() == -4.0


def test_identity_is_maximum_response(rng, backend):
    g = ConvGeometry(2, 1, 3, 3, 1, 0, 3, 3)
    x = rng.normal(size=(2, 3, 3))
    assert add_forward(x, AddWeights.dense(x[None]), g, backend=backend).item() == 0.0


def test_forward_matches_loop_oracle(rng, backend):
    g = ConvGeometry(4, 3, 3, 3, 1, 1, 6, 6)
    w = AddWeights.dense(rng.normal(size=g.filter_shape))
    x = rng.normal(size=(4, 6, 6))
    out = add_forward(x, w, g, backend=backend)
    np.testing.assert_array_equal(out, oracles.add_forward(x, w.weights, w.mask, 1, 1))
    assert np.all(out <= 0)


def test_stride_contract():
    g = ConvGeometry(1, 1, 1, 1, 2, 0, 4, 4)
    w = AddWeights.dense(np.zeros((1, 1, 1, 1)))
    with pytest.raises(GeometryError):
        add_forward(np.zeros((1, 4, 4)), w, g)
    assert add_forward_strided(np.zeros((1, 4, 4)), w, g).shape == (1, 2, 2)


def test_hardtanh():
    np.testing.assert_array_equal(hardtanh(np.array([0.5, 2, -3])), [0.5, 1, -1])


def test_single_position_backward(backend):
    w = AddWeights.dense(np.ones((1, 1, 1, 1)))
    gw, gx = add_backward(np.array([[[3.0]]]), w, np.ones((1, 1, 1)), ConvGeometry(1, 1, 1, 1), backend=backend)
    assert gw.item() == 2.0
    # derivative of -|x - w| in x is negative for x > w
    assert gx.item() == -1.0


def test_equal_inputs_give_zero_grads(rng, backend):
    x = rng.normal(size=(2, 3, 3))
    g = ConvGeometry(2, 1, 3, 3, 1, 0, 3, 3)
    gw, gx = add_backward(x, AddWeights.dense(x[None]), np.ones((1, 1, 1)), g, backend=backend)
    assert not np.any(gw) and not np.any(gx)


def test_backward_matches_loop_oracle(rng, backend):
    g = ConvGeometry(3, 2, 3, 3, 1, 1, 5, 4)
    w = add_prune(AddWeights.dense(rng.normal(size=g.filter_shape)), 0.3, "random", 2)
    x = rng.normal(size=(2, 3, 5, 4))
    up = rng.normal(size=(2,) + g.output_shape)
    gw, gx = add_backward(x, w, up, g, backend=backend)
    ow, ox = oracles.add_backward(x, w.weights, w.mask, up, 1, 1)
    np.testing.assert_array_equal(gw, ow)
    np.testing.assert_array_equal(gx, ox)
    assert not np.any(gw[w.mask == 0])


@pytest.mark.parametrize("bits", [8, 16, 32])
def test_fixed_point_forward_is_exact(rng, bits, backend):
    g = ConvGeometry(2, 3, 3, 3, 1, 1, 4, 4)
    w = add_prune(AddWeights.dense(rng.normal(scale=0.3, size=g.filter_shape)), 0.25, "random", 1)
    x = rng.normal(scale=4.0, size=(2, 4, 4))
    qx, qw = quantize(x, choose_scale(x, bits)), quantize(w.weights, choose_scale(w.weights, bits))
    k = min(qx.format.scale_exponent, qw.format.scale_exponent)
    xc = qx.codes * 2 ** (qx.format.scale_exponent - k)
    wc = qw.codes * 2 ** (qw.format.scale_exponent - k)
    codes = oracles.add_forward_codes(xc, wc, w.mask, 1)
    want = np.array([math.ldexp(int(c), k) for c in codes.ravel()])
    np.testing.assert_array_equal(add_forward(x, w, g, bits=bits, backend=backend).ravel(), want)


def test_surrogate_signs_agree_with_true_subgradient(rng):
    # unit upstream on a single output; compare per-term signs
    g = ConvGeometry(3, 1, 3, 3, 1, 0, 3, 3)
    for _ in range(20):
        x = rng.normal(size=(3, 3, 3))
        w = AddWeights.dense(rng.normal(size=g.filter_shape))
        gw, gx = add_backward(x, w, np.ones((1, 1, 1)), g)
        d = x[None] - w.weights
        nz = d != 0
        # d/dw -|x-w| = sign(x-w); d/dx -|x-w| = -sign(x-w)
        assert np.all(np.sign(gw[nz]) == np.sign(d[nz]))
        assert np.all(np.sign(gx[nz[0]]) == -np.sign(d[0][nz[0]]))


def test_input_grad_factors_bounded(rng):
    g = ConvGeometry(1, 1, 1, 1)
    w = AddWeights.dense(np.zeros((1, 1, 1, 1)))
    for v in rng.normal(scale=10, size=50):
        _, gx = add_backward(np.array([[[v]]]), w, np.ones((1, 1, 1)), g)
        assert -1 <= gx.item() <= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(-64, 64))
def test_translation_invariance(seed, c):
    rng = np.random.default_rng(seed)
    g = ConvGeometry(2, 2, 3, 3, 1, 0, 4, 4)
    x = rng.integers(-50, 50, size=(2, 4, 4)).astype(float) / 8
    w = rng.integers(-50, 50, size=g.filter_shape).astype(float) / 8
    a = add_forward(x, AddWeights.dense(w), g)
    b = add_forward(x + c, AddWeights.dense(w + c), g)
    np.testing.assert_array_equal(a, b)


def test_prune_magnitude_keeps_largest():
    w = AddWeights.dense(np.array([0.1, -5, 0.3, 2, -0.2, 7, 0.05, -1, 4, 0.4]).reshape(1, 1, 1, 10))
    p = add_prune(w, 0.5, "magnitude")
    kept = set(np.abs(w.weights[p.mask != 0]))
    assert kept == {5, 2, 7, 1, 4}
    np.testing.assert_array_equal(add_prune(w, 0.0).mask, w.mask)
    with pytest.raises(ConfigError):
        add_prune(w, -0.1)
    with pytest.raises(ConfigError):
        add_prune(w, 0.5, "nope")


def test_prune_random_count_and_forward(rng):
    g = ConvGeometry(3, 2, 3, 3, 1, 1, 4, 4)
    w = AddWeights.dense(rng.normal(size=g.filter_shape))
    p = add_prune(w, 0.4, "random", 5)
    assert p.active == w.active - round(0.4 * w.active)
    x = rng.normal(size=(3, 4, 4))
    np.testing.assert_array_equal(add_forward(x, p, g), oracles.add_forward(x, p.weights, p.mask, 1, 1))


def test_histogram():
    counts, _ = weight_histogram(AddWeights.dense(np.ones((1, 1, 1, 3))), 1)
    assert list(counts) == [3]
    counts, _ = weight_histogram(AddWeights.dense(np.array([-1.0, 1.0]).reshape(1, 1, 1, 2)), 2)
    assert list(counts) == [1, 1]
    with pytest.raises(ConfigError):
        weight_histogram(AddWeights(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1))), 3)


def test_histogram_counts_unmasked(rng):
    w = add_prune(AddWeights.dense(rng.normal(size=(4, 3, 3, 3))), 0.6, "magnitude")
    counts, edges = weight_histogram(w, 17)
    assert counts.sum() == w.active and len(edges) == 18

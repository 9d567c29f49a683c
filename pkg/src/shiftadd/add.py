"""Add layers: negated L1 distance between input patches and filters."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, GeometryError
from .quant import choose_scale, quantize
from .tensor import check_filter, check_input, pad_input


@dataclass
class AddWeights:
    weights: np.ndarray
    mask: np.ndarray  # 1.0 keeps a position, 0.0 drops it

    @classmethod
    def dense(cls, weights):
        weights = np.asarray(weights, dtype=np.float64)
        return cls(weights, np.ones_like(weights))

    @property
    def shape(self):
        return self.weights.shape

    @property
    def active(self):
        return int(np.count_nonzero(self.mask))

    def copy(self):
        return AddWeights(self.weights.copy(), self.mask.copy())


def add_init(geom, rng, std=1.0):
    return AddWeights.dense(rng.normal(0.0, std, size=geom.filter_shape))


def hardtanh(t):
    return np.clip(t, -1.0, 1.0)


def _l1(x, w, geom, bits, backend):
    x = check_input(x, geom)
    check_filter(w.weights, geom)
    E, F = geom.output_rows, geom.output_cols
    if bits is None:
        acc = kernels.l1_forward(pad_input(x, geom.padding), w.weights, w.mask, geom.stride, E, F, backend=backend)
        return -acc
    qx = quantize(x, choose_scale(x, bits))
    qw = quantize(w.weights, choose_scale(w.weights, bits))
    # align both operands on the finer grid before subtracting
    k = min(qx.format.scale_exponent, qw.format.scale_exponent)
    xc = np.left_shift(qx.codes, qx.format.scale_exponent - k)
    wc = np.left_shift(qw.codes, qw.format.scale_exponent - k)
    acc = kernels.l1_forward_int(pad_input(xc, geom.padding), wc, w.mask.astype(np.int64), geom.stride, E, F,
                                 backend=backend)
    return -np.ldexp(acc.astype(np.float64), k)


def add_forward(x, w, geom, bits=None, backend=None):
    """``O[c_o, e, f] = -sum |x[c_i, e+r, f+s] - w[c_o, c_i, r, s]|`` over unmasked terms.

    Only stride 1 is accepted. With ``bits`` set the subtraction runs on
    integer codes (both operands aligned to the finer of their two scales).
    """
    if geom.stride != 1:
        raise GeometryError(f"add layers require stride 1, got {geom.stride}")
    single = np.ndim(x) == 3
    out = _l1(x, w, geom, bits, backend)
    return out[0] if single else out


def add_forward_strided(x, w, geom, bits=None, backend=None):
    """Same as :func:`add_forward` without the stride restriction (add-only baselines)."""
    single = np.ndim(x) == 3
    out = _l1(x, w, geom, bits, backend)
    return out[0] if single else out


def add_backward(x, w, upstream, geom, backend=None):
    """Surrogate gradients of the add layer.

    ``grad_w = sum upstream * (x - w)`` (masked) and
    ``grad_x = sum upstream * HT(w - x)``. The full difference replaces the
    sign on the weight path; the input path is clipped to ``[-1, 1]``.
    """
    single = np.ndim(x) == 3
    x = check_input(x, geom)
    check_filter(w.weights, geom)
    up = np.asarray(upstream, dtype=np.float64)
    if up.ndim == 3:
        up = up[None]
    if up.shape != (x.shape[0],) + geom.output_shape:
        raise GeometryError(f"upstream shape {up.shape} does not match output {geom.output_shape}")
    pad = geom.padding
    xp = pad_input(x, pad)
    grad_w = kernels.l1_weight_grad(xp, w.weights, up, geom.stride, backend=backend)
    grad_w = np.where(w.mask != 0, grad_w, 0.0)
    # the kernel accumulates up * HT(x - w); the derivative of -|x - w| in x has the opposite sign
    gxp = kernels.l1_input_grad(xp, w.weights, w.mask, up, geom.stride, backend=backend)
    grad_x = -gxp[:, :, pad : pad + geom.in_rows, pad : pad + geom.in_cols]
    if single:
        grad_x = grad_x[0]
    return grad_w, np.ascontiguousarray(grad_x)


def add_prune(w, ratio, policy="magnitude", rng_seed=0):
    """Mask ``round(ratio * active)`` more positions, smallest ``|w|`` first or uniformly at random."""
    if not (0.0 <= ratio < 1.0):
        raise ConfigError(f"prune ratio must be in [0, 1), got {ratio}")
    active = np.flatnonzero(w.mask)
    count = int(round(ratio * active.size))
    out = w.copy()
    if count == 0:
        return out
    if policy == "magnitude":
        mags = np.abs(w.weights.reshape(-1)[active])
        drop = active[np.argsort(mags, kind="stable")[:count]]
    elif policy == "random":
        drop = np.random.default_rng(rng_seed).choice(active, size=count, replace=False)
    else:
        raise ConfigError(f"unknown prune policy {policy!r}")
    mask = out.mask.reshape(-1)
    mask[drop] = 0.0
    return out


def weight_histogram(w, bins=30):
    """Histogram of unmasked weights; returns ``(counts, edges)``."""
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    vals = w.weights[w.mask != 0]
    if vals.size == 0:
        raise ConfigError("all add weights are masked")
    lo, hi = float(vals.min()), float(vals.max())
    return np.histogram(vals, bins=bins, range=(lo, hi) if hi > lo else None)

"""Dense tensors, convolution geometry and patch extraction.

Tensors are plain ``numpy.ndarray`` objects in float64 (or int64 for
fixed-point codes). This module only adds the geometry bookkeeping shared
by the shift and add kernels.
"""
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError


@dataclass(frozen=True)
class ConvGeometry:
    """Shape bookkeeping for one convolution-like layer.

    ``padding`` is zero-padding applied on every side. Output size follows
    ``E = (H + 2*padding - R) // stride + 1``.
    """

    in_channels: int
    out_channels: int
    kernel_rows: int
    kernel_cols: int
    stride: int = 1
    padding: int = 0
    in_rows: int = 1
    in_cols: int = 1

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_rows", "kernel_cols", "stride", "in_rows", "in_cols"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise GeometryError(f"{name} must be a positive integer, got {v!r}")
        if self.padding < 0:
            raise GeometryError(f"padding must be non-negative, got {self.padding}")
        if self.output_rows < 1 or self.output_cols < 1:
            raise GeometryError(
                f"kernel {self.kernel_rows}x{self.kernel_cols} does not fit input "
                f"{self.in_rows}x{self.in_cols} with padding {self.padding}"
            )

    @property
    def output_rows(self):
        return (self.in_rows + 2 * self.padding - self.kernel_rows) // self.stride + 1

    @property
    def output_cols(self):
        return (self.in_cols + 2 * self.padding - self.kernel_cols) // self.stride + 1

    @property
    def input_shape(self):
        return (self.in_channels, self.in_rows, self.in_cols)

    @property
    def output_shape(self):
        return (self.out_channels, self.output_rows, self.output_cols)

    @property
    def filter_shape(self):
        return (self.out_channels, self.in_channels, self.kernel_rows, self.kernel_cols)

    @property
    def terms_per_output(self):
        return self.in_channels * self.kernel_rows * self.kernel_cols

    @classmethod
    def same(cls, in_channels, out_channels, kernel, in_rows, in_cols, stride=1):
        """Geometry with padding ``kernel // 2`` (size-preserving at stride 1)."""
        return cls(in_channels, out_channels, kernel, kernel, stride, kernel // 2, in_rows, in_cols)


def check_input(x, geom):
    """Return ``x`` as a float/int batch ``(N, C, H, W)``; 3-D input gets a batch axis."""
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != geom.input_shape:
        raise GeometryError(f"input shape {x.shape} does not match geometry input {geom.input_shape}")
    return x


def check_filter(w, geom):
    w = np.asarray(w)
    if w.shape != geom.filter_shape:
        raise GeometryError(f"filter shape {w.shape} does not match geometry {geom.filter_shape}")
    return w


def pad_input(x, padding):
    """Materialize the zero-padded batch (kernels index it directly)."""
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def extract_patch(x, geom, e, f):
    """Return the ``(C_I, R, S)`` input patch feeding output position ``(e, f)``.

    Padding is applied logically: out-of-bounds positions read as zero.
    """
    x = np.asarray(x)
    if x.shape != geom.input_shape:
        raise GeometryError(f"input shape {x.shape} does not match geometry input {geom.input_shape}")
    if not (0 <= e < geom.output_rows and 0 <= f < geom.output_cols):
        raise GeometryError(f"output position ({e}, {f}) outside {geom.output_rows}x{geom.output_cols}")
    patch = np.zeros((geom.in_channels, geom.kernel_rows, geom.kernel_cols), dtype=x.dtype)
    top = e * geom.stride - geom.padding
    left = f * geom.stride - geom.padding
    r0, r1 = max(0, -top), min(geom.kernel_rows, geom.in_rows - top)
    c0, c1 = max(0, -left), min(geom.kernel_cols, geom.in_cols - left)
    if r0 < r1 and c0 < c1:
        patch[:, r0:r1, c0:c1] = x[:, top + r0 : top + r1, left + c0 : left + c1]
    return patch


def tensor_elementwise(op, a, b=None, lo=-1.0, hi=1.0):
    """Pointwise ``add``/``sub``/``mul`` of equal-shaped tensors, or ``clamp`` of ``a`` to ``[lo, hi]``."""
    a = np.asarray(a, dtype=np.float64)
    if op == "clamp":
        return np.clip(a, lo, hi)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise GeometryError(f"shape mismatch: {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def flatten(t):
    """Row-major flatten; returns ``(shape, flat_data)``."""
    t = np.asarray(t)
    return tuple(t.shape), t.reshape(-1).copy()


def unflatten(shape, data):
    data = np.asarray(data)
    if int(np.prod(shape, dtype=np.int64)) != data.size:
        raise GeometryError(f"{data.size} values cannot fill shape {tuple(shape)}")
    return data.reshape(shape)


def flat_offset(shape, index):
    """Row-major offset of a multi-index; out-of-range indices are rejected."""
    if len(index) != len(shape):
        raise GeometryError(f"index rank {len(index)} != tensor rank {len(shape)}")
    off = 0
    for i, n in zip(index, shape):
        if not 0 <= i < n:
            raise GeometryError(f"index {tuple(index)} out of range for shape {tuple(shape)}")
        off = off * n + i
    return off

"""Signed fixed-point formats with power-of-two steps (FIX8/16/32)."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, QuantizationError

PRECISIONS = {"fp32": None, "fix32": 32, "fix16": 16, "fix8": 8}


def precision_bits(precision):
    """Bit width for a precision name; ``None`` means floating point."""
    try:
        return PRECISIONS[str(precision).lower()]
    except KeyError:
        raise ConfigError(f"unknown precision {precision!r}; choose from {sorted(PRECISIONS)}") from None


@dataclass(frozen=True)
class FixedPointFormat:
    bits: int
    scale_exponent: int = 0

    def __post_init__(self):
        if self.bits not in (8, 16, 32):
            raise QuantizationError(f"bits must be 8, 16 or 32, got {self.bits}")

    @property
    def step(self):
        return math.ldexp(1.0, self.scale_exponent)

    @property
    def code_min(self):
        return -(1 << (self.bits - 1))

    @property
    def code_max(self):
        return (1 << (self.bits - 1)) - 1

    @property
    def range(self):
        return (math.ldexp(self.code_min, self.scale_exponent), math.ldexp(self.code_max, self.scale_exponent))


@dataclass(frozen=True)
class QuantizedTensor:
    format: FixedPointFormat
    codes: np.ndarray

    @property
    def shape(self):
        return self.codes.shape


def _finite(t):
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise QuantizationError("tensor contains non-finite values")
    return t


def choose_scale(t, bits):
    """Smallest exponent ``k`` with ``max|t| <= (2**(bits-1) - 1) * 2**k``."""
    t = _finite(t)
    if t.size == 0:
        raise QuantizationError("cannot choose a scale for an empty tensor")
    peak = float(np.max(np.abs(t)))
    if peak == 0.0:
        return FixedPointFormat(bits, 0)
    qmax = (1 << (bits - 1)) - 1
    k = math.ceil(math.log2(peak / qmax))
    # log2 may be off by one near exact powers of two
    while peak > math.ldexp(qmax, k):
        k += 1
    while peak <= math.ldexp(qmax, k - 1):
        k -= 1
    return FixedPointFormat(bits, k)


def quantize(t, fmt):
    """Round half-to-even onto the grid ``2**k`` and saturate to the code range."""
    t = _finite(t)
    codes = np.rint(np.ldexp(t, -fmt.scale_exponent))
    codes = np.clip(codes, fmt.code_min, fmt.code_max).astype(np.int64)
    return QuantizedTensor(fmt, codes)


def dequantize(q):
    return np.ldexp(q.codes.astype(np.float64), q.format.scale_exponent)


def fake_quantize(t, bits):
    """Quantize with an automatically chosen scale and return real values.

    ``bits=None`` is a no-op (floating-point mode).
    """
    if bits is None:
        return np.asarray(t, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        return t
    return dequantize(quantize(t, choose_scale(t, bits)))


def ste_round(x):
    """Round half-to-even in the forward pass; see :func:`ste_round_grad`."""
    return np.rint(x)


def ste_round_grad(upstream):
    """Straight-through estimator: rounding is treated as the identity."""
    return upstream

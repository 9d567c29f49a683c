"""Shift layers: convolution with weights ``sign * 2**p``.

Exponents are integers in ``[p_min, 0]`` and signs are ternary, so every
product is a bit-shift plus a sign flip. Learnable layers keep a real
``latent_sign`` that is projected to ``{-1, 0, +1}`` through a deadzone;
exponents are updated directly in integer steps.
"""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import ConfigError, FrozenUpdateError, GeometryError
from .quant import choose_scale, quantize
from .tensor import check_filter, check_input, pad_input

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


@dataclass(frozen=True)
class ShiftInitConfig:
    p_min: int = -7
    nonzero_fraction: float = 0.5
    mode: str = "learnable"
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.nonzero_fraction <= 1.0):
            raise ConfigError(f"nonzero_fraction must be in (0, 1], got {self.nonzero_fraction}")
        if self.p_min >= 0 or int(self.p_min) != self.p_min:
            raise ConfigError(f"p_min must be a negative integer, got {self.p_min}")
        if self.mode not in ("fixed", "learnable"):
            raise ConfigError(f"shift mode must be 'fixed' or 'learnable', got {self.mode!r}")


@dataclass
class ShiftWeights:
    signs: np.ndarray  # int64 in {-1, 0, 1}
    exponents: np.ndarray  # int64 in [p_min, 0]
    latent_sign: np.ndarray
    p_min: int = -7
    deadzone: float = 0.0
    frozen: bool = False

    @property
    def shape(self):
        return self.signs.shape

    @property
    def effective(self):
        """Real-valued weights ``s * 2**p`` (exact in float64)."""
        return np.ldexp(self.signs.astype(np.float64), self.exponents)

    @property
    def nonzero(self):
        return int(np.count_nonzero(self.signs))

    def copy(self):
        return replace(self, signs=self.signs.copy(), exponents=self.exponents.copy(),
                       latent_sign=self.latent_sign.copy())


def project_sign(latent, deadzone):
    return np.where(latent > deadzone, 1, np.where(latent < -deadzone, -1, 0)).astype(np.int64)


def _retained(nonzero_fraction, total):
    return min(total, math.ceil(nonzero_fraction * total - 1e-9))


def shift_init(geom, cfg):
    """Draw initial shift weights for ``geom`` (deterministic in ``cfg.rng_seed``).

    Fixed mode samples exponents from a rounded Gaussian centred at
    ``p_min / 2`` and keeps exactly ``ceil(nonzero_fraction * N)`` random
    positions with random signs. Learnable mode draws exponents uniformly and
    a uniform latent sign whose deadzone keeps the same retained count.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    shape = geom.filter_shape
    total = int(np.prod(shape))
    keep = _retained(cfg.nonzero_fraction, total)
    if cfg.mode == "fixed":
        p = np.rint(rng.normal(cfg.p_min / 2.0, abs(cfg.p_min) / 4.0, size=shape))
        p = np.clip(p, cfg.p_min, 0).astype(np.int64)
        signs = np.zeros(total, dtype=np.int64)
        idx = rng.permutation(total)[:keep]
        signs[idx] = rng.choice(np.array([-1, 1]), size=keep)
        signs = signs.reshape(shape)
        return ShiftWeights(signs, p, signs.astype(np.float64), cfg.p_min, deadzone=0.5, frozen=True)

    p = rng.integers(cfg.p_min, 0, size=shape, endpoint=True).astype(np.int64)
    latent = rng.uniform(-1.0, 1.0, size=shape)
    if keep == total:
        deadzone = 0.0
    else:
        deadzone = float(np.sort(np.abs(latent), axis=None)[total - keep - 1])
    log.debug("shift deadzone %.6f (keep %d of %d)", deadzone, keep, total)
    return ShiftWeights(project_sign(latent, deadzone), p, latent, cfg.p_min, deadzone=deadzone, frozen=False)


def _quantized_input(x, bits):
    fmt = choose_scale(x, bits)
    return quantize(x, fmt)


def shift_forward(x, w, geom, bits=None, backend=None):
    """Shift convolution of a batch ``(N, C_I, H, W)`` (or a single sample).

    With ``bits`` set, the input is quantized and the kernel runs on integer
    codes: each term is ``code << (p - p_min)`` at output scale
    ``2**(k + p_min)``, summed in a 64-bit accumulator.
    """
    single = np.ndim(x) == 3
    x = check_input(x, geom)
    check_filter(w.signs, geom)
    E, F = geom.output_rows, geom.output_cols
    if bits is None:
        out = kernels.conv_forward(pad_input(x, geom.padding), w.effective, geom.stride, E, F, backend=backend)
    else:
        q = _quantized_input(x, bits)
        acc = kernels.shift_forward_int(pad_input(q.codes, geom.padding), w.signs, w.exponents - w.p_min,
                                        geom.stride, E, F, backend=backend)
        out = np.ldexp(acc.astype(np.float64), q.format.scale_exponent + w.p_min)
    return out[0] if single else out


def shift_backward(x, w, upstream, geom, need_weight_grad=True, backend=None):
    """Gradients of a shift layer.

    Returns ``(grad_p, grad_s, grad_x)`` where, with ``G = sum(upstream * x)``
    over batch and output positions, ``grad_p = G * w_s * ln 2`` and
    ``grad_s = G * 2**p``. Both are zero at positions whose sign is 0.
    ``grad_x`` is the transposed convolution of ``upstream`` with ``w_s``.
    When ``need_weight_grad`` is false only ``grad_x`` is computed and the
    other two are ``None``.
    """
    single = np.ndim(x) == 3
    x = check_input(x, geom)
    check_filter(w.signs, geom)
    up = np.asarray(upstream, dtype=np.float64)
    if up.ndim == 3:
        up = up[None]
    if up.shape != (x.shape[0],) + geom.output_shape:
        raise GeometryError(f"upstream shape {up.shape} does not match output {geom.output_shape}")
    pad = geom.padding
    xp = pad_input(x, pad)
    ws = w.effective
    gxp = kernels.conv_input_grad(up, ws, geom.stride, xp.shape[2], xp.shape[3], backend=backend)
    grad_x = gxp[:, :, pad : pad + geom.in_rows, pad : pad + geom.in_cols]
    if single:
        grad_x = grad_x[0]
    if not need_weight_grad:
        return None, None, np.ascontiguousarray(grad_x)
    G = kernels.conv_weight_grad(xp, up, geom.stride, geom.kernel_rows, geom.kernel_cols, backend=backend)
    active = w.signs != 0
    grad_p = np.where(active, G * ws * LN2, 0.0)
    grad_s = np.where(active, G * np.ldexp(1.0, w.exponents), 0.0)
    return grad_p, grad_s, np.ascontiguousarray(grad_x)


def shift_update(w, grad_p, grad_s, lr, threshold=0.5):
    """Integer exponent step plus latent-sign descent.

    Where ``|lr * grad_p| > threshold`` the exponent moves one step against
    the gradient, clamped to ``[p_min, 0]``. The latent sign takes a plain
    gradient step and is re-projected through the deadzone.
    """
    if w.frozen:
        raise FrozenUpdateError("shift weights are frozen")
    g = lr * np.asarray(grad_p, dtype=np.float64)
    step = np.where(np.abs(g) > threshold, np.sign(g), 0.0).astype(np.int64)
    p = np.clip(w.exponents - step, w.p_min, 0)
    latent = w.latent_sign - lr * np.asarray(grad_s, dtype=np.float64)
    return replace(w, exponents=p, latent_sign=latent, signs=project_sign(latent, w.deadzone))


def shift_prune(w, ratio, rng_seed):
    """Zero a random ``round(ratio * nonzero)`` subset of the active positions for good."""
    if not (0.0 <= ratio < 1.0):
        raise ConfigError(f"prune ratio must be in [0, 1), got {ratio}")
    active = np.flatnonzero(w.signs)
    count = int(round(ratio * active.size))
    if count == 0:
        return w.copy()
    rng = np.random.default_rng(rng_seed)
    drop = rng.choice(active, size=count, replace=False)
    signs = w.signs.copy().reshape(-1)
    latent = w.latent_sign.copy().reshape(-1)
    signs[drop] = 0
    # a zero latent sits inside any deadzone and never receives a sign gradient
    latent[drop] = 0.0
    return replace(w, signs=signs.reshape(w.shape), latent_sign=latent.reshape(w.shape),
                   exponents=w.exponents.copy())

"""Numpy fallback kernels.

Every kernel reproduces the reduction order of the compiled core exactly,
so both backends agree bit-for-bit:

* forward sums run over (c_i, r, s) with s innermost, accumulated per output plane;
* weight gradients run over (n, e, f) with f innermost;
* input gradients run over (r, s, c_o) with c_o innermost, accumulated per plane.

Inputs are already padded, contiguous and of the right dtype.
"""
import numpy as np


def _window(xp, r, s, stride, E, F):
    return xp[:, :, r : r + stride * (E - 1) + 1 : stride, s : s + stride * (F - 1) + 1 : stride]


def conv_forward(xp, w, stride, E, F):
    N = xp.shape[0]
    CO, CI, R, S = w.shape
    out = np.zeros((N, CO, E, F))
    for ci in range(CI):
        for r in range(R):
            for s in range(S):
                xs = _window(xp, r, s, stride, E, F)[:, ci]
                out += xs[:, None] * w[None, :, ci, r, s, None, None]
    return out


def l1_forward(xp, w, mask, stride, E, F):
    N = xp.shape[0]
    CO, CI, R, S = w.shape
    out = np.zeros((N, CO, E, F))
    for ci in range(CI):
        for r in range(R):
            for s in range(S):
                xs = _window(xp, r, s, stride, E, F)[:, ci]
                out += np.abs(xs[:, None] - w[None, :, ci, r, s, None, None]) * mask[None, :, ci, r, s, None, None]
    return out


def _seq_sum(prod):
    # prod: (N, CO, E, F) -> (CO,), summed sequentially over (n, e, f)
    flat = prod.transpose(1, 0, 2, 3).reshape(prod.shape[1], -1)
    return np.cumsum(flat, axis=1)[:, -1]


def conv_weight_grad(xp, up, stride, R, S):
    N, CO, E, F = up.shape
    CI = xp.shape[1]
    g = np.zeros((CO, CI, R, S))
    for ci in range(CI):
        for r in range(R):
            for s in range(S):
                xs = _window(xp, r, s, stride, E, F)[:, ci]
                g[:, ci, r, s] = _seq_sum(up * xs[:, None])
    return g


def l1_weight_grad(xp, w, up, stride):
    N, CO, E, F = up.shape
    _, CI, R, S = w.shape
    g = np.zeros((CO, CI, R, S))
    for ci in range(CI):
        for r in range(R):
            for s in range(S):
                xs = _window(xp, r, s, stride, E, F)[:, ci]
                g[:, ci, r, s] = _seq_sum(up * (xs[:, None] - w[None, :, ci, r, s, None, None]))
    return g


def conv_input_grad(up, w, stride, Hp, Wp):
    N, CO, E, F = up.shape
    _, CI, R, S = w.shape
    gx = np.zeros((N, CI, Hp, Wp))
    for r in range(R):
        for s in range(S):
            view = _window(gx, r, s, stride, E, F)
            for co in range(CO):
                view += up[:, co, None] * w[None, co, :, r, s, None, None]
    return gx


def l1_input_grad(xp, w, mask, up, stride):
    N, CO, E, F = up.shape
    _, CI, R, S = w.shape
    gx = np.zeros(xp.shape)
    for r in range(R):
        for s in range(S):
            view = _window(gx, r, s, stride, E, F)
            xs = _window(xp, r, s, stride, E, F)
            for co in range(CO):
                ht = np.clip(xs - w[None, co, :, r, s, None, None], -1.0, 1.0)
                view += up[:, co, None] * ht * mask[None, co, :, r, s, None, None]
    return gx


def shift_forward_int(xp, sign, shift, stride, E, F):
    N = xp.shape[0]
    CO, CI, R, S = sign.shape
    out = np.zeros((N, CO, E, F), dtype=np.int64)
    for ci in range(CI):
        for r in range(R):
            for s in range(S):
                xs = _window(xp, r, s, stride, E, F)[:, ci]
                for co in range(CO):
                    sg = sign[co, ci, r, s]
                    if sg > 0:
                        out[:, co] += np.left_shift(xs, shift[co, ci, r, s])
                    elif sg < 0:
                        out[:, co] -= np.left_shift(xs, shift[co, ci, r, s])
    return out


def l1_forward_int(xp, w, mask, stride, E, F):
    N = xp.shape[0]
    CO, CI, R, S = w.shape
    out = np.zeros((N, CO, E, F), dtype=np.int64)
    for ci in range(CI):
        for r in range(R):
            for s in range(S):
                xs = _window(xp, r, s, stride, E, F)[:, ci]
                out += np.abs(xs[:, None] - w[None, :, ci, r, s, None, None]) * mask[None, :, ci, r, s, None, None]
    return out

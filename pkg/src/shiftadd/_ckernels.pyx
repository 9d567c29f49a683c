# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; reduction orders mirror ``_pykernels`` exactly.

Forward and input-gradient kernels accumulate whole output planes term by
term (the numpy fallback's order), with the contiguous column axis
innermost and no data-dependent branches.
"""
import numpy as np

from libc.math cimport fabs
from libc.stdlib cimport llabs

ctypedef long long i64


def conv_forward(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] w, int stride, int E, int F):
    cdef Py_ssize_t N = xp.shape[0], CO = w.shape[0], CI = w.shape[1], R = w.shape[2], S = w.shape[3]
    out = np.zeros((N, CO, E, F))
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t n, co, e, f, ci, r, s
    cdef double wv
    for n in range(N):
        for co in range(CO):
            for ci in range(CI):
                for r in range(R):
                    for s in range(S):
                        wv = w[co, ci, r, s]
                        for e in range(E):
                            for f in range(F):
                                o[n, co, e, f] += xp[n, ci, e * stride + r, f * stride + s] * wv
    return out


def l1_forward(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] w, const double[:, :, :, ::1] mask,
               int stride, int E, int F):
    cdef Py_ssize_t N = xp.shape[0], CO = w.shape[0], CI = w.shape[1], R = w.shape[2], S = w.shape[3]
    out = np.zeros((N, CO, E, F))
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t n, co, e, f, ci, r, s
    cdef double wv, m
    for n in range(N):
        for co in range(CO):
            for ci in range(CI):
                for r in range(R):
                    for s in range(S):
                        wv = w[co, ci, r, s]
                        m = mask[co, ci, r, s]
                        for e in range(E):
                            for f in range(F):
                                o[n, co, e, f] += fabs(xp[n, ci, e * stride + r, f * stride + s] - wv) * m
    return out


def conv_weight_grad(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] up, int stride, int R, int S):
    cdef Py_ssize_t N = up.shape[0], CO = up.shape[1], E = up.shape[2], F = up.shape[3], CI = xp.shape[1]
    g = np.zeros((CO, CI, R, S))
    cdef double[:, :, :, ::1] gv = g
    cdef Py_ssize_t n, co, e, f, ci, r, s
    cdef double acc
    for co in range(CO):
        for ci in range(CI):
            for r in range(R):
                for s in range(S):
                    acc = 0.0
                    for n in range(N):
                        for e in range(E):
                            for f in range(F):
                                acc += up[n, co, e, f] * xp[n, ci, e * stride + r, f * stride + s]
                    gv[co, ci, r, s] = acc
    return g


def l1_weight_grad(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] w, const double[:, :, :, ::1] up,
                   int stride):
    cdef Py_ssize_t N = up.shape[0], CO = up.shape[1], E = up.shape[2], F = up.shape[3]
    cdef Py_ssize_t CI = w.shape[1], R = w.shape[2], S = w.shape[3]
    g = np.zeros((CO, CI, R, S))
    cdef double[:, :, :, ::1] gv = g
    cdef Py_ssize_t n, co, e, f, ci, r, s
    cdef double acc, wv
    for co in range(CO):
        for ci in range(CI):
            for r in range(R):
                for s in range(S):
                    acc = 0.0
                    wv = w[co, ci, r, s]
                    for n in range(N):
                        for e in range(E):
                            for f in range(F):
                                acc += up[n, co, e, f] * (xp[n, ci, e * stride + r, f * stride + s] - wv)
                    gv[co, ci, r, s] = acc
    return g


def conv_input_grad(const double[:, :, :, ::1] up, const double[:, :, :, ::1] w, int stride, int Hp, int Wp):
    cdef Py_ssize_t N = up.shape[0], CO = up.shape[1], E = up.shape[2], F = up.shape[3]
    cdef Py_ssize_t CI = w.shape[1], R = w.shape[2], S = w.shape[3]
    gx = np.zeros((N, CI, Hp, Wp))
    cdef double[:, :, :, ::1] g = gx
    cdef Py_ssize_t n, co, e, f, ci, r, s
    cdef double wv
    for n in range(N):
        for r in range(R):
            for s in range(S):
                for co in range(CO):
                    for ci in range(CI):
                        wv = w[co, ci, r, s]
                        for e in range(E):
                            for f in range(F):
                                g[n, ci, e * stride + r, f * stride + s] += up[n, co, e, f] * wv
    return gx


def l1_input_grad(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] w, const double[:, :, :, ::1] mask,
                  const double[:, :, :, ::1] up, int stride):
    cdef Py_ssize_t N = up.shape[0], CO = up.shape[1], E = up.shape[2], F = up.shape[3]
    cdef Py_ssize_t CI = w.shape[1], R = w.shape[2], S = w.shape[3]
    gx = np.zeros((N, CI, xp.shape[2], xp.shape[3]))
    cdef double[:, :, :, ::1] g = gx
    cdef Py_ssize_t n, co, e, f, ci, r, s, h, x
    cdef double wv, m, d
    for n in range(N):
        for r in range(R):
            for s in range(S):
                for co in range(CO):
                    for ci in range(CI):
                        wv = w[co, ci, r, s]
                        m = mask[co, ci, r, s]
                        for e in range(E):
                            h = e * stride + r
                            for f in range(F):
                                x = f * stride + s
                                d = xp[n, ci, h, x] - wv
                                # clamp keeps NaN like np.clip
                                d = 1.0 if d > 1.0 else (-1.0 if d < -1.0 else d)
                                g[n, ci, h, x] += up[n, co, e, f] * d * m
    return gx


def shift_forward_int(const i64[:, :, :, ::1] xp, const i64[:, :, :, ::1] sign, const i64[:, :, :, ::1] shift,
                      int stride, int E, int F):
    cdef Py_ssize_t N = xp.shape[0], CO = sign.shape[0], CI = sign.shape[1], R = sign.shape[2], S = sign.shape[3]
    out = np.zeros((N, CO, E, F), dtype=np.int64)
    cdef i64[:, :, :, ::1] o = out
    cdef Py_ssize_t n, co, e, f, ci, r, s
    cdef i64 sg, sh, v
    for n in range(N):
        for co in range(CO):
            for ci in range(CI):
                for r in range(R):
                    for s in range(S):
                        sg = sign[co, ci, r, s]
                        if sg == 0:
                            continue
                        sh = shift[co, ci, r, s]
                        for e in range(E):
                            for f in range(F):
                                # shift through unsigned to stay defined for negative codes
                                v = <i64>((<unsigned long long>xp[n, ci, e * stride + r, f * stride + s]) << sh)
                                o[n, co, e, f] += v * sg
    return out


def l1_forward_int(const i64[:, :, :, ::1] xp, const i64[:, :, :, ::1] w, const i64[:, :, :, ::1] mask,
                   int stride, int E, int F):
    cdef Py_ssize_t N = xp.shape[0], CO = w.shape[0], CI = w.shape[1], R = w.shape[2], S = w.shape[3]
    out = np.zeros((N, CO, E, F), dtype=np.int64)
    cdef i64[:, :, :, ::1] o = out
    cdef Py_ssize_t n, co, e, f, ci, r, s
    cdef i64 wv, m
    for n in range(N):
        for co in range(CO):
            for ci in range(CI):
                for r in range(R):
                    for s in range(S):
                        wv = w[co, ci, r, s]
                        m = mask[co, ci, r, s]
                        for e in range(E):
                            for f in range(F):
                                o[n, co, e, f] += llabs(xp[n, ci, e * stride + r, f * stride + s] - wv) * m
    return out

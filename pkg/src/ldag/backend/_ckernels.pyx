# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same numeric contract as py_kernels: float32 data,
float64 accumulation; float64 data stays float64 throughout."""

import numpy as np

cimport cython
from libc.math cimport sqrt

NAME = "compiled"

ctypedef fused floating:
    float
    double


def matmul(a, b):
    if a.dtype == np.float32:
        return _matmul_f32(np.ascontiguousarray(a), np.ascontiguousarray(b))
    return _matmul_f64(np.ascontiguousarray(a), np.ascontiguousarray(b))


def _matmul_f32(float[:, ::1] a, float[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out_arr = np.empty((m, n), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += <double> a[i, p] * <double> b[p, j]
            out[i, j] = <float> acc
    return out_arr


def _matmul_f64(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out_arr


cdef void _axis_taps(Py_ssize_t n_in, Py_ssize_t n_out,
                     Py_ssize_t[::1] lo, Py_ssize_t[::1] hi, double[::1] w):
    cdef Py_ssize_t i
    cdef double pos
    for i in range(n_out):
        pos = (i + 0.5) * (<double> n_in / <double> n_out) - 0.5
        lo[i] = <Py_ssize_t> pos if pos >= 0 else -1
        w[i] = pos - lo[i]
        if lo[i] < 0:
            lo[i] = 0
            w[i] = 0.0
        elif lo[i] > n_in - 2:
            lo[i] = n_in - 2 if n_in > 1 else 0
            w[i] = 1.0 if n_in > 1 else 0.0
        hi[i] = lo[i] + 1 if lo[i] + 1 < n_in else n_in - 1


def bilinear_fwd(x, Py_ssize_t out_h, Py_ssize_t out_w):
    if x.dtype == np.float32:
        return _bilinear_fwd(np.ascontiguousarray(x), out_h, out_w, np.empty((x.shape[0], out_h, out_w), dtype=np.float32))
    return _bilinear_fwd(np.ascontiguousarray(x), out_h, out_w, np.empty((x.shape[0], out_h, out_w), dtype=np.float64))


def _bilinear_fwd(floating[:, :, ::1] x, Py_ssize_t out_h, Py_ssize_t out_w, out_arr):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef floating[:, :, ::1] out = out_arr
    y0_a = np.empty(out_h, dtype=np.intp); y1_a = np.empty(out_h, dtype=np.intp); wy_a = np.empty(out_h, dtype=np.float64)
    x0_a = np.empty(out_w, dtype=np.intp); x1_a = np.empty(out_w, dtype=np.intp); wx_a = np.empty(out_w, dtype=np.float64)
    cdef Py_ssize_t[::1] y0 = y0_a, y1 = y1_a, x0 = x0_a, x1 = x1_a
    cdef double[::1] wy = wy_a, wx = wx_a
    _axis_taps(h, out_h, y0, y1, wy)
    _axis_taps(w, out_w, x0, x1, wx)
    cdef Py_ssize_t m, i, j
    cdef double top, bot
    for m in range(c):
        for i in range(out_h):
            for j in range(out_w):
                top = (1.0 - wx[j]) * <double> x[m, y0[i], x0[j]] + wx[j] * <double> x[m, y0[i], x1[j]]
                bot = (1.0 - wx[j]) * <double> x[m, y1[i], x0[j]] + wx[j] * <double> x[m, y1[i], x1[j]]
                out[m, i, j] = <floating> ((1.0 - wy[i]) * top + wy[i] * bot)
    return out_arr


def bilinear_bwd(g, Py_ssize_t in_h, Py_ssize_t in_w):
    acc = np.zeros((g.shape[0], in_h, in_w), dtype=np.float64)
    _bilinear_bwd(np.ascontiguousarray(g, dtype=np.float64), in_h, in_w, acc)
    return acc.astype(g.dtype, copy=False)


def _bilinear_bwd(double[:, :, ::1] g, Py_ssize_t in_h, Py_ssize_t in_w, acc_arr):
    cdef Py_ssize_t c = g.shape[0], out_h = g.shape[1], out_w = g.shape[2]
    cdef double[:, :, ::1] acc = acc_arr
    y0_a = np.empty(out_h, dtype=np.intp); y1_a = np.empty(out_h, dtype=np.intp); wy_a = np.empty(out_h, dtype=np.float64)
    x0_a = np.empty(out_w, dtype=np.intp); x1_a = np.empty(out_w, dtype=np.intp); wx_a = np.empty(out_w, dtype=np.float64)
    cdef Py_ssize_t[::1] y0 = y0_a, y1 = y1_a, x0 = x0_a, x1 = x1_a
    cdef double[::1] wy = wy_a, wx = wx_a
    _axis_taps(in_h, out_h, y0, y1, wy)
    _axis_taps(in_w, out_w, x0, x1, wx)
    cdef Py_ssize_t m, i, j
    cdef double gv
    for m in range(c):
        for i in range(out_h):
            for j in range(out_w):
                gv = g[m, i, j]
                acc[m, y0[i], x0[j]] += (1.0 - wy[i]) * (1.0 - wx[j]) * gv
                acc[m, y0[i], x1[j]] += (1.0 - wy[i]) * wx[j] * gv
                acc[m, y1[i], x0[j]] += wy[i] * (1.0 - wx[j]) * gv
                acc[m, y1[i], x1[j]] += wy[i] * wx[j] * gv


def adam_step(p, g, m, v, t, lr, beta1, beta2, eps):
    out = np.empty_like(p)
    if p.dtype == np.float32:
        _adam_f32(p.ravel(), np.ascontiguousarray(g.ravel()), m.ravel(), v.ravel(),
                  out.ravel(), <long> t, lr, beta1, beta2, eps)
    else:
        _adam_f64(p.ravel(), np.ascontiguousarray(g.ravel()), m.ravel(), v.ravel(),
                  out.ravel(), <long> t, lr, beta1, beta2, eps)
    return out


def _adam_f32(float[::1] p, float[::1] g, float[::1] m, float[::1] v,
              float[::1] out, long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double g64, m64, v64, mhat, vhat
    cdef double c1 = 1.0 - beta1 ** t, c2 = 1.0 - beta2 ** t
    for i in range(n):
        g64 = g[i]
        m64 = beta1 * <double> m[i] + (1.0 - beta1) * g64
        v64 = beta2 * <double> v[i] + (1.0 - beta2) * g64 * g64
        m[i] = <float> m64
        v[i] = <float> v64
        mhat = m64 / c1
        vhat = v64 / c2
        out[i] = <float> (<double> p[i] - lr * mhat / (sqrt(vhat) + eps))


def _adam_f64(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
              double[::1] out, long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double g64, m64, v64, mhat, vhat
    cdef double c1 = 1.0 - beta1 ** t, c2 = 1.0 - beta2 ** t
    for i in range(n):
        g64 = g[i]
        m64 = beta1 * m[i] + (1.0 - beta1) * g64
        v64 = beta2 * v[i] + (1.0 - beta2) * g64 * g64
        m[i] = m64
        v[i] = v64
        mhat = m64 / c1
        vhat = v64 / c2
        out[i] = p[i] - lr * mhat / (sqrt(vhat) + eps)

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: row softmax, layer norm, fused Adam, LCS.

Semantics mirror ``gloss2text.kernels._np`` exactly; see that module for the
reference formulation. Accumulations run in double precision regardless of
the storage dtype.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, INFINITY

cnp.import_array()

BACKEND = "c"

ctypedef fused floating:
    float
    double


def softmax_rows(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double m, s, e
    if floating is float:
        out_np = np.empty((n, c), dtype=np.float32)
    else:
        out_np = np.empty((n, c), dtype=np.float64)
    cdef floating[:, ::1] out = out_np
    for i in range(n):
        m = -INFINITY
        for j in range(c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            e = exp(x[i, j] - m)
            out[i, j] = <floating> e
            s += e
        for j in range(c):
            out[i, j] = <floating> (out[i, j] / s)
    return out_np


def softmax_rows_backward(floating[:, ::1] y, floating[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], c = y.shape[1]
    cdef Py_ssize_t i, j
    cdef double dot
    if floating is float:
        gx_np = np.empty((n, c), dtype=np.float32)
    else:
        gx_np = np.empty((n, c), dtype=np.float64)
    cdef floating[:, ::1] gx = gx_np
    for i in range(n):
        dot = 0.0
        for j in range(c):
            dot += y[i, j] * gy[i, j]
        for j in range(c):
            gx[i, j] = <floating> (y[i, j] * (gy[i, j] - dot))
    return gx_np


def layer_norm_rows(floating[:, ::1] x, floating[::1] gain, floating[::1] bias,
                    double eps):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double mean, var, rs, xh
    if floating is float:
        out_np = np.empty((n, c), dtype=np.float32)
        xhat_np = np.empty((n, c), dtype=np.float32)
        rstd_np = np.empty(n, dtype=np.float32)
    else:
        out_np = np.empty((n, c), dtype=np.float64)
        xhat_np = np.empty((n, c), dtype=np.float64)
        rstd_np = np.empty(n, dtype=np.float64)
    cdef floating[:, ::1] out = out_np
    cdef floating[:, ::1] xhat = xhat_np
    cdef floating[::1] rstd = rstd_np
    for i in range(n):
        mean = 0.0
        for j in range(c):
            mean += x[i, j]
        mean /= c
        var = 0.0
        for j in range(c):
            var += (x[i, j] - mean) * (x[i, j] - mean)
        var /= c
        rs = 1.0 / sqrt(var + eps)
        rstd[i] = <floating> rs
        for j in range(c):
            xh = (x[i, j] - mean) * rs
            xhat[i, j] = <floating> xh
            out[i, j] = <floating> (xh * gain[j] + bias[j])
    return out_np, xhat_np, rstd_np


def layer_norm_rows_backward(floating[:, ::1] xhat, floating[::1] rstd,
                             floating[::1] gain, floating[:, ::1] gy):
    cdef Py_ssize_t n = xhat.shape[0], c = xhat.shape[1]
    cdef Py_ssize_t i, j
    cdef double g, gmean, gxhat
    if floating is float:
        gx_np = np.empty((n, c), dtype=np.float32)
        ggain_np = np.zeros(c, dtype=np.float32)
        gbias_np = np.zeros(c, dtype=np.float32)
    else:
        gx_np = np.empty((n, c), dtype=np.float64)
        ggain_np = np.zeros(c, dtype=np.float64)
        gbias_np = np.zeros(c, dtype=np.float64)
    cdef floating[:, ::1] gx = gx_np
    cdef floating[::1] ggain = ggain_np
    cdef floating[::1] gbias = gbias_np
    for i in range(n):
        gmean = 0.0
        gxhat = 0.0
        for j in range(c):
            g = gy[i, j] * gain[j]
            gmean += g
            gxhat += g * xhat[i, j]
        gmean /= c
        gxhat /= c
        for j in range(c):
            g = gy[i, j] * gain[j]
            gx[i, j] = <floating> (rstd[i] * (g - gmean - xhat[i, j] * gxhat))
            ggain[j] += <floating> (gy[i, j] * xhat[i, j])
            gbias[j] += gy[i, j]
    return gx_np, ggain_np, gbias_np


def adam_update(floating[::1] param, floating[::1] grad, floating[::1] m,
                floating[::1] v, double lr, double beta1, double beta2,
                double eps, double bc1, double bc2):
    cdef Py_ssize_t n = param.shape[0]
    cdef Py_ssize_t i
    cdef double mi, vi
    for i in range(n):
        mi = beta1 * m[i] + (1.0 - beta1) * grad[i]
        vi = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        m[i] = <floating> mi
        v[i] = <floating> vi
        param[i] = <floating> (param[i] - lr * (mi / bc1) / (sqrt(vi / bc2) + eps))


def lcs_len(const long long[::1] a, const long long[::1] b):
    cdef Py_ssize_t n = a.shape[0], k = b.shape[0]
    if n == 0 or k == 0:
        return 0
    cdef cnp.ndarray[cnp.int64_t, ndim=1] prev_np = np.zeros(k + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cur_np = np.zeros(k + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] prev = prev_np
    cdef cnp.int64_t[::1] cur = cur_np
    cdef Py_ssize_t i, j
    cdef cnp.int64_t pj, cj
    for i in range(n):
        for j in range(k):
            if a[i] == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                pj = prev[j + 1]
                cj = cur[j]
                cur[j + 1] = pj if pj >= cj else cj
        prev, cur = cur, prev
    return int(prev[k])

# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot inner-loop kernels.

Same contracts as `fallback`: row-wise softmax forward/backward, last-axis
layer norm forward/backward, and a fused in-place Adam update. All loops are
written per row so results match the NumPy versions to float rounding; both
float32 and float64 are supported through fused types.
"""

import numpy as np

cimport cython
from libc.math cimport exp as c_exp, sqrt as c_sqrt

ctypedef fused floating:
    float
    double


def softmax_lastaxis(floating[:, ::1] x):
    """Stable softmax over the last axis of a 2-D array."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef floating m, s
    if floating is float:
        y_arr = np.empty((n, d), dtype=np.float32)
    else:
        y_arr = np.empty((n, d), dtype=np.float64)
    cdef floating[:, ::1] y = y_arr
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0
        for j in range(d):
            y[i, j] = c_exp(x[i, j] - m)
            s += y[i, j]
        for j in range(d):
            y[i, j] /= s
    return y_arr


def softmax_grad(floating[:, ::1] y, floating[:, ::1] dy):
    """Input gradient of softmax given its output y and output adjoint dy."""
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1]
    cdef Py_ssize_t i, j
    cdef floating dot
    if floating is float:
        g_arr = np.empty((n, d), dtype=np.float32)
    else:
        g_arr = np.empty((n, d), dtype=np.float64)
    cdef floating[:, ::1] g = g_arr
    for i in range(n):
        dot = 0
        for j in range(d):
            dot += dy[i, j] * y[i, j]
        for j in range(d):
            g[i, j] = y[i, j] * (dy[i, j] - dot)
    return g_arr


def layernorm_lastaxis(floating[:, ::1] x, double eps):
    """Normalize each row to zero mean / unit variance; returns (x_hat, rstd)."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef floating mu, var, diff, r
    if floating is float:
        xh_arr = np.empty((n, d), dtype=np.float32)
        rs_arr = np.empty(n, dtype=np.float32)
    else:
        xh_arr = np.empty((n, d), dtype=np.float64)
        rs_arr = np.empty(n, dtype=np.float64)
    cdef floating[:, ::1] xh = xh_arr
    cdef floating[::1] rs = rs_arr
    for i in range(n):
        mu = 0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0
        for j in range(d):
            diff = x[i, j] - mu
            var += diff * diff
        var /= d
        r = <floating> (1.0 / c_sqrt(var + eps))
        rs[i] = r
        for j in range(d):
            xh[i, j] = (x[i, j] - mu) * r
    return xh_arr, rs_arr


def layernorm_grad(floating[:, ::1] x_hat, floating[::1] rstd, floating[:, ::1] dy):
    """Input gradient of the normalize-only layer norm."""
    cdef Py_ssize_t n = x_hat.shape[0], d = x_hat.shape[1]
    cdef Py_ssize_t i, j
    cdef floating mean_dy, mean_dyxh
    if floating is float:
        g_arr = np.empty((n, d), dtype=np.float32)
    else:
        g_arr = np.empty((n, d), dtype=np.float64)
    cdef floating[:, ::1] g = g_arr
    for i in range(n):
        mean_dy = 0
        mean_dyxh = 0
        for j in range(d):
            mean_dy += dy[i, j]
            mean_dyxh += dy[i, j] * x_hat[i, j]
        mean_dy /= d
        mean_dyxh /= d
        for j in range(d):
            g[i, j] = rstd[i] * (dy[i, j] - mean_dy - x_hat[i, j] * mean_dyxh)
    return g_arr


def adam_update(floating[::1] p_flat, floating[::1] g_flat,
                floating[::1] m_flat, floating[::1] v_flat,
                double lr, double beta1, double beta2, double eps,
                double bias1, double bias2):
    """Fused Adam step on flattened views; updates p, m, v in place."""
    cdef Py_ssize_t n = p_flat.shape[0]
    cdef Py_ssize_t i
    cdef double m_hat, v_hat
    for i in range(n):
        m_flat[i] = <floating> (beta1 * m_flat[i] + (1.0 - beta1) * g_flat[i])
        v_flat[i] = <floating> (beta2 * v_flat[i] + (1.0 - beta2) * g_flat[i] * g_flat[i])
        m_hat = m_flat[i] / bias1
        v_hat = v_flat[i] / bias2
        p_flat[i] = <floating> (p_flat[i] - lr * m_hat / (c_sqrt(v_hat) + eps))

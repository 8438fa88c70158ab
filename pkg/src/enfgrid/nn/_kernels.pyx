# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv/pool kernels. Same signatures and layout as _kernels_py."""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt

cnp.import_array()


def conv1d_forward(floating[:, :, ::1] xp, floating[:, :, ::1] w, floating[::1] b,
                   Py_ssize_t stride, Py_ssize_t t_out):
    cdef Py_ssize_t bsz = xp.shape[0], c_in = xp.shape[2]
    cdef Py_ssize_t k_size = w.shape[0], c_out = w.shape[2]
    cdef Py_ssize_t n, t, k, ci, co, pos
    cdef floating xv
    cdef floating *yrow
    cdef const floating *wrow
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((bsz, t_out, c_out), dtype=dtype)
    cdef floating[:, :, ::1] y = y_arr
    with nogil:
        for n in range(bsz):
            for t in range(t_out):
                yrow = &y[n, t, 0]
                for co in range(c_out):
                    yrow[co] = b[co]
                pos = t * stride
                for k in range(k_size):
                    for ci in range(c_in):
                        xv = xp[n, pos + k, ci]
                        wrow = &w[k, ci, 0]
                        for co in range(c_out):
                            yrow[co] += xv * wrow[co]
    return y_arr


def conv1d_backward(floating[:, :, ::1] xp, floating[:, :, ::1] w,
                    floating[:, :, ::1] dy, Py_ssize_t stride):
    cdef Py_ssize_t bsz = dy.shape[0], t_out = dy.shape[1], c_out = dy.shape[2]
    cdef Py_ssize_t k_size = w.shape[0], c_in = w.shape[1]
    cdef Py_ssize_t n, t, k, ci, co, pos
    cdef floating xv, acc
    cdef const floating *dyrow
    cdef const floating *wrow
    cdef floating *dwrow
    dtype = np.float32 if floating is float else np.float64
    dxp_arr = np.zeros((xp.shape[0], xp.shape[1], xp.shape[2]), dtype=dtype)
    dw_arr = np.zeros((k_size, c_in, c_out), dtype=dtype)
    db_arr = np.zeros(c_out, dtype=dtype)
    cdef floating[:, :, ::1] dxp = dxp_arr
    cdef floating[:, :, ::1] dw = dw_arr
    cdef floating[::1] db = db_arr
    with nogil:
        for n in range(bsz):
            for t in range(t_out):
                pos = t * stride
                for co in range(c_out):
                    db[co] += dy[n, t, co]
                dyrow = &dy[n, t, 0]
                for k in range(k_size):
                    for ci in range(c_in):
                        xv = xp[n, pos + k, ci]
                        wrow = &w[k, ci, 0]
                        dwrow = &dw[k, ci, 0]
                        acc = 0
                        for co in range(c_out):
                            dwrow[co] += xv * dyrow[co]
                            acc = acc + dyrow[co] * wrow[co]
                        dxp[n, pos + k, ci] += acc
    return dxp_arr, dw_arr, db_arr


def maxpool_forward(floating[:, :, ::1] x, Py_ssize_t pool, Py_ssize_t stride, Py_ssize_t t_out):
    cdef Py_ssize_t bsz = x.shape[0], t_in = x.shape[1], ch = x.shape[2]
    cdef Py_ssize_t n, t, c, j, start, stop, best_j
    cdef floating best, v
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((bsz, t_out, ch), dtype=dtype)
    idx_arr = np.empty((bsz, t_out, ch), dtype=np.intp)
    cdef floating[:, :, ::1] y = y_arr
    cdef Py_ssize_t[:, :, ::1] idx = idx_arr
    with nogil:
        for n in range(bsz):
            for t in range(t_out):
                start = t * stride
                stop = start + pool
                if stop > t_in:
                    stop = t_in
                for c in range(ch):
                    best_j = start
                    best = x[n, start, c]
                    for j in range(start + 1, stop):
                        v = x[n, j, c]
                        if v > best:
                            best = v
                            best_j = j
                    y[n, t, c] = best
                    idx[n, t, c] = best_j
    return y_arr, idx_arr


def maxpool_backward(floating[:, :, ::1] dy, Py_ssize_t[:, :, ::1] idx, Py_ssize_t t_in,
                     Py_ssize_t pool, Py_ssize_t stride):
    cdef Py_ssize_t bsz = dy.shape[0], t_out = dy.shape[1], ch = dy.shape[2]
    cdef Py_ssize_t n, t, c
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.zeros((bsz, t_in, ch), dtype=dtype)
    cdef floating[:, :, ::1] dx = dx_arr
    with nogil:
        for n in range(bsz):
            for t in range(t_out):
                for c in range(ch):
                    dx[n, idx[n, t, c], c] += dy[n, t, c]
    return dx_arr


def bn_train_forward(floating[:, ::1] x, floating[::1] gamma, floating[::1] beta, double eps):
    cdef Py_ssize_t m = x.shape[0], ch = x.shape[1], i, c
    cdef double d
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((m, ch), dtype=dtype)
    xhat_arr = np.empty((m, ch), dtype=dtype)
    mean_arr = np.zeros(ch, dtype=np.float64)
    var_arr = np.zeros(ch, dtype=np.float64)
    inv_arr = np.empty(ch, dtype=dtype)
    cdef floating[:, ::1] y = y_arr
    cdef floating[:, ::1] xhat = xhat_arr
    cdef double[::1] mean = mean_arr
    cdef double[::1] var = var_arr
    cdef floating[::1] inv = inv_arr
    with nogil:
        for i in range(m):
            for c in range(ch):
                mean[c] += x[i, c]
        for c in range(ch):
            mean[c] /= m
        for i in range(m):
            for c in range(ch):
                d = x[i, c] - mean[c]
                var[c] += d * d
        for c in range(ch):
            var[c] /= m
            inv[c] = <floating>(1.0 / sqrt(var[c] + eps))
        for i in range(m):
            for c in range(ch):
                xhat[i, c] = <floating>((x[i, c] - mean[c]) * inv[c])
                y[i, c] = xhat[i, c] * gamma[c] + beta[c]
    return y_arr, xhat_arr, mean_arr.astype(dtype), var_arr.astype(dtype), inv_arr


def bn_backward(floating[:, ::1] dy, floating[:, ::1] xhat, floating[::1] gamma, floating[::1] inv):
    cdef Py_ssize_t m = dy.shape[0], ch = dy.shape[1], i, c
    dtype = np.float32 if floating is float else np.float64
    sb = np.zeros(ch, dtype=np.float64)
    sg = np.zeros(ch, dtype=np.float64)
    dx_arr = np.empty((m, ch), dtype=dtype)
    cdef double[::1] dbeta = sb
    cdef double[::1] dgamma = sg
    cdef floating[:, ::1] dx = dx_arr
    cdef double a, b
    with nogil:
        for i in range(m):
            for c in range(ch):
                dbeta[c] += dy[i, c]
                dgamma[c] += dy[i, c] * xhat[i, c]
        for i in range(m):
            for c in range(ch):
                a = dbeta[c] * gamma[c] / m
                b = dgamma[c] * gamma[c] / m
                dx[i, c] = <floating>((dy[i, c] * gamma[c] - a - xhat[i, c] * b) * inv[c])
    return dx_arr, sg.astype(dtype), sb.astype(dtype)


def leaky_relu_forward(floating[::1] x, double slope):
    cdef Py_ssize_t n = x.shape[0], i
    cdef floating s = <floating>slope
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty(n, dtype=dtype)
    cdef floating[::1] y = y_arr
    with nogil:
        for i in range(n):
            y[i] = x[i] if x[i] >= 0 else x[i] * s
    return y_arr


def leaky_relu_backward(floating[::1] dy, floating[::1] y, double slope):
    cdef Py_ssize_t n = dy.shape[0], i
    cdef floating s = <floating>slope
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.empty(n, dtype=dtype)
    cdef floating[::1] dx = dx_arr
    with nogil:
        for i in range(n):
            dx[i] = dy[i] if y[i] >= 0 else dy[i] * s
    return dx_arr

"""Pure-numpy conv/pool kernels (fallback when the compiled module is absent).

All arrays are channels-last: activations ``(batch, time, channels)``,
conv weights ``(kernel, c_in, c_out)``. Inputs to the conv kernels are
already padded.
"""
import numpy as np


def conv1d_forward(xp, w, b, stride, t_out):
    bsz, _, c_in = xp.shape
    k_size, _, c_out = w.shape
    y = np.empty((bsz * t_out, c_out), dtype=xp.dtype)
    y[...] = b
    span = stride * (t_out - 1) + 1
    for k in range(k_size):
        xs = np.ascontiguousarray(xp[:, k:k + span:stride, :]).reshape(-1, c_in)
        y += xs @ w[k]
    return y.reshape(bsz, t_out, c_out)


def conv1d_backward(xp, w, dy, stride):
    bsz, t_out, c_out = dy.shape
    k_size, c_in, _ = w.shape
    dy2 = np.ascontiguousarray(dy).reshape(-1, c_out)
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    span = stride * (t_out - 1) + 1
    for k in range(k_size):
        xs = np.ascontiguousarray(xp[:, k:k + span:stride, :]).reshape(-1, c_in)
        dw[k] = xs.T @ dy2
        dxp[:, k:k + span:stride, :] += (dy2 @ w[k].T).reshape(bsz, t_out, c_in)
    db = dy2.sum(axis=0)
    return dxp, dw, db


def maxpool_forward(x, pool, stride, t_out):
    bsz, t_in, ch = x.shape
    need = (t_out - 1) * stride + pool
    if need > t_in:
        pad = np.full((bsz, need - t_in, ch), -np.inf, dtype=x.dtype)
        xp = np.concatenate([x, pad], axis=1)
    else:
        xp = x
    win = np.lib.stride_tricks.sliding_window_view(xp, pool, axis=1)[:, ::stride][:, :t_out]
    local = win.argmax(axis=-1)
    idx = local + (np.arange(t_out) * stride)[None, :, None]
    y = np.take_along_axis(xp, idx, axis=1)
    return y, idx.astype(np.intp)


def maxpool_backward(dy, idx, t_in, pool, stride):
    bsz, t_out, ch = dy.shape
    dx = np.zeros((bsz, t_in, ch), dtype=dy.dtype)
    if pool <= stride:
        np.put_along_axis(dx, idx, dy, axis=1)
    else:
        b_idx = np.arange(bsz)[:, None, None]
        c_idx = np.arange(ch)[None, None, :]
        np.add.at(dx, (b_idx, idx, c_idx), dy)
    return dx


def _colsum(x2):
    # BLAS gemv beats ufunc.reduce over axis 0 when the channel axis is short
    return np.ones(x2.shape[0], dtype=x2.dtype) @ x2


def bn_train_forward(x2, gamma, beta, eps):
    """Batch norm over rows of a (rows, channels) array.

    Returns ``(y, xhat, mean, var, inv_std)``.
    """
    m = x2.shape[0]
    mean = _colsum(x2) / m
    centered = x2 - mean
    var = _colsum(centered * centered) / m
    inv = (1.0 / np.sqrt(var + eps)).astype(x2.dtype)
    xhat = centered * inv
    return xhat * gamma + beta, xhat, mean, var, inv


def bn_backward(dy2, xhat, gamma, inv):
    m = dy2.shape[0]
    dbeta = _colsum(dy2)
    dgamma = _colsum(dy2 * xhat)
    s1 = dbeta * gamma
    s2 = dgamma * gamma
    dx = (dy2 * gamma - (s1 + xhat * s2) / m) * inv
    return dx, dgamma, dbeta


def leaky_relu_forward(x, slope):
    return np.where(x >= 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(dy, y, slope):
    return np.where(y >= 0, dy, dy * dy.dtype.type(slope))

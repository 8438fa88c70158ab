"""Layers with explicit forward/backward passes.

Activations are channels-last ``(batch, time, channels)``. Every layer caches
what its backward pass needs during a training-mode forward call and drops the
cache once backward has consumed it.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from . import kernels
from ..errors import DegenerateBatch, GraphNotRecorded, ShapeMismatch


def he_uniform(rng, shape, fan_in, dtype):
    lim = math.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def orthogonal(rng, rows, cols, dtype):
    # factor in the target precision: a float32 QR of a 1024-square matrix is
    # about twice as fast and the result is stored in float32 anyway
    a = rng.standard_normal((max(rows, cols), min(rows, cols))).astype(dtype)
    q, r = scipy.linalg.qr(a, mode="economic", overwrite_a=True, check_finite=False)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(q[:rows, :cols], dtype=dtype)


class Layer:
    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def out_shape(self, in_shape):
        return in_shape

    def _take_cache(self):
        if self._cache is None:
            raise GraphNotRecorded(f"{self.name}: backward called without a recorded training forward pass")
        cache, self._cache = self._cache, None
        return cache

    def children(self):
        return []

    def named_tensors(self, prefix=""):
        """Yield (qualified_name, owner_dict, key) for params then buffers, recursively."""
        for k in self.params:
            yield f"{prefix}{self.name}.{k}", self.params, k
        for k in self.buffers:
            yield f"{prefix}{self.name}.{k}", self.buffers, k
        for child in self.children():
            yield from child.named_tensors(f"{prefix}{self.name}.")

    def astype(self, dtype):
        for _, owner, key in self.named_tensors():
            owner[key] = owner[key].astype(dtype)
        self._cache = None
        return self


class Conv1D(Layer):
    def __init__(self, c_in, c_out, kernel, stride=1, padding="same", name="conv", rng=None,
                 dtype=np.float32):
        super().__init__()
        if kernel < 1 or stride < 1 or c_out < 1 or c_in < 1:
            raise ValueError(f"bad Conv1D geometry kernel={kernel} stride={stride} c_in={c_in} c_out={c_out}")
        if padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
        self.name = name
        self.c_in, self.c_out, self.kernel, self.stride, self.padding = c_in, c_out, kernel, stride, padding
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = he_uniform(rng, (kernel, c_in, c_out), kernel * c_in, dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)

    def _geometry(self, t_in):
        k, s = self.kernel, self.stride
        if self.padding == "same":
            t_out = -(-t_in // s)
            total = max((t_out - 1) * s + k - t_in, 0)
            return t_out, total // 2, total - total // 2
        if t_in < k:
            raise ShapeMismatch(f"{self.name}: input length {t_in} shorter than kernel {k}")
        return (t_in - k) // s + 1, 0, 0

    def out_shape(self, in_shape):
        t_out, _, _ = self._geometry(in_shape[-2])
        return (*in_shape[:-2], t_out, self.c_out)

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise ShapeMismatch(f"{self.name}: expected (B, T, {self.c_in}), got {x.shape}")
        t_out, left, right = self._geometry(x.shape[1])
        w = self.params["w"]
        xp = x.astype(w.dtype, copy=False)
        if left or right:
            xp = np.pad(xp, ((0, 0), (left, right), (0, 0)))
        xp = np.ascontiguousarray(xp)
        y = kernels.backend.conv1d_forward(xp, w, self.params["b"], self.stride, t_out)
        if training:
            self._cache = (xp, left, x.shape[1])
        return y

    def backward(self, dy):
        xp, left, t_in = self._take_cache()
        dxp, dw, db = kernels.backend.conv1d_backward(xp, self.params["w"], np.ascontiguousarray(dy),
                                                       self.stride)
        self.grads["w"] = dw
        self.grads["b"] = db
        return dxp[:, left:left + t_in, :]


class BatchNorm(Layer):
    """Per-channel batch normalization over every axis except the last."""

    def __init__(self, channels, momentum=0.9, eps=1e-5, name="bn", dtype=np.float32):
        super().__init__()
        self.name = name
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, training=False):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if x.shape[-1] != gamma.shape[0]:
            raise ShapeMismatch(f"{self.name}: expected {gamma.shape[0]} channels, got {x.shape[-1]}")
        if not training:
            inv = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            scale = (gamma * inv).astype(x.dtype)
            shift = (beta - self.buffers["running_mean"] * gamma * inv).astype(x.dtype)
            return x * scale + shift
        if x.shape[0] < 2:
            raise DegenerateBatch(f"{self.name}: batch size {x.shape[0]} < 2 in training mode")
        x2 = np.ascontiguousarray(x).reshape(-1, x.shape[-1])
        y, xhat, mean, var, inv = kernels.backend.bn_train_forward(x2, gamma, beta, self.eps)
        m = self.momentum
        self.buffers["running_mean"] = (m * self.buffers["running_mean"] + (1 - m) * mean).astype(gamma.dtype)
        self.buffers["running_var"] = (m * self.buffers["running_var"] + (1 - m) * var).astype(gamma.dtype)
        self._cache = (xhat, inv, x.shape)
        return y.reshape(x.shape)

    def backward(self, dy):
        xhat, inv, shape = self._take_cache()
        dy2 = np.ascontiguousarray(dy, dtype=xhat.dtype).reshape(xhat.shape)
        dx, dgamma, dbeta = kernels.backend.bn_backward(dy2, xhat, self.params["gamma"], inv)
        self.grads["gamma"] = dgamma
        self.grads["beta"] = dbeta
        return dx.reshape(shape)


class LeakyReLU(Layer):
    def __init__(self, slope=0.01, name="lrelu"):
        super().__init__()
        if not 0 < slope < 1:
            raise ValueError(f"LeakyReLU slope must lie in (0, 1), got {slope}")
        self.name = name
        self.slope = slope

    def forward(self, x, training=False):
        flat = np.ascontiguousarray(x).reshape(-1)
        y = kernels.backend.leaky_relu_forward(flat, self.slope).reshape(x.shape)
        if training:
            self._cache = y
        return y

    def backward(self, dy):
        y = self._take_cache()
        flat = np.ascontiguousarray(dy, dtype=y.dtype).reshape(-1)
        return kernels.backend.leaky_relu_backward(flat, y.reshape(-1), self.slope).reshape(y.shape)


class MaxPool1D(Layer):
    def __init__(self, pool, stride=None, ceil_mode=True, name="pool"):
        super().__init__()
        if pool < 1:
            raise ValueError(f"pool size must be >= 1, got {pool}")
        self.name = name
        self.pool = pool
        self.stride = stride or pool
        self.ceil_mode = ceil_mode

    def _t_out(self, t_in):
        if self.ceil_mode:
            return -(-t_in // self.stride)
        if t_in < self.pool:
            raise ShapeMismatch(f"{self.name}: input length {t_in} shorter than pool {self.pool}")
        return (t_in - self.pool) // self.stride + 1

    def out_shape(self, in_shape):
        return (*in_shape[:-2], self._t_out(in_shape[-2]), in_shape[-1])

    def forward(self, x, training=False):
        if x.ndim != 3:
            raise ShapeMismatch(f"{self.name}: expected (B, T, C), got {x.shape}")
        t_in = x.shape[1]
        y, idx = kernels.backend.maxpool_forward(np.ascontiguousarray(x), self.pool, self.stride,
                                                 self._t_out(t_in))
        if training:
            self._cache = (idx, t_in)
        return y

    def backward(self, dy):
        idx, t_in = self._take_cache()
        return kernels.backend.maxpool_backward(np.ascontiguousarray(dy), idx, t_in, self.pool, self.stride)


class Dense(Layer):
    def __init__(self, n_in, n_out, name="dense", rng=None, dtype=np.float32):
        super().__init__()
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = he_uniform(rng, (n_in, n_out), n_in, dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def out_shape(self, in_shape):
        return (*in_shape[:-1], self.params["w"].shape[1])

    def forward(self, x, training=False):
        w = self.params["w"]
        if x.shape[-1] != w.shape[0]:
            raise ShapeMismatch(f"{self.name}: expected {w.shape[0]} inputs, got {x.shape[-1]}")
        if training:
            self._cache = x
        return x @ w + self.params["b"]

    def backward(self, dy):
        x = self._take_cache()
        self.grads["w"] = x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["w"].T


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


class GRU(Layer):
    """GRU returning only the final hidden state.

    Gate layout in the stacked weights is (update, reset, candidate):
    ``h_t = z * h_{t-1} + (1 - z) * tanh(x W_n + (r * h_{t-1}) U_n + b_n)``.
    """

    def __init__(self, n_in, units, name="gru", rng=None, dtype=np.float32):
        super().__init__()
        self.name = name
        self.units = units
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = glorot_uniform(rng, (n_in, 3 * units), n_in, 3 * units, dtype)
        self.params["u"] = np.concatenate([orthogonal(rng, units, units, dtype) for _ in range(3)], axis=1)
        self.params["b"] = np.zeros(3 * units, dtype=dtype)

    def out_shape(self, in_shape):
        return (*in_shape[:-2], self.units)

    def forward(self, x, training=False, h0=None):
        w, u, b = self.params["w"], self.params["u"], self.params["b"]
        if x.ndim != 3 or x.shape[2] != w.shape[0]:
            raise ShapeMismatch(f"{self.name}: expected (B, T, {w.shape[0]}), got {x.shape}")
        bsz, steps, _ = x.shape
        n_units = self.units
        h = np.zeros((bsz, n_units), dtype=w.dtype) if h0 is None else np.asarray(h0, dtype=w.dtype)
        if h.shape != (bsz, n_units):
            raise ShapeMismatch(f"{self.name}: initial state must be ({bsz}, {n_units}), got {h.shape}")
        xw = (x.reshape(-1, x.shape[2]) @ w + b).reshape(bsz, steps, 3 * n_units)
        u_zr, u_n = u[:, :2 * n_units], u[:, 2 * n_units:]
        if training:
            hs = np.empty((steps + 1, bsz, n_units), dtype=w.dtype)
            gates = np.empty((steps, bsz, 3 * n_units), dtype=w.dtype)
            hs[0] = h
        for t in range(steps):
            a = xw[:, t, :]
            zr = _sigmoid(a[:, :2 * n_units] + h @ u_zr)
            z, r = zr[:, :n_units], zr[:, n_units:]
            n = np.tanh(a[:, 2 * n_units:] + (r * h) @ u_n)
            h = z * h + (1 - z) * n
            if training:
                gates[t, :, :2 * n_units] = zr
                gates[t, :, 2 * n_units:] = n
                hs[t + 1] = h
        if training:
            self._cache = (x, hs, gates)
        return h

    def backward(self, dh):
        x, hs, gates = self._take_cache()
        w, u = self.params["w"], self.params["u"]
        n_units = self.units
        steps, bsz, _ = gates.shape
        u_z, u_r, u_n = u[:, :n_units], u[:, n_units:2 * n_units], u[:, 2 * n_units:]
        da = np.empty((bsz, steps, 3 * n_units), dtype=w.dtype)
        du = np.zeros_like(u)
        dh = dh.astype(w.dtype, copy=True)
        for t in range(steps - 1, -1, -1):
            h_prev = hs[t]
            z = gates[t, :, :n_units]
            r = gates[t, :, n_units:2 * n_units]
            n = gates[t, :, 2 * n_units:]
            da_n = dh * (1 - z) * (1 - n * n)
            da_z = dh * (h_prev - n) * z * (1 - z)
            d_rh = da_n @ u_n.T
            da_r = d_rh * h_prev * r * (1 - r)
            du[:, :n_units] += h_prev.T @ da_z
            du[:, n_units:2 * n_units] += h_prev.T @ da_r
            du[:, 2 * n_units:] += (r * h_prev).T @ da_n
            dh = dh * z + d_rh * r + da_z @ u_z.T + da_r @ u_r.T
            da[:, t, :n_units] = da_z
            da[:, t, n_units:2 * n_units] = da_r
            da[:, t, 2 * n_units:] = da_n
        da2 = da.reshape(-1, 3 * n_units)
        self.grads["w"] = x.reshape(-1, x.shape[2]).T @ da2
        self.grads["u"] = du
        self.grads["b"] = da2.sum(axis=0)
        self.dh0 = dh
        return (da2 @ w.T).reshape(x.shape)


class ResidualBlock(Layer):
    """``n_convs`` x [Conv(k, 1) + BN (+ LeakyReLU between)] plus a skip path,
    then LeakyReLU and max pooling.

    A 1x1 convolution projects the skip path when channel counts differ.
    """

    def __init__(self, c_in, filters, n_convs=2, kernel=3, pool=9, slope=0.01, name="res",
                 rng=None, dtype=np.float32):
        super().__init__()
        if n_convs < 1:
            raise ValueError("a residual block needs at least one convolution")
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        self.main: list[Layer] = []
        ch = c_in
        for i in range(n_convs):
            self.main.append(Conv1D(ch, filters, kernel, 1, "same", name=f"conv{i + 1}", rng=rng, dtype=dtype))
            self.main.append(BatchNorm(filters, name=f"bn{i + 1}", dtype=dtype))
            if i < n_convs - 1:
                self.main.append(LeakyReLU(slope, name=f"act{i + 1}"))
            ch = filters
        self.proj = Conv1D(c_in, filters, 1, 1, "same", name="proj", rng=rng, dtype=dtype) if c_in != filters else None
        self.act = LeakyReLU(slope, name="act_out")
        self.pool = MaxPool1D(pool, pool, ceil_mode=True, name="pool")

    def children(self):
        kids = list(self.main)
        if self.proj is not None:
            kids.append(self.proj)
        return kids + [self.act, self.pool]

    def out_shape(self, in_shape):
        shape = in_shape
        for layer in self.main:
            shape = layer.out_shape(shape)
        return self.pool.out_shape(shape)

    def forward(self, x, training=False):
        y = x
        for layer in self.main:
            y = layer.forward(y, training)
        skip = self.proj.forward(x, training) if self.proj is not None else x
        y = self.act.forward(y + skip, training)
        return self.pool.forward(y, training)

    def backward(self, dy):
        d = self.act.backward(self.pool.backward(dy))
        dskip = self.proj.backward(d) if self.proj is not None else d
        for layer in reversed(self.main):
            d = layer.backward(d)
        return d + dskip


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, labels):
    """Mean of ``-log p[label]`` with probabilities clamped at 1e-12."""
    probs = np.atleast_2d(probs)
    labels = np.atleast_1d(labels)
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p, 1e-12))))


def softmax_cross_entropy(logits, labels):
    """Loss and gradient w.r.t. the logits for a mean-reduced batch."""
    probs = softmax(logits)
    loss = cross_entropy(probs, labels)
    grad = probs.copy()
    grad[np.arange(len(labels)), labels] -= 1
    return loss, grad / len(labels)

"""Central finite-difference oracle for layer gradients (64-bit)."""
import numpy as np

from enfgrid.model import RawNet, RawNetConfig
from enfgrid.nn.layers import (GRU, BatchNorm, Conv1D, Dense, LeakyReLU, MaxPool1D, ResidualBlock,
                               softmax_cross_entropy)

H = 1e-3
# the composite net has many pooling/activation switch points; a smaller step avoids crossing them
NET_H = 1e-5
F64 = np.float64


def _param_slots(layer, prefix=""):
    yield from ((f"{prefix}{layer.name}.{k}", layer, k) for k in layer.params)
    for child in layer.children():
        yield from _param_slots(child, f"{prefix}{layer.name}.")


def rel_err(a, n):
    # floor: structurally zero gradients (a conv bias feeding batch norm) compare absolutely
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-4)
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(loss, arr, h=H):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        lp = loss()
        arr[idx] = orig - h
        lm = loss()
        arr[idx] = orig
        g[idx] = (lp - lm) / (2 * h)
    return g


def check_layer(layer, x, rng, h=H):
    """Relative error of every parameter gradient and of the input gradient.

    The scalar objective is ``sum(r * layer(x))`` with a fixed random ``r``.
    """
    y = layer.forward(x, training=True)
    r = rng.standard_normal(y.shape)
    dx = layer.backward(r)
    analytic = {name: lyr.grads[k].copy() for name, lyr, k in _param_slots(layer)}

    def loss():
        return float(np.sum(r * layer.forward(x, training=True)))

    errors = {}
    for name, lyr, k in _param_slots(layer):
        errors[name] = rel_err(analytic[name], numeric_grad(loss, lyr.params[k], h))
    errors["input"] = rel_err(dx, numeric_grad(loss, x, h))
    return errors


def _away_from_zero(rng, shape, gap=0.02):
    # keep LeakyReLU inputs clear of the kink by more than h
    z = rng.standard_normal(shape)
    return np.sign(z) * (gap + np.abs(z))


def _distinct(rng, shape, spacing=0.01):
    # max pooling needs a unique maximum that a +-h nudge cannot overtake
    n = int(np.prod(shape))
    return (rng.permutation(n) * spacing - n * spacing / 2).reshape(shape).astype(F64)


def layer_cases():
    """name -> builder(rng) returning (layer, input)."""
    return {
        "conv1d_same_stride3_cin1": lambda rng: (
            Conv1D(1, 3, 3, 3, "same", rng=rng, dtype=F64), rng.standard_normal((2, 14, 1))),
        "conv1d_same_stride2": lambda rng: (
            Conv1D(2, 3, 3, 2, "same", rng=rng, dtype=F64), rng.standard_normal((2, 11, 2))),
        "conv1d_valid": lambda rng: (
            Conv1D(3, 2, 4, 1, "valid", rng=rng, dtype=F64), rng.standard_normal((2, 9, 3))),
        "batchnorm": lambda rng: (
            _bn(rng), rng.standard_normal((3, 5, 4)) * 2 + 1),
        "leaky_relu": lambda rng: (LeakyReLU(0.01), _away_from_zero(rng, (2, 6, 3))),
        "maxpool_ceil": lambda rng: (MaxPool1D(3, 3, ceil_mode=True), _distinct(rng, (2, 10, 2))),
        "maxpool_overlap": lambda rng: (MaxPool1D(3, 2, ceil_mode=True), _distinct(rng, (2, 9, 2))),
        "dense": lambda rng: (Dense(5, 4, rng=rng, dtype=F64), rng.standard_normal((3, 5))),
        "gru": lambda rng: (_gru(rng), rng.standard_normal((2, 5, 3))),
        "residual_block_proj": lambda rng: _smooth_block(rng, 2, 3),
        "residual_block_identity": lambda rng: _smooth_block(rng, 3, 3),
    }


KINK_MARGIN = 0.02


def _kink_distance(block, x):
    """Smallest distance of any internal LeakyReLU input from 0 or pooling top-2 gap."""
    y = x
    dists = []
    for layer in block.main:
        if isinstance(layer, LeakyReLU):
            dists.append(np.abs(y).min())
        y = layer.forward(y, training=True)
    pre = y + (block.proj.forward(x, training=True) if block.proj is not None else x)
    dists.append(np.abs(pre).min())
    act = block.act.forward(pre)
    b, t, c = act.shape
    p = block.pool.pool
    win = np.sort(act[:, :t - t % p].reshape(b, -1, p, c), axis=2)
    dists.append((win[:, :, -1] - win[:, :, -2]).min())
    return min(dists)


def _smooth_block(rng, c_in, filters):
    # redraw until the block is smooth well beyond +-h around the sample, so the
    # difference quotient never straddles a LeakyReLU or max-pool switch
    while True:
        block = ResidualBlock(c_in, filters, 2, 3, 3, rng=rng, dtype=F64)
        x = rng.standard_normal((2, 6, c_in))
        if _kink_distance(block, x) > KINK_MARGIN:
            return block, x


def _bn(rng):
    bn = BatchNorm(4, dtype=F64)
    bn.params["gamma"] = rng.uniform(0.5, 2.0, 4)
    bn.params["beta"] = rng.standard_normal(4)
    return bn


def _gru(rng):
    g = GRU(3, 4, rng=rng, dtype=F64)
    g.params["b"] = rng.standard_normal(g.params["b"].shape) * 0.5
    return g


def check_softmax_ce(rng, h=H):
    logits = rng.standard_normal((4, 5)) * 3
    labels = rng.integers(0, 5, 4)
    _, g = softmax_cross_entropy(logits, labels)
    num = numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits, h)
    return rel_err(g, num)


TINY_NET = RawNetConfig(input_len=120, front_filters=2, block2_filters=3, conv_layers=3, conv_kernel=3,
                        front_stride=3, pool=3, gru_units=3, dense_units=4, num_classes=3, strict=False)


def check_network(rng, h=NET_H):
    """Whole-model check: softmax cross-entropy of a tiny RawNet, every parameter."""
    net = RawNet(TINY_NET, seed=int(rng.integers(2**31)), dtype=F64)
    x = rng.uniform(-1, 1, (3, TINY_NET.input_len))
    labels = rng.integers(0, TINY_NET.num_classes, 3)
    logits = net.forward(x, training=True)
    _, d = softmax_cross_entropy(logits, labels)
    net.backward(d)
    analytic = {k: v.copy() for k, v in net.gradients().items()}

    def loss():
        return softmax_cross_entropy(net.forward(x, training=True), labels)[0]

    return {name: rel_err(analytic[name], numeric_grad(loss, p, h)) for name, p in net.parameters().items()}

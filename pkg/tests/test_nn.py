import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradcheck as gc
from enfgrid.errors import CheckpointError, DegenerateBatch, GraphNotRecorded, ShapeMismatch
from enfgrid.nn import kernels
from enfgrid.nn.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from enfgrid.nn.layers import (GRU, BatchNorm, Conv1D, Dense, LeakyReLU, MaxPool1D, cross_entropy, softmax,
                               softmax_cross_entropy)
from enfgrid.nn.optim import Adam

SEEDS = range(20)
BACKENDS = ["python"] + (["native"] if kernels.native is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = kernels.BACKEND
    kernels.use(request.param)
    yield request.param
    kernels.use(prev)


# ---------------------------------------------------------------------------
# finite-difference gradients
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("case", sorted(gc.layer_cases()))
def test_layer_gradients(case, backend):
    make = gc.layer_cases()[case]
    worst = 0.0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        layer, x = make(rng)
        errs = gc.check_layer(layer, x, rng)
        worst = max(worst, max(errs.values()))
        assert max(errs.values()) < 1e-4, (seed, errs)
    assert worst < 1e-4


def test_softmax_cross_entropy_gradient():
    for seed in SEEDS:
        assert gc.check_softmax_ce(np.random.default_rng(seed)) < 1e-4


def test_network_gradients(backend):
    for seed in SEEDS:
        errs = gc.check_network(np.random.default_rng(seed))
        assert max(errs.values()) < 1e-4, (seed, errs)


def test_unused_parameter_gets_zero_gradient():
    rng = np.random.default_rng(0)
    d = Dense(4, 3, rng=rng, dtype=np.float64)
    d.forward(rng.standard_normal((5, 4)), training=True)
    dy = np.zeros((5, 3))
    dy[:, 0] = rng.standard_normal(5)  # objective ignores outputs 1 and 2
    d.backward(dy)
    assert np.all(d.grads["w"][:, 1:] == 0) and np.all(d.grads["b"][1:] == 0)


def test_gradients_scale_with_loss():
    rng = np.random.default_rng(1)
    conv = Conv1D(2, 3, 3, 2, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 9, 2))
    r = rng.standard_normal(conv.out_shape(x.shape))
    conv.forward(x, training=True)
    dx1 = conv.backward(r)
    g1 = {k: v.copy() for k, v in conv.grads.items()}
    conv.forward(x, training=True)
    dx2 = conv.backward(2 * r)
    np.testing.assert_allclose(dx2, 2 * dx1, rtol=1e-14)
    for k in g1:
        np.testing.assert_allclose(conv.grads[k], 2 * g1[k], rtol=1e-14)


def test_backward_without_forward_raises():
    with pytest.raises(GraphNotRecorded):
        Dense(2, 2).backward(np.ones((1, 2)))
    layer = LeakyReLU()
    layer.forward(np.ones((1, 2, 1)), training=False)
    with pytest.raises(GraphNotRecorded):
        layer.backward(np.ones((1, 2, 1)))


# ---------------------------------------------------------------------------
# backend parity
# ---------------------------------------------------------------------------

needs_native = pytest.mark.skipif(kernels.native is None, reason="compiled kernels not built")


@needs_native
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 40), st.integers(1, 4), st.integers(1, 5), st.integers(1, 5),
       st.integers(1, 3), st.sampled_from([np.float32, np.float64]), st.integers(0, 2**31))
def test_conv_kernels_match(batch, t, c_in, c_out, k, stride, dtype, seed):
    rng = np.random.default_rng(seed)
    xp = rng.standard_normal((batch, t + k, c_in)).astype(dtype)
    w = rng.standard_normal((k, c_in, c_out)).astype(dtype)
    b = rng.standard_normal(c_out).astype(dtype)
    t_out = (t + k - k) // stride + 1
    tol = dict(rtol=1e-5, atol=1e-5) if dtype == np.float32 else dict(rtol=1e-12, atol=1e-12)
    ya = kernels.python.conv1d_forward(xp, w, b, stride, t_out)
    yb = kernels.native.conv1d_forward(xp, w, b, stride, t_out)
    np.testing.assert_allclose(ya, yb, **tol)
    dy = rng.standard_normal(ya.shape).astype(dtype)
    for u, v in zip(kernels.python.conv1d_backward(xp, w, dy, stride),
                    kernels.native.conv1d_backward(xp, w, dy, stride)):
        np.testing.assert_allclose(u, v, **tol)


@needs_native
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 50), st.integers(1, 4), st.integers(1, 9), st.integers(1, 9),
       st.integers(0, 2**31))
def test_pool_kernels_match(batch, t, c, pool, stride, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, t, c))
    t_out = -(-t // stride)
    ya, ia = kernels.python.maxpool_forward(x, pool, stride, t_out)
    yb, ib = kernels.native.maxpool_forward(x, pool, stride, t_out)
    np.testing.assert_array_equal(ya, yb)
    np.testing.assert_array_equal(ia, ib)
    dy = rng.standard_normal(ya.shape)
    np.testing.assert_allclose(kernels.python.maxpool_backward(dy, ia, t, pool, stride),
                               kernels.native.maxpool_backward(dy, ib, t, pool, stride), rtol=1e-14)


@needs_native
@settings(max_examples=30, deadline=None)
@given(st.integers(2, 60), st.integers(1, 5), st.integers(0, 2**31))
def test_bn_and_activation_kernels_match(rows, c, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((rows, c)) * 3 + 1
    gamma, beta = rng.uniform(0.5, 2, c), rng.standard_normal(c)
    fa = kernels.python.bn_train_forward(x, gamma, beta, 1e-5)
    fb = kernels.native.bn_train_forward(x, gamma, beta, 1e-5)
    for u, v in zip(fa, fb):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-12)
    dy = rng.standard_normal(x.shape)
    for u, v in zip(kernels.python.bn_backward(dy, fa[1], gamma, fa[4]),
                    kernels.native.bn_backward(dy, fb[1], gamma, fb[4])):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-12)
    flat = x.reshape(-1)
    y = kernels.python.leaky_relu_forward(flat, 0.01)
    np.testing.assert_array_equal(y, kernels.native.leaky_relu_forward(flat, 0.01))
    g = rng.standard_normal(flat.shape)
    np.testing.assert_array_equal(kernels.python.leaky_relu_backward(g, y, 0.01),
                                  kernels.native.leaky_relu_backward(g, y, 0.01))


def test_backend_switch_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.use("gpu")


# ---------------------------------------------------------------------------
# layer examples
# ---------------------------------------------------------------------------

def test_conv_examples(backend):
    conv = Conv1D(1, 1, 3, 1, "valid")
    conv.params["w"][:] = 1
    y = conv.forward(np.arange(1, 6, dtype=np.float32).reshape(1, 5, 1))
    assert y.reshape(-1).tolist() == [6, 9, 12]

    ident = Conv1D(2, 2, 1, 1, "same")
    ident.params["w"][:] = np.eye(2)[None]
    x = np.random.default_rng(0).standard_normal((2, 7, 2)).astype(np.float32)
    np.testing.assert_array_equal(ident.forward(x), x)

    front = Conv1D(1, 4, 3, 3, "same")
    assert front.out_shape((1, 15999, 1)) == (1, 5333, 4)
    assert front.forward(np.zeros((1, 15999, 1), np.float32)).shape == (1, 5333, 4)
    with pytest.raises(ShapeMismatch):
        front.forward(np.zeros((1, 10, 2), np.float32))


def test_pool_examples(backend):
    pool = MaxPool1D(3, 3)
    assert pool.forward(np.array([3.0, 1.0, 2.0]).reshape(1, 3, 1)).reshape(-1).tolist() == [3.0]
    p9 = MaxPool1D(9, 9, ceil_mode=True)
    assert p9.out_shape((1, 5333, 2)) == (1, 593, 2)
    assert p9.out_shape((1, 593, 2)) == (1, 66, 2)
    # the partial last window only sees real samples
    y = p9.forward(-np.ones((1, 10, 1)) * np.arange(10)[None, :, None])
    assert y.reshape(-1).tolist() == [0.0, -9.0]


def test_leaky_relu_examples(backend):
    act = LeakyReLU(0.01)
    y = act.forward(np.array([-1.0, 0.0, 2.0]).reshape(1, 3, 1))
    np.testing.assert_allclose(y.reshape(-1), [-0.01, 0.0, 2.0])
    pos = np.random.default_rng(2).uniform(0.1, 5, (2, 4, 3))
    np.testing.assert_array_equal(act.forward(pos), pos)


def test_batchnorm_examples(backend):
    rng = np.random.default_rng(3)
    z = rng.standard_normal((500, 2))
    z = (z - z.mean(0)) / z.std(0)
    x = (5 + 2 * z).reshape(50, 10, 2)
    bn = BatchNorm(2, dtype=np.float64)
    y = bn.forward(x, training=True).reshape(-1, 2)
    np.testing.assert_allclose(y.mean(0), 0, atol=1e-5)
    np.testing.assert_allclose(y.std(0), 1, atol=1e-5)

    bn.params["gamma"][:] = 2
    bn.params["beta"][:] = 3
    y = bn.forward(z.reshape(50, 10, 2), training=True).reshape(-1, 2)
    np.testing.assert_allclose(y.mean(0), 3, atol=1e-5)
    np.testing.assert_allclose(y.std(0), 2, atol=1e-4)

    fresh = BatchNorm(2, dtype=np.float64)
    fresh.params["gamma"][:] = [2, 0.5]
    fresh.params["beta"][:] = [1, -1]
    np.testing.assert_allclose(fresh.forward(x), x * [2, 0.5] / np.sqrt(1 + 1e-5) + [1, -1])

    with pytest.raises(DegenerateBatch):
        fresh.forward(x[:1], training=True)


def test_gru_zero_weights_gives_zero_state():
    gru = GRU(3, 4)
    for k in gru.params:
        gru.params[k][:] = 0
    h = gru.forward(np.random.default_rng(0).standard_normal((2, 6, 3)).astype(np.float32))
    assert h.shape == (2, 4) and np.all(h == 0)


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros(3)), [1 / 3] * 3)
    p = softmax(np.array([1000.0, 0.0, 0.0]))
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p, [1, 0, 0], atol=1e-300)
    assert cross_entropy(np.array([1.0, 0.0, 0.0]), 0) == 0.0
    loss, grad = softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 2]))
    assert loss == pytest.approx(np.log(3))
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_first_step_closed_form():
    p = {"p": np.array([0.0])}
    opt = Adam(1e-3, 0.9, 0.999, 1e-8)
    opt.step(p, {"p": np.array([1.0])})
    # bias-corrected moments are exactly g and g^2 on the first step
    assert p["p"][0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert p["p"][0] == pytest.approx(-0.001, rel=1e-6)


def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([0.5, -2.0])}
    opt = Adam()
    opt.step(p, {"w": np.zeros(2)})
    opt.step(p, {"w": np.zeros(2)})
    assert p["w"].tolist() == [0.5, -2.0]
    assert opt.step_count == 2


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(4)
    p = {"w": rng.standard_normal(3)}
    ref = p["w"].copy()
    m = v = np.zeros(3)
    opt = Adam(0.01, 0.9, 0.99)
    for t in range(1, 6):
        g = rng.standard_normal(3)
        opt.step(p, {"w": g})
        m = 0.9 * m + 0.1 * g
        v = 0.99 * v + 0.01 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.99 ** t)) + 1e-8)
    np.testing.assert_allclose(p["w"], ref, rtol=1e-12)


def test_adam_rejects_shape_mismatch_and_bad_hyperparameters():
    with pytest.raises(ShapeMismatch):
        Adam().step({"w": np.zeros(2)}, {"w": np.zeros(3)})
    with pytest.raises(ValueError):
        Adam(lr=0)
    with pytest.raises(ValueError):
        Adam(beta1=1.0)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    tensors = {"a.w": rng.standard_normal((3, 2)).astype(np.float32), "b": rng.standard_normal(4),
               "scalar": np.array(2.5)}
    p = tmp_path / "x.ckpt"
    save_checkpoint(p, tensors, "k=1\n")
    assert p.read_bytes()[:4] == MAGIC
    back, text = load_checkpoint(p)
    assert text == "k=1\n"
    assert set(back) == set(tensors)
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype
        np.testing.assert_array_equal(back[k], v)
    save_checkpoint(tmp_path / "y.ckpt", back, text)
    assert (tmp_path / "y.ckpt").read_bytes() == p.read_bytes()


def test_checkpoint_corruption(tmp_path):
    p = tmp_path / "x.ckpt"
    save_checkpoint(p, {"w": np.ones(10, np.float32)}, "k=1\n")
    blob = p.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(blob[:-8])
    (tmp_path / "magic.ckpt").write_bytes(b"XXXX" + blob[4:])
    tampered = bytearray(blob)
    tampered[blob.index(b"k=1")] = ord("j")
    (tmp_path / "hash.ckpt").write_bytes(bytes(tampered))
    for name in ("trunc", "magic", "hash"):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / f"{name}.ckpt")
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "bad.ckpt", {"c": np.ones(2, np.complex64)}, "")


def test_checkpoint_header_layout(tmp_path):
    p = tmp_path / "x.ckpt"
    save_checkpoint(p, {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}, "")
    blob = p.read_bytes()
    assert struct.unpack_from("<I", blob, 36)[0] == 2  # config tensor + one parameter

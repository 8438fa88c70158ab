"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 32]

Prints one line per kernel plus a full toy training step, with the median
wall time of each backend and the speed-up. Both backends must give the
same numbers; the script checks that before timing.
"""
import argparse
import statistics
import sys
import time

import numpy as np

from enfgrid.model import build_rawnet, toy_config
from enfgrid.nn import kernels
from enfgrid.nn.layers import softmax_cross_entropy
from enfgrid.nn.optim import Adam


def median_time(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def kernel_cases(batch, rng):
    f32 = np.float32
    # shapes of the toy model's front layers on a 15999-sample frame
    xp1 = rng.standard_normal((batch, 16001, 1)).astype(f32)
    w1 = rng.standard_normal((3, 1, 8)).astype(f32)
    b1 = np.zeros(8, f32)
    x8 = rng.standard_normal((batch, 5333, 8)).astype(f32)
    x2 = x8.reshape(-1, 8)
    gamma, beta = np.ones(8, f32), np.zeros(8, f32)
    dy_pool = rng.standard_normal((batch, 593, 8)).astype(f32)
    _, idx = kernels.python.maxpool_forward(x8, 9, 9, 593)
    dy1 = rng.standard_normal((batch, 5333, 8)).astype(f32)
    flat = x8.reshape(-1)
    return {
        "conv1d_forward (k3, 1->8, stride 3)": lambda k: k.conv1d_forward(xp1, w1, b1, 3, 5333),
        "conv1d_backward (k3, 1->8, stride 3)": lambda k: k.conv1d_backward(xp1, w1, dy1, 3),
        "maxpool_forward (9/9)": lambda k: k.maxpool_forward(x8, 9, 9, 593),
        "maxpool_backward (9/9)": lambda k: k.maxpool_backward(dy_pool, idx, 5333, 9, 9),
        "bn_train_forward (8 ch)": lambda k: k.bn_train_forward(x2, gamma, beta, 1e-5),
        "leaky_relu_forward": lambda k: k.leaky_relu_forward(flat, 0.01),
    }


def check_parity(cases):
    for name, fn in cases.items():
        a, b = fn(kernels.python), fn(kernels.native)
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        for u, v in zip(a, b):
            # float32 reductions over ~1e5 terms differ in summation order, so
            # compare against the tensor's scale rather than element by element
            u, v = np.asarray(u, np.float64), np.asarray(v, np.float64)
            if np.abs(u - v).max(initial=0) > 1e-4 * np.abs(v).max(initial=0) + 1e-6:
                raise SystemExit(f"backend mismatch in {name}")


def train_step_fn(batch, rng):
    cfg = toy_config("audio60")
    frames = rng.uniform(-1, 1, (batch, cfg.input_len)).astype(np.float32)
    labels = rng.integers(0, cfg.num_classes, batch)

    def step():
        net = build_rawnet(cfg, seed=0)
        opt = Adam(cfg.lr, cfg.beta1, cfg.beta2)
        logits = net.forward(frames, training=True)
        _, d = softmax_cross_entropy(logits.astype(np.float64), labels)
        net.backward(d.astype(np.float32))
        opt.step(net.parameters(), net.gradients())
    return step


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args(argv)
    if kernels.native is None:
        print("compiled kernels not built; only the numpy backend is available", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    cases = kernel_cases(args.batch, rng)
    check_parity(cases)
    step = train_step_fn(args.batch, rng)

    print(f"{'case':<40}{'numpy ms':>10}{'native ms':>11}{'speed-up':>10}")
    rows = list(cases.items()) + [("toy train step (batch %d)" % args.batch, lambda k: step())]
    for name, fn in rows:
        res = {}
        for backend in ("python", "native"):
            kernels.use(backend)
            impl = getattr(kernels, backend)
            res[backend] = median_time(lambda: fn(impl), args.repeat)
        print(f"{name:<40}{res['python'] * 1e3:>10.2f}{res['native'] * 1e3:>11.2f}"
              f"{res['python'] / res['native']:>9.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

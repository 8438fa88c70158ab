"""Kernel backend selection.

``native`` uses the compiled loops for pooling, batch norm, LeakyReLU and
for convolutions whose per-output reduction depth (kernel * c_in) is tiny;
wider convolutions go to the BLAS path, which beats direct loops there. ``python`` is numpy only.
The compiled module is picked when it imports; ``ENFGRID_KERNELS=python``
forces the fallback.
"""
import os
from types import SimpleNamespace

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

DIRECT_CONV_MAX_DEPTH = 4

python = _kernels_py
native = None

if _compiled is not None:
    def _conv_fwd(xp, w, b, stride, t_out):
        if w.shape[0] * w.shape[1] <= DIRECT_CONV_MAX_DEPTH:
            return _compiled.conv1d_forward(xp, w, b, stride, t_out)
        return _kernels_py.conv1d_forward(xp, w, b, stride, t_out)

    def _conv_bwd(xp, w, dy, stride):
        if w.shape[0] * w.shape[1] <= DIRECT_CONV_MAX_DEPTH:
            return _compiled.conv1d_backward(xp, w, dy, stride)
        return _kernels_py.conv1d_backward(xp, w, dy, stride)

    native = SimpleNamespace(
        conv1d_forward=_conv_fwd,
        conv1d_backward=_conv_bwd,
        maxpool_forward=_compiled.maxpool_forward,
        maxpool_backward=_compiled.maxpool_backward,
        bn_train_forward=_compiled.bn_train_forward,
        bn_backward=_compiled.bn_backward,
        leaky_relu_forward=_compiled.leaky_relu_forward,
        leaky_relu_backward=_compiled.leaky_relu_backward,
    )

if native is not None and os.environ.get("ENFGRID_KERNELS", "").lower() != "python":
    backend = native
    BACKEND = "native"
else:
    backend = python
    BACKEND = "python"


def compiled():
    """The raw compiled module, or None."""
    return _compiled


def use(name: str) -> None:
    """Switch the active backend at runtime ("native" or "python")."""
    global backend, BACKEND
    if name == "native":
        if native is None:
            raise RuntimeError("compiled kernels are not available")
        backend, BACKEND = native, "native"
    elif name == "python":
        backend, BACKEND = python, "python"
    else:
        raise ValueError(f"unknown kernel backend {name!r}")

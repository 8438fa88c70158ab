"""Minimal numpy network engine: the layer set of the shallow RawNet, Adam, checkpoints."""
from .checkpoint import load_checkpoint, save_checkpoint
from . import kernels
from .layers import (GRU, BatchNorm, Conv1D, Dense, LeakyReLU, Layer, MaxPool1D, ResidualBlock,
                     cross_entropy, softmax, softmax_cross_entropy)
from .optim import Adam

__all__ = [
    "Adam", "BatchNorm", "Conv1D", "Dense", "GRU", "Layer", "LeakyReLU", "MaxPool1D",
    "ResidualBlock", "cross_entropy", "load_checkpoint", "save_checkpoint", "softmax",
    "softmax_cross_entropy", "kernels",
]

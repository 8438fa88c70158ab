"""Shallow RawNet assembly, per-group training, frame inference and random search."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, EmptyClass, GraphNotRecorded, LabelOutOfRange, ShapeMismatch
from .nn import checkpoint as ckpt
from .nn.layers import GRU, BatchNorm, Conv1D, Dense, LeakyReLU, ResidualBlock, softmax, softmax_cross_entropy
from .nn.optim import Adam
from .spectral import Nominal, bandpass
from .waveform import FRAME_LEN, WORKING_RATE, RecType, normalize

log = logging.getLogger(__name__)

# temporal lengths after the front conv and each residual block for a 15999-sample input
SHAPE_CHAIN = (5333, 593, 66)

GROUP_CLASSES = {
    Nominal.HZ60: ("A", "C", "I"),
    Nominal.HZ50: ("B", "D", "E", "F", "G", "H"),
}

# (learning rate, beta1, beta2) per data group
OPTIMIZER_TABLE = {
    "audio50": (6.5e-4, 0.96, 0.998),
    "audio60": (7e-4, 0.97, 0.998),
    "power50": (1.1e-3, 0.98, 0.992),
    "power60": (9.7e-4, 0.98, 0.993),
}


@dataclass(frozen=True)
class DataGroupId:
    rec_type: RecType
    nominal: Nominal

    def __post_init__(self):
        object.__setattr__(self, "rec_type", RecType.parse(self.rec_type))
        object.__setattr__(self, "nominal", Nominal.parse(self.nominal))
        if self.rec_type == RecType.UNKNOWN:
            raise ValueError("a data group needs a known recording type")

    @classmethod
    def parse(cls, name: str) -> "DataGroupId":
        name = name.strip().lower()
        for rt in (RecType.AUDIO, RecType.POWER):
            if name.startswith(rt.value):
                return cls(rt, Nominal.parse(name[len(rt.value):]))
        raise ValueError(f"unknown data group {name!r}")

    @property
    def name(self) -> str:
        return f"{self.rec_type.value}{int(self.nominal)}"

    @property
    def classes(self) -> tuple[str, ...]:
        return GROUP_CLASSES[self.nominal]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def __str__(self):
        return self.name


ALL_GROUPS = tuple(DataGroupId(rt, nom) for rt in (RecType.AUDIO, RecType.POWER)
                   for nom in (Nominal.HZ50, Nominal.HZ60))


@dataclass
class RawNetConfig:
    input_len: int = FRAME_LEN
    front_filters: int = 128
    block2_filters: int = 256
    conv_layers: int = 5  # front conv + main-path convs of both residual blocks
    conv_kernel: int = 3
    front_stride: int = 3
    pool: int = 9
    gru_units: int = 1024
    dense_units: int = 128
    num_classes: int = 6
    leaky_slope: float = 0.01
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    strict: bool = True

    @property
    def block_convs(self) -> tuple[int, int]:
        rest = self.conv_layers - 1
        return (rest + 1) // 2, rest // 2

    def validate(self) -> None:
        checks = [
            (self.input_len >= 1, "input_len must be positive"),
            (min(self.front_filters, self.block2_filters, self.gru_units, self.dense_units) >= 1,
             "layer widths must be positive"),
            (3 <= self.conv_layers <= 5, "conv_layers must lie in [3, 5]"),
            (self.conv_kernel >= 1 and self.front_stride >= 1 and self.pool >= 1, "kernel/stride/pool must be >= 1"),
            (self.num_classes >= 2, "num_classes must be >= 2"),
            (0 < self.leaky_slope < 1, "leaky_slope must lie in (0, 1)"),
            (self.lr > 0, "lr must be positive"),
            (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "betas must lie in [0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigInvalid(msg)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str) -> "RawNetConfig":
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in kinds:
                raise ConfigInvalid(f"unknown config key {key!r}")
            kind = kinds[key]
            if kind == "bool":
                values[key] = val.lower() in ("1", "true", "yes")
            elif kind == "int":
                values[key] = int(val)
            else:
                values[key] = float(val)
        return cls(**values)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "RawNetConfig":
        return cls.from_text(Path(path).read_text())


def default_config(group: DataGroupId | str, **overrides) -> RawNetConfig:
    group = DataGroupId.parse(group) if isinstance(group, str) else group
    lr, b1, b2 = OPTIMIZER_TABLE[group.name]
    cfg = RawNetConfig(num_classes=group.num_classes, lr=lr, beta1=b1, beta2=b2)
    return dataclasses.replace(cfg, **overrides)


def toy_config(group: DataGroupId | str, **overrides) -> RawNetConfig:
    """Reduced widths (8/16 filters, 32 GRU units) for desk-scale runs."""
    base = dict(front_filters=8, block2_filters=16, gru_units=32, dense_units=128)
    base.update(overrides)
    return default_config(group, **base)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

class RawNet:
    """Front strided conv, two residual blocks, GRU, dense, softmax head."""

    def __init__(self, config: RawNetConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        n1, n2 = config.block_convs
        self.front = Conv1D(1, c.front_filters, c.conv_kernel, c.front_stride, "same", name="front_conv",
                            rng=rng, dtype=dtype)
        self.front_bn = BatchNorm(c.front_filters, name="front_bn", dtype=dtype)
        self.front_act = LeakyReLU(c.leaky_slope, name="front_act")
        self.block1 = ResidualBlock(c.front_filters, c.front_filters, n1, c.conv_kernel, c.pool, c.leaky_slope,
                                    name="block1", rng=rng, dtype=dtype)
        self.block2 = ResidualBlock(c.front_filters, c.block2_filters, n2, c.conv_kernel, c.pool,
                                    c.leaky_slope, name="block2", rng=rng, dtype=dtype)
        self.gru = GRU(c.block2_filters, c.gru_units, name="gru", rng=rng, dtype=dtype)
        self.dense = Dense(c.gru_units, c.dense_units, name="dense", rng=rng, dtype=dtype)
        self.dense_act = LeakyReLU(c.leaky_slope, name="dense_act")
        self.head = Dense(c.dense_units, c.num_classes, name="head", rng=rng, dtype=dtype)
        self.layers = [self.front, self.front_bn, self.front_act, self.block1, self.block2,
                       self.gru, self.dense, self.dense_act, self.head]
        self._recorded = False

    # -- tensors ------------------------------------------------------------
    def _entries(self):
        for layer in self.layers:
            yield from layer.named_tensors()

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for lyr, prefix in _walk(layer):
                for k, v in lyr.params.items():
                    out[f"{prefix}{lyr.name}.{k}"] = v
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for lyr, prefix in _walk(layer):
                for k, v in lyr.grads.items():
                    out[f"{prefix}{lyr.name}.{k}"] = v
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: owner[key].copy() for name, owner, key in self._entries()}

    def load_state_dict(self, state: dict) -> None:
        entries = list(self._entries())
        missing = [n for n, _, _ in entries if n not in state]
        if missing:
            raise ShapeMismatch(f"state is missing tensors: {missing[:5]}")
        for name, owner, key in entries:
            val = np.asarray(state[name])
            if val.shape != owner[key].shape:
                raise ShapeMismatch(f"{name}: stored {val.shape} vs model {owner[key].shape}")
            owner[key] = val.astype(owner[key].dtype).copy()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self

    # -- passes -------------------------------------------------------------
    def shape_trace(self, batch: int = 1) -> list[tuple]:
        shape = (batch, self.config.input_len, 1)
        trace = []
        shape = self.front.out_shape(shape)
        trace.append(shape[1:])
        for block in (self.block1, self.block2):
            shape = block.out_shape(shape)
            trace.append(shape[1:])
        for layer in (self.gru, self.dense, self.head):
            shape = layer.out_shape(shape)
            trace.append(shape[1:])
        return trace

    def forward(self, frames, training=False, trace=None):
        x = np.asarray(frames)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3 or x.shape[1] != self.config.input_len or x.shape[2] != 1:
            raise ShapeMismatch(f"expected frames of length {self.config.input_len}, got shape {np.shape(frames)}")
        x = x.astype(self.front.params["w"].dtype, copy=False)
        for layer in self.layers:
            x = layer.forward(x, training)
            if trace is not None and layer in (self.front_act, self.block1, self.block2, self.gru,
                                               self.dense, self.head):
                trace.append(x.shape[1:])
        self._recorded = training
        return x

    def backward(self, dlogits):
        if not self._recorded:
            raise GraphNotRecorded("backward requires a preceding training-mode forward pass")
        self._recorded = False
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def predict_proba(self, frames, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(frames)
        if x.ndim == 1:
            x = x[None, :]
        outs = [softmax(self.forward(x[i:i + batch_size]).astype(np.float64))
                for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, self.config.num_classes))


def _walk(layer, prefix=""):
    yield layer, prefix
    for child in layer.children():
        yield from _walk(child, f"{prefix}{layer.name}.")


def build_rawnet(config: RawNetConfig, seed: int = 0, dtype=np.float32) -> RawNet:
    """Assemble the network; strict configs must reproduce the reference shape chain."""
    config.validate()
    net = RawNet(config, seed=seed, dtype=dtype)
    if config.strict:
        trace = net.shape_trace()
        times = tuple(s[0] for s in trace[:3])
        if times != SHAPE_CHAIN:
            raise ConfigInvalid(f"temporal shape chain {times} differs from the reference {SHAPE_CHAIN}")
        expected = [(SHAPE_CHAIN[0], config.front_filters), (SHAPE_CHAIN[1], config.front_filters),
                    (SHAPE_CHAIN[2], config.block2_filters), (config.gru_units,), (config.dense_units,),
                    (config.num_classes,)]
        if trace != expected:
            raise ConfigInvalid(f"shape chain {trace} differs from {expected}")
    return net


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_model(net: RawNet, path) -> None:
    ckpt.save_checkpoint(path, net.state_dict(), net.config.to_text())


def load_model(path) -> RawNet:
    tensors, text = ckpt.load_checkpoint(path)
    config = RawNetConfig.from_text(text)
    net = RawNet(config, seed=0)
    net.load_state_dict(tensors)
    return net


def predict_frame(model, frame) -> np.ndarray:
    """Class probabilities for one normalized frame. ``model`` is a RawNet or a checkpoint path."""
    net = model if isinstance(model, RawNet) else load_model(model)
    x = np.asarray(frame, dtype=np.float64).reshape(-1)
    if x.shape[0] != net.config.input_len:
        raise ShapeMismatch(f"frame length {x.shape[0]} != model input {net.config.input_len}")
    if np.max(np.abs(x)) > 1.0 + 1e-6:
        raise ValueError("frame values must lie in [-1, 1]")
    return net.predict_proba(x[None, :])[0]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    group: str
    seed: int
    epochs_run: int = 0
    best_epoch: int = 0
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint: str | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for i in range(self.epochs_run):
                w.writerow([i + 1, f"{self.train_loss[i]:.6f}", f"{self.train_acc[i]:.6f}",
                            _fmt(self.val_loss, i), _fmt(self.val_acc, i)])


def _fmt(seq, i):
    return f"{seq[i]:.6f}" if i < len(seq) else ""


def _check_labels(labels, n):
    labels = np.asarray(labels, dtype=np.int64)
    bad = labels[(labels < 0) | (labels >= n)]
    if bad.size:
        raise LabelOutOfRange(f"label {int(bad[0])} outside [0, {n})")
    counts = np.bincount(labels, minlength=n)
    if (counts == 0).any():
        raise EmptyClass(f"classes without samples: {np.flatnonzero(counts == 0).tolist()}")
    return labels


def holdout_split(labels, sources=None, fraction=0.15, rng=None):
    """Indices for a stratified train/validation split.

    With ``sources`` whole recordings are held out, so overlapping frames of
    one recording never straddle the split. Classes with a single recording
    (or a single frame) stay entirely in training.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    labels = np.asarray(labels)
    val = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if sources is not None:
            src = np.asarray(sources)[idx]
            uniq = np.unique(src)
            k = int(round(fraction * len(uniq)))
            if len(uniq) < 2 or k == 0:
                continue
            chosen = set(rng.choice(uniq, size=k, replace=False).tolist())
            val.extend(i for i, s in zip(idx, src) if s in chosen)
        else:
            k = int(round(fraction * len(idx)))
            if len(idx) < 2 or k == 0:
                continue
            val.extend(rng.choice(idx, size=k, replace=False).tolist())
    val = np.array(sorted(val), dtype=np.int64)
    train = np.setdiff1d(np.arange(len(labels)), val)
    return train, val


def evaluate_frames(net: RawNet, frames, labels, batch_size: int = 64):
    probs = net.predict_proba(frames, batch_size)
    labels = np.asarray(labels)
    p = probs[np.arange(len(labels)), labels]
    loss = float(-np.mean(np.log(np.maximum(p, 1e-12))))
    acc = float(np.mean(probs.argmax(axis=1) == labels))
    return loss, acc


# weight of the uniform-target loss on hum-free noise frames; without it noise
# is labelled confidently as the most erratic grid and never reaches N
OUTLIER_WEIGHT = 0.5


def outlier_frames(count: int, frame_len: int, nominal, filtered: bool, rng) -> np.ndarray:
    """Hum-free noise frames prepared like real ones: optional bandpass, then peak normalization."""
    pad = 2000  # keep the filter's edge transient outside the frame
    out = np.empty((count, frame_len), dtype=np.float32)
    for i in range(count):
        n = frame_len + 2 * pad
        x = rng.standard_normal(n) if i % 2 else rng.uniform(-1.0, 1.0, n)
        if filtered:
            x = bandpass(x, WORKING_RATE, nominal)
        out[i] = normalize(x[pad:pad + frame_len])
    return out


def train(group, frames, labels, config: RawNetConfig | None = None, seed: int = 0, epochs: int = 100,
          batch_size: int = 32, validation=None, sources=None, val_fraction: float = 0.15,
          patience: int | None = 10, checkpoint=None, outlier_weight: float = OUTLIER_WEIGHT,
          filtered: bool = True):
    """Fit one group model with Adam on cross-entropy.

    ``validation`` is an optional ``(frames, labels)`` pair; without it a
    stratified hold-out is carved from the training data (by recording when
    ``sources`` is given). Early stopping watches validation accuracy, with
    validation loss breaking ties, and restores the best weights.
    With ``outlier_weight > 0`` every batch also carries fresh hum-free noise
    frames (a quarter of the batch, bandpassed when ``filtered``) whose target
    is the uniform distribution, weighted by ``outlier_weight``. Reported
    losses and accuracies cover the labelled frames only.
    Returns ``(report, model)``.
    """
    group = DataGroupId.parse(group) if isinstance(group, str) else group
    if outlier_weight < 0:
        raise ValueError(f"outlier_weight must be non-negative, got {outlier_weight}")
    config = config or default_config(group)
    if config.num_classes != group.num_classes:
        raise ConfigInvalid(f"{group}: config has {config.num_classes} classes, group needs {group.num_classes}")
    frames = np.asarray(frames, dtype=np.float32)
    labels = _check_labels(labels, config.num_classes)
    if frames.ndim != 2 or frames.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"frames {frames.shape} do not match {labels.shape[0]} labels")

    root = np.random.SeedSequence(seed)
    init_seq, split_seq, shuffle_seq, outlier_seq = root.spawn(4)
    net = build_rawnet(config, seed=int(init_seq.generate_state(1)[0]))

    if validation is None and val_fraction > 0:
        tr_idx, va_idx = holdout_split(labels, sources, val_fraction, np.random.default_rng(split_seq))
        if va_idx.size:
            validation = (frames[va_idx], labels[va_idx])
            frames, labels = frames[tr_idx], labels[tr_idx]
    if validation is not None:
        val_x = np.asarray(validation[0], dtype=np.float32)
        val_y = _check_labels_loose(validation[1], config.num_classes)

    opt = Adam(config.lr, config.beta1, config.beta2)
    rng = np.random.default_rng(shuffle_seq)
    outlier_rng = np.random.default_rng(outlier_seq)
    report = TrainReport(group=group.name, seed=seed)
    best_key, best_state, stale = None, None, 0
    start = time.perf_counter()
    n = frames.shape[0]
    params = net.parameters()

    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        tot_loss, correct, seen = 0.0, 0, 0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            if idx.size < 2:  # batch norm needs two samples
                continue
            batch = frames[idx]
            if outlier_weight > 0:
                k = max(2, idx.size // 4)
                noise = outlier_frames(k, config.input_len, group.nominal, filtered, outlier_rng)
                batch = np.concatenate([batch, noise])
            out = net.forward(batch, training=True).astype(np.float64)
            logits = out[:idx.size]
            loss, dlogits = softmax_cross_entropy(logits, labels[idx])
            if outlier_weight > 0:
                # cross-entropy against the uniform target: gradient p - 1/n per noise row
                d_noise = (softmax(out[idx.size:]) - 1.0 / config.num_classes) * (outlier_weight / k)
                dlogits = np.concatenate([dlogits, d_noise])
            net.backward(dlogits.astype(net.front.params["w"].dtype))
            opt.step(params, net.gradients())
            tot_loss += loss * idx.size
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
            seen += idx.size
        if not math.isfinite(tot_loss):
            raise FloatingPointError(f"{group}: non-finite training loss at epoch {epoch}")
        report.train_loss.append(tot_loss / max(seen, 1))
        report.train_acc.append(correct / max(seen, 1))
        report.epochs_run = epoch

        if validation is not None:
            vloss, vacc = evaluate_frames(net, val_x, val_y)
            report.val_loss.append(vloss)
            report.val_acc.append(vacc)
            key = (vacc, -vloss)
        else:
            key = (report.train_acc[-1], -report.train_loss[-1])
        log.info("%s epoch %d: loss %.4f acc %.3f%s", group, epoch, report.train_loss[-1],
                 report.train_acc[-1],
                 f" | val loss {report.val_loss[-1]:.4f} acc {report.val_acc[-1]:.3f}" if validation is not None else "")
        if best_key is None or key > best_key:
            best_key, best_state, stale = key, net.state_dict(), 0
            report.best_epoch = epoch
        else:
            stale += 1
            if patience is not None and stale >= patience:
                break

    if best_state is not None:
        net.load_state_dict(best_state)
    report.wall_time = time.perf_counter() - start
    if checkpoint is not None:
        save_model(net, checkpoint)
        report.checkpoint = str(checkpoint)
    return report, net


def _check_labels_loose(labels, n):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise LabelOutOfRange(f"validation labels outside [0, {n})")
    return labels


# ---------------------------------------------------------------------------
# random search
# ---------------------------------------------------------------------------

@dataclass
class SearchSpace:
    conv_layers: tuple = (3, 5)
    filters: tuple = (128, 256)
    gru_units: tuple = (512, 1024)
    dense_units: tuple = (64, 512)
    lr: tuple = (1e-4, 1e-2)
    beta1: tuple = (0.9, 0.999)
    beta2: tuple = (0.99, 0.999)

    def scaled(self, factor: float) -> "SearchSpace":
        """Shrink the width ranges (filters, GRU, dense) for desk-scale searches."""
        def sc(r):
            return (max(1, int(round(r[0] * factor))), max(1, int(round(r[1] * factor))))
        return dataclasses.replace(self, filters=sc(self.filters), gru_units=sc(self.gru_units),
                                   dense_units=sc(self.dense_units))

    def sample(self, rng, base: RawNetConfig) -> RawNetConfig:
        def randint(r):
            return int(rng.integers(r[0], r[1] + 1))
        return dataclasses.replace(
            base,
            conv_layers=randint(self.conv_layers),
            front_filters=randint(self.filters),
            block2_filters=randint(self.filters),
            gru_units=randint(self.gru_units),
            dense_units=randint(self.dense_units),
            lr=float(math.exp(rng.uniform(math.log(self.lr[0]), math.log(self.lr[1])))),
            beta1=float(rng.uniform(*self.beta1)),
            beta2=float(rng.uniform(*self.beta2)),
        )


TRIAL_FIELDS = ["trial_id", "conv_layers", "front_filters", "block2_filters", "gru_units", "dense_units",
                "lr", "beta1", "beta2", "n_params", "val_accuracy", "wall_time", "status"]


def nas_search(group, frames, labels, sources=None, space: SearchSpace | None = None, budget: int = 8,
               seed: int = 0, epochs: int = 5, batch_size: int = 32, validation=None, base=None,
               val_fraction: float = 0.2, outlier_weight: float = OUTLIER_WEIGHT, filtered: bool = True):
    """Uniform random search; returns ``(best_config, trial_log)``.

    The learning rate is drawn log-uniformly. Each trial trains for at most
    ``epochs`` epochs on a fixed split and is scored by validation accuracy;
    ties go to the smaller network. Failed trials are logged, not raised.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    group = DataGroupId.parse(group) if isinstance(group, str) else group
    space = space or SearchSpace()
    base = base or default_config(group)
    frames = np.asarray(frames, dtype=np.float32)
    labels = _check_labels(labels, group.num_classes)
    root = np.random.SeedSequence(seed)
    sample_seq, split_seq, train_seq = root.spawn(3)
    if validation is None:
        tr, va = holdout_split(labels, sources, val_fraction, np.random.default_rng(split_seq))
        if va.size == 0:
            raise ValueError("search needs a validation set: too few recordings to hold one out")
        validation = (frames[va], labels[va])
        frames, labels = frames[tr], labels[tr]
        if sources is not None:
            sources = np.asarray(sources)[tr]
    sampler = np.random.default_rng(sample_seq)
    train_seed = int(train_seq.generate_state(1)[0])

    trials = []
    best = None
    for trial_id in range(budget):
        cfg = space.sample(sampler, base)
        row = {"trial_id": trial_id, **{k: getattr(cfg, k) for k in TRIAL_FIELDS[1:9]}}
        t0 = time.perf_counter()
        try:
            report, net = train(group, frames, labels, cfg, seed=train_seed, epochs=epochs,
                                batch_size=batch_size, validation=validation, patience=None,
                                outlier_weight=outlier_weight, filtered=filtered)
            _, vacc = evaluate_frames(net, *validation)
            row.update(n_params=net.num_parameters(), val_accuracy=vacc, status="ok")
            key = (vacc, -net.num_parameters())
            if best is None or key > best[0]:
                best = (key, cfg)
        except Exception as exc:  # noqa: BLE001 - a failed trial must not end the search
            log.warning("trial %d failed: %s", trial_id, exc)
            row.update(n_params=0, val_accuracy=float("nan"), status=f"error: {exc}")
        row["wall_time"] = time.perf_counter() - t0
        trials.append(row)
        log.info("trial %d: val acc %s (%.1fs)", trial_id, row["val_accuracy"], row["wall_time"])
    if best is None:
        raise RuntimeError("every search trial failed")
    return best[1], trials


def write_trial_log(trials, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRIAL_FIELDS)
        w.writeheader()
        for row in trials:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})

"""Frame rejection by softmax entropy and recording-level majority voting."""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInput, InvalidDistribution, UnknownRecType
from .model import DataGroupId, RawNet, load_model
from .spectral import bandpass, detect_nominal
from .waveform import GRIDS, NONE_LABEL, WORKING_RATE, Recording, RecType, frame, to_working_rate

ALPHA1 = 0.8
ALPHA2 = 0.75


@dataclass
class FramePrediction:
    probs: np.ndarray
    accepted: bool
    label: int | None  # None when rejected


@dataclass
class RecordingVerdict:
    final: str  # class name, or "N"
    votes: dict  # class name -> accepted frame count
    none_count: int
    top_fraction: float
    alpha1: float
    alpha2: float
    winner: int | None = None  # class index behind ``final``
    source_id: str = ""
    rec_type: RecType = RecType.UNKNOWN
    nominal: int | None = None
    frames: list = field(default_factory=list, repr=False)

    @property
    def total(self) -> int:
        return self.none_count + sum(self.votes.values())


def entropy_bits(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def entropy_accept(probs, alpha1: float = ALPHA1, n: int | None = None) -> bool:
    """True iff the base-2 entropy of ``probs`` is below ``alpha1 * log2(n)``."""
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    n = p.shape[0] if n is None else n
    if n < 2 or p.shape[0] != n:
        raise InvalidDistribution(f"expected {n} >= 2 probabilities, got {p.shape[0]}")
    if not np.all(np.isfinite(p)) or (p < 0).any() or abs(p.sum() - 1.0) > 1e-4:
        raise InvalidDistribution(f"not a probability vector (sum={p.sum():.6g}, min={p.min():.3g})")
    return entropy_bits(p) < alpha1 * math.log2(n)


def aggregate(frame_labels, alpha2: float = ALPHA2, n: int | None = None, classes=None,
              alpha1: float = ALPHA1) -> RecordingVerdict:
    """Majority vote over per-frame labels (class index, or None for a rejected frame).

    The winner must hold at least ``alpha2`` of *all* frames, rejected ones
    included; a tie for first place yields N.
    """
    labels = list(frame_labels)
    if not labels:
        raise EmptyInput("no frame predictions to aggregate")
    if not 0.5 < alpha2 <= 1:
        raise ValueError(f"alpha2 must lie in (0.5, 1], got {alpha2}")
    if classes is None:
        if n is None:
            n = 1 + max((lab for lab in labels if lab is not None), default=0)
        classes = tuple(str(i) for i in range(n))
    counts = Counter(lab for lab in labels if lab is not None)
    none_count = len(labels) - sum(counts.values())
    votes = {name: counts.get(i, 0) for i, name in enumerate(classes)}
    for lab in counts:
        if not 0 <= lab < len(classes):
            raise ValueError(f"frame label {lab} outside [0, {len(classes)})")

    final, winner, top = NONE_LABEL, None, 0
    if counts:
        ranked = counts.most_common()
        top = ranked[0][1]
        tied = len(ranked) > 1 and ranked[1][1] == top
        if not tied and top / len(labels) >= alpha2:
            winner = ranked[0][0]
            final = classes[winner]
    return RecordingVerdict(final, votes, none_count, top / len(labels), alpha1, alpha2, winner)


def frame_decisions(probs: np.ndarray, alpha1: float = ALPHA1) -> list[FramePrediction]:
    out = []
    for p in np.asarray(probs):
        ok = entropy_accept(p, alpha1, len(p))
        out.append(FramePrediction(p, ok, int(np.argmax(p)) if ok else None))
    return out


def _resolve(model):
    return model if isinstance(model, RawNet) else load_model(model)


def prepare_frames(recording: Recording, nominal, apply_filter: bool = True):
    rec = to_working_rate(recording, WORKING_RATE)
    x = bandpass(rec.samples, rec.sample_rate, nominal) if apply_filter else rec.samples
    return frame(Recording(x, rec.sample_rate, rec.rec_type, rec.grid, rec.source_id))


def classify_recording(recording: Recording, models: dict, alpha1: float = ALPHA1, alpha2: float = ALPHA2,
                       rec_type=None, apply_filter: bool = True) -> RecordingVerdict:
    """Full per-recording decision: detect nominal, route, filter, frame, predict, vote.

    ``models`` maps data-group names (``audio60`` ...) to a RawNet or a
    checkpoint path. ``rec_type`` overrides the recording's own metadata.
    """
    rt = RecType.parse(rec_type) if rec_type is not None else recording.rec_type
    if rt == RecType.UNKNOWN:
        raise UnknownRecType(f"{recording.source_id or 'recording'}: recording type unknown; pass a type override")
    rec = to_working_rate(recording, WORKING_RATE)
    decision = detect_nominal(rec)
    group = DataGroupId(rt, decision.nominal)
    if group.name not in models:
        raise KeyError(f"no model for data group {group.name}")
    net = _resolve(models[group.name])
    batch = prepare_frames(rec, decision.nominal, apply_filter)
    probs = net.predict_proba(batch.frames)
    preds = frame_decisions(probs, alpha1)
    verdict = aggregate([p.label for p in preds], alpha2, classes=group.classes, alpha1=alpha1)
    verdict.source_id = recording.source_id
    verdict.rec_type = rt
    verdict.nominal = int(decision.nominal)
    verdict.frames = preds
    return verdict


# ---------------------------------------------------------------------------
# verdict CSV
# ---------------------------------------------------------------------------

VERDICT_FIELDS = ["source_id", "rec_type", "nominal", "final", "top_fraction", *GRIDS, "none_count"]


def write_verdicts(verdicts, dest, header: str | None = None) -> None:
    """Write verdict rows sorted by source id; ``header`` becomes a leading ``#`` line."""
    fh = open(dest, "w", newline="") if isinstance(dest, (str, Path)) else dest
    try:
        if header:
            fh.write(header if header.startswith("#") else "# " + header)
            fh.write("\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_FIELDS)
        for v in sorted(verdicts, key=lambda v: v.source_id):
            w.writerow([v.source_id, RecType.parse(v.rec_type).value, "" if v.nominal is None else v.nominal,
                        v.final, f"{v.top_fraction:.6f}", *[v.votes.get(g, 0) for g in GRIDS], v.none_count])
    finally:
        if fh is not dest:
            fh.close()


def read_verdicts(path, with_meta: bool = False):
    """Parse a verdict CSV; with ``with_meta`` also return the ``key=value`` pairs of its header line."""
    meta, body = {}, []
    with open(Path(path), newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                meta.update(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)
            else:
                body.append(line)
    a1 = float(meta.get("alpha1", "nan"))
    a2 = float(meta.get("alpha2", "nan"))
    out = []
    for row in csv.DictReader(body):
        votes = {g: int(row[g]) for g in GRIDS if int(row[g])}
        out.append(RecordingVerdict(
            final=row["final"], votes=votes, none_count=int(row["none_count"]),
            top_fraction=float(row["top_fraction"]), alpha1=a1, alpha2=a2,
            source_id=row["source_id"], rec_type=RecType.parse(row["rec_type"]),
            nominal=int(row["nominal"]) if row["nominal"] else None))
    return (out, meta) if with_meta else out

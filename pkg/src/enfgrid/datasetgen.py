"""Synthetic ENF corpora, directory-layout ingestion and verdict evaluation.

A synthetic grid is an Ornstein-Uhlenbeck frequency deviation around the
nominal frequency, rendered as a three-harmonic hum plus white noise. Grids
differ in drift strength and time scale; recording types differ only in SNR.

On-disk layout (shared with real data)::

    root/{train,practice,test}/{audio,power}/<A..I or N>/*.wav
"""
from __future__ import annotations

import csv
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import InvalidProfile, LayoutError, UnknownSource
from .model import GROUP_CLASSES
from .spectral import Nominal
from .waveform import GRIDS, NONE_LABEL, WORKING_RATE, Recording, RecType, encode_wav

SPLITS = ("train", "practice", "test")
LABELS = GRIDS + (NONE_LABEL,)
GRID_NOMINAL = {g: nom for nom, grids in GROUP_CLASSES.items() for g in grids}

SNR_RANGES = {
    RecType.AUDIO: (-10.0, 5.0),
    RecType.POWER: (10.0, 30.0),
}
WAV_PEAK = 0.9


@dataclass(frozen=True)
class GridProfile:
    nominal: Nominal
    drift_sigma: float  # Hz, stationary std of the deviation
    drift_tau: float  # s, mean-reversion time
    harmonic_amps: tuple = (1.0, 0.5, 0.3)
    snr_db: tuple | None = (0.0, 20.0)  # None: noiseless

    def validate(self):
        if not 0 <= self.drift_sigma < 1:
            raise InvalidProfile(f"drift_sigma must lie in [0, 1) Hz, got {self.drift_sigma}")
        if not self.drift_tau > 0:
            raise InvalidProfile(f"drift_tau must be positive, got {self.drift_tau}")
        if len(self.harmonic_amps) != 3 or min(self.harmonic_amps) < 0:
            raise InvalidProfile(f"need three non-negative harmonic amplitudes, got {self.harmonic_amps}")
        if self.snr_db is not None and self.snr_db[0] > self.snr_db[1]:
            raise InvalidProfile(f"empty SNR range {self.snr_db}")


# drift (sigma Hz, tau s) per grid: a stiff grid, a wide slow wander and a fast jittery one
DEFAULT_PROFILES = {
    "A": GridProfile(Nominal.HZ60, 0.05, 10.0),
    "C": GridProfile(Nominal.HZ60, 0.4, 10.0),
    "I": GridProfile(Nominal.HZ60, 0.8, 1.0),
    "B": GridProfile(Nominal.HZ50, 0.05, 10.0),
    "D": GridProfile(Nominal.HZ50, 0.2, 10.0),
    "E": GridProfile(Nominal.HZ50, 0.5, 10.0),
    "F": GridProfile(Nominal.HZ50, 0.3, 1.0),
    "G": GridProfile(Nominal.HZ50, 0.8, 1.0),
    "H": GridProfile(Nominal.HZ50, 0.8, 0.2),
}


def ou_path(n: int, dt: float, sigma: float, tau: float, rng) -> np.ndarray:
    """Exact discretization of a stationary zero-mean OU process."""
    if sigma == 0:
        return np.zeros(n)
    a = np.exp(-dt / tau)
    drive = rng.standard_normal(n) * sigma * np.sqrt(1.0 - a * a)
    drive[0] = rng.standard_normal() * sigma
    return lfilter([1.0], [1.0, -a], drive)


def synth_enf(profile: GridProfile, duration: float, sample_rate: int = WORKING_RATE, seed: int = 0,
              rec_type=RecType.UNKNOWN, grid=None, source_id="", snr_db=None) -> Recording:
    """Render one hum recording. ``snr_db`` pins the SNR instead of drawing it."""
    profile.validate()
    if duration < 16:
        raise InvalidProfile(f"duration must be at least 16 s, got {duration}")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    dev = ou_path(n, 1.0 / sample_rate, profile.drift_sigma, profile.drift_tau, rng)
    phase = 2 * np.pi * np.cumsum(float(profile.nominal) + dev) / sample_rate
    offsets = rng.uniform(0, 2 * np.pi, size=3)
    x = np.zeros(n)
    for h, (amp, off) in enumerate(zip(profile.harmonic_amps, offsets), start=1):
        if amp:
            x += amp * np.sin(h * phase + off)
    power = float(np.mean(x * x)) or 1.0
    if snr_db is None and profile.snr_db is not None:
        snr_db = float(rng.uniform(*profile.snr_db))
    if snr_db is not None:
        x = x + rng.standard_normal(n) * np.sqrt(power / 10 ** (snr_db / 10))
    return Recording(x, sample_rate, rec_type=rec_type, grid=grid, source_id=source_id)


def synth_noise(duration: float, sample_rate: int = WORKING_RATE, seed: int = 0, kind: str = "uniform",
                rec_type=RecType.UNKNOWN, source_id="") -> Recording:
    """Hum-free noise: ``uniform`` on [-1, 1] or unit ``gaussian``."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    if kind == "uniform":
        x = rng.uniform(-1.0, 1.0, n)
    elif kind == "gaussian":
        x = rng.standard_normal(n)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return Recording(x, sample_rate, rec_type=rec_type, grid=NONE_LABEL, source_id=source_id)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

MANIFEST_FIELDS = ["path", "grid", "rec_type", "nominal", "duration_s", "seed"]


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the corpus root, forward slashes
    grid: str
    rec_type: RecType
    nominal: Nominal | None
    duration_s: float
    seed: int | None = None

    @property
    def split(self) -> str:
        return self.path.split("/", 1)[0]

    @property
    def source_id(self) -> str:
        return self.path


@dataclass
class CorpusManifest:
    root: Path
    entries: list = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        self.entries = sorted(self.entries, key=lambda e: e.path)
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise LayoutError("duplicate paths in manifest")

    def __len__(self):
        return len(self.entries)

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def by_source(self) -> dict:
        return {e.source_id: e for e in self.entries}

    def to_csv(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MANIFEST_FIELDS)
            for e in self.entries:
                w.writerow([e.path, e.grid, e.rec_type.value, "" if e.nominal is None else int(e.nominal),
                            repr(e.duration_s), "" if e.seed is None else e.seed])
        return path

    @classmethod
    def from_csv(cls, path, root=None) -> "CorpusManifest":
        path = Path(path)
        entries = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                entries.append(ManifestEntry(
                    path=row["path"], grid=row["grid"], rec_type=RecType.parse(row["rec_type"]),
                    nominal=Nominal.parse(row["nominal"]) if row["nominal"] else None,
                    duration_s=float(row["duration_s"]),
                    seed=int(row["seed"]) if row["seed"] else None))
        return cls(root if root is not None else path.parent, entries)


def _file_seed(root_seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([root_seed, *keys]).generate_state(1)[0])


def make_corpus(out_dir, profiles: dict | None = None, per_grid: int = 20, test_fraction: float = 0.2,
                practice_fraction: float = 0.0, rec_types=(RecType.AUDIO,), duration: float = 60.0,
                seed: int = 0, sample_rate: int = WORKING_RATE, none_per_type: int = 0,
                snr_ranges: dict | None = None) -> CorpusManifest:
    """Write a synthetic corpus in the standard layout and return its manifest.

    For every grid and recording type, ``per_grid`` recordings are split in
    order into train, practice and test. ``none_per_type`` hum-free noise
    recordings per type are added to the test split under grid ``N``.
    Nominal frequencies are recorded for the train split only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    profiles = DEFAULT_PROFILES if profiles is None else profiles
    snr_ranges = {**SNR_RANGES, **(snr_ranges or {})}
    n_test = int(round(per_grid * test_fraction))
    n_practice = int(round(per_grid * practice_fraction))
    n_train = per_grid - n_test - n_practice
    if n_train < 0:
        raise ValueError("test and practice fractions exceed 1")
    splits = ["train"] * n_train + ["practice"] * n_practice + ["test"] * n_test

    entries = []
    for rt_idx, rt in enumerate(RecType.parse(r) for r in rec_types):
        for grid, prof in sorted(profiles.items()):
            prof = dataclasses.replace(prof, snr_db=snr_ranges[rt])
            for i, split in enumerate(splits):
                fseed = _file_seed(seed, rt_idx, LABELS.index(grid), i)
                rel = f"{split}/{rt.value}/{grid}/{grid}_{rt.value}_{i:03d}_s{fseed}.wav"
                rec = synth_enf(prof, duration, sample_rate, fseed, rt, grid, rel)
                entries.append(_write(out, rel, rec, split, grid, rt))
        for i in range(none_per_type):
            fseed = _file_seed(seed, rt_idx, LABELS.index(NONE_LABEL), i)
            rel = f"test/{rt.value}/{NONE_LABEL}/{NONE_LABEL}_{rt.value}_{i:03d}_s{fseed}.wav"
            rec = synth_noise(duration, sample_rate, fseed, "gaussian", rt, rel)
            entries.append(_write(out, rel, rec, "test", NONE_LABEL, rt))
    manifest = CorpusManifest(out, entries)
    manifest.to_csv()
    return manifest


def _write(out: Path, rel: str, rec: Recording, split: str, grid: str, rt: RecType) -> ManifestEntry:
    path = out / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    peak = np.max(np.abs(rec.samples)) or 1.0
    encode_wav(path, rec.samples * (WAV_PEAK / peak), rec.sample_rate)
    nominal = GRID_NOMINAL.get(grid) if split == "train" else None
    seed = int(re.search(r"_s(\d+)\.wav$", rel).group(1))
    return ManifestEntry(rel, grid, rt, nominal, len(rec.samples) / rec.sample_rate, seed)


def _wav_duration(path: Path) -> float:
    import wave

    with wave.open(str(path), "rb") as w:
        return w.getnframes() / w.getframerate()


def load_layout(root) -> CorpusManifest:
    """Build a manifest by walking the standard directory layout."""
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"{root}: not a directory")
    rec_dirs = {r.value for r in (RecType.AUDIO, RecType.POWER)}
    entries = []
    for path in sorted(root.rglob("*")):
        rel = path.relative_to(root)
        parts = rel.parts
        if path.is_dir():
            ok = ((len(parts) >= 1 and parts[0] in SPLITS)
                  and (len(parts) < 2 or parts[1] in rec_dirs)
                  and (len(parts) < 3 or parts[2] in LABELS)
                  and len(parts) <= 3)
            if not ok:
                raise LayoutError(f"unexpected directory in corpus layout: {path}")
            continue
        if len(parts) == 1 and path.suffix.lower() != ".wav":
            continue  # top-level metadata such as manifest.csv
        if len(parts) != 4 or path.suffix.lower() != ".wav":
            raise LayoutError(f"file outside the corpus layout: {path}")
        split, rt, grid, _ = parts
        m = re.search(r"_s(\d+)\.wav$", path.name)
        nominal = GRID_NOMINAL.get(grid) if split == "train" else None
        entries.append(ManifestEntry(rel.as_posix(), grid, RecType.parse(rt), nominal,
                                     _wav_duration(path), int(m.group(1)) if m else None))
    return CorpusManifest(root, entries)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    labels: tuple
    confusion: np.ndarray  # rows truth, columns prediction
    by_type: dict  # rec_type -> confusion matrix

    @staticmethod
    def _acc(cm):
        total = cm.sum()
        return float(np.trace(cm) / total) if total else float("nan")

    @property
    def overall(self) -> float:
        return self._acc(self.confusion)

    def accuracy(self, rec_type) -> float:
        cm = self.by_type.get(RecType.parse(rec_type))
        return self._acc(cm) if cm is not None else float("nan")

    def per_class(self, cm=None) -> dict:
        cm = self.confusion if cm is None else cm
        out = {}
        for i, lab in enumerate(self.labels):
            row = cm[i].sum()
            out[lab] = float(cm[i, i] / row) if row else float("nan")
        return out

    def table_rows(self) -> list:
        """Per-class and overall accuracy lines for audio, power and all recordings."""
        rows = []
        named = [(rt.value.capitalize(), cm) for rt, cm in sorted(self.by_type.items(), key=lambda kv: kv[0].value)]
        for name, cm in named + [("All", self.confusion)]:
            pc = self.per_class(cm)
            rows.append([name] + [_pct(pc[lab]) for lab in self.labels] + [_pct(self._acc(cm))])
        return rows

    def to_text(self) -> str:
        header = ["Type", *self.labels, "Overall"]
        lines = [",".join(header)] + [",".join(r) for r in self.table_rows()]
        lines.append("")
        lines.append("confusion (rows=truth, cols=prediction)," + ",".join(self.labels))
        for lab, row in zip(self.labels, self.confusion):
            lines.append(lab + "," + ",".join(str(int(v)) for v in row))
        lines.append("")
        lines.append(f"overall accuracy,{_pct(self.overall)}")
        for rt in sorted(self.by_type, key=lambda r: r.value):
            lines.append(f"{rt.value} accuracy,{_pct(self.accuracy(rt))}")
        return "\n".join(lines) + "\n"


def _pct(v):
    return "n/a" if v != v else f"{100 * v:.2f}%"


def evaluate(verdicts, manifest: CorpusManifest) -> EvaluationReport:
    """Confusion matrix over A..I, N plus per-recording-type breakdowns.

    ``verdicts`` are RecordingVerdict-like objects with ``source_id`` and ``final``.
    """
    lookup = manifest.by_source()
    index = {lab: i for i, lab in enumerate(LABELS)}
    cm = np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
    by_type: dict = {}
    for v in verdicts:
        entry = lookup.get(v.source_id)
        if entry is None:
            raise UnknownSource(f"verdict for unknown source {v.source_id!r}")
        i, j = index[entry.grid], index[v.final]
        cm[i, j] += 1
        by_type.setdefault(entry.rec_type, np.zeros_like(cm))[i, j] += 1
    return EvaluationReport(LABELS, cm, by_type)

"""Waveform ingestion, peak normalization and overlapped framing.

Recordings are held as float64 mono arrays. Frames handed to the network are
float32, one row per frame, each peak-normalized on its own.
"""
from __future__ import annotations

import enum
import struct
import wave
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import EmptyWav, MalformedWav, RecordingTooShort, UnsupportedEncoding

WORKING_RATE = 1000
FRAME_LEN = 15999
NOMINAL_FRAME_LEN = 16000  # 16 s at the working rate; the hop is derived from this

GRIDS = tuple("ABCDEFGHI")
NONE_LABEL = "N"


class RecType(str, enum.Enum):
    AUDIO = "audio"
    POWER = "power"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, value: str | "RecType") -> "RecType":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower())


@dataclass
class Recording:
    samples: np.ndarray
    sample_rate: int
    rec_type: RecType = RecType.UNKNOWN
    grid: str | None = None  # A..I, N, or None when unknown
    source_id: str = ""

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        self.rec_type = RecType.parse(self.rec_type)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class FrameBatch:
    frames: np.ndarray  # (num_frames, frame_len) float32
    frame_len: int
    hop: int
    source_id: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

_PCM = 0x0001
_FLOAT = 0x0003
_EXTENSIBLE = 0xFFFE


def _chunks(blob: bytes):
    pos = 12
    while pos + 8 <= len(blob):
        cid, size = struct.unpack_from("<4sI", blob, pos)
        body = blob[pos + 8: pos + 8 + size]
        yield cid, body, size
        pos += 8 + size + (size & 1)


def _decode_pcm(data: bytes, bits: int, fmt_tag: int) -> np.ndarray:
    if fmt_tag == _FLOAT:
        if bits == 32:
            return np.frombuffer(data, dtype="<f4").astype(np.float64)
        if bits == 64:
            return np.frombuffer(data, dtype="<f8").copy()
        raise UnsupportedEncoding(f"{bits}-bit float WAV is not supported")
    if bits == 8:
        return (np.frombuffer(data, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    if bits == 24:
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints & 0x800000, ints - (1 << 24), ints)
        return ints.astype(np.float64) / float(1 << 23)
    if bits == 32:
        return np.frombuffer(data, dtype="<i4").astype(np.float64) / float(1 << 31)
    raise UnsupportedEncoding(f"{bits}-bit integer PCM is not supported")


def decode_wav(path, rec_type=RecType.UNKNOWN, grid=None, source_id=None) -> Recording:
    """Read a PCM or IEEE-float WAV file into a mono :class:`Recording`.

    Integer samples are divided by the magnitude of the type's most negative
    value, so full-scale negative maps to exactly -1.0. Channels are averaged.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise MalformedWav(f"{path}: missing RIFF/WAVE header")

    fmt = None
    data = None
    for cid, body, size in _chunks(blob):
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWav(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _EXTENSIBLE:
                if len(body) < 26:
                    raise MalformedWav(f"{path}: truncated extensible fmt chunk")
                sub = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            data = body
    if fmt is None:
        raise MalformedWav(f"{path}: no fmt chunk")
    if data is None:
        raise MalformedWav(f"{path}: no data chunk")

    fmt_tag, channels, rate, _, block_align, bits = fmt
    if fmt_tag not in (_PCM, _FLOAT):
        raise UnsupportedEncoding(f"{path}: format tag 0x{fmt_tag:04x}")
    if channels < 1 or rate < 1 or bits % 8:
        raise MalformedWav(f"{path}: bad fmt fields (channels={channels}, rate={rate}, bits={bits})")
    frame_bytes = channels * bits // 8
    usable = len(data) - len(data) % frame_bytes
    if usable == 0:
        raise EmptyWav(f"{path}: zero-length payload")

    samples = _decode_pcm(data[:usable], bits, fmt_tag)
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return Recording(samples, rate, rec_type=rec_type, grid=grid,
                     source_id=source_id if source_id is not None else path.stem)


def encode_wav(path, samples, sample_rate: int) -> None:
    """Write mono 16-bit PCM, the inverse of the reader's 1/32768 scaling; out-of-range values clip."""
    x = np.asarray(samples, dtype=np.float64)
    ints = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(ints.tobytes())


# ---------------------------------------------------------------------------
# conditioning
# ---------------------------------------------------------------------------

def to_working_rate(recording: Recording, rate: int = WORKING_RATE) -> Recording:
    if recording.sample_rate == rate:
        return recording
    g = gcd(recording.sample_rate, rate)
    up, down = rate // g, recording.sample_rate // g
    y = resample_poly(recording.samples, up, down)
    return Recording(y, rate, recording.rec_type, recording.grid, recording.source_id)


def normalize(samples) -> np.ndarray:
    x = np.asarray(samples)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 0:
        return x / peak
    return x.copy()


def frame_count(n: int, frame_len: int, hop: int) -> int:
    if n < frame_len:
        return 0
    return (n - frame_len) // hop + 1


def frame(recording: Recording, frame_len: int = FRAME_LEN, overlap: float = 0.5,
          nominal_len: int | None = None) -> FrameBatch:
    """Cut a recording into overlapped, individually normalized frames.

    The hop is ``round((1 - overlap) * nominal_len)``. ``nominal_len`` defaults
    to 16000 for the standard 15999-sample frame and to ``frame_len`` otherwise.
    Trailing samples that do not fill a whole frame are dropped.
    """
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    if nominal_len is None:
        nominal_len = NOMINAL_FRAME_LEN if frame_len == FRAME_LEN else frame_len
    hop = max(1, int(round((1.0 - overlap) * nominal_len)))
    x = recording.samples
    n = frame_count(len(x), frame_len, hop)
    if n == 0:
        raise RecordingTooShort(
            f"{recording.source_id or 'recording'}: {len(x)} samples < frame length {frame_len}")
    idx = np.arange(n)[:, None] * hop + np.arange(frame_len)[None, :]
    frames = x[idx]
    peaks = np.max(np.abs(frames), axis=1, keepdims=True)
    frames = np.divide(frames, peaks, out=frames.copy(), where=peaks > 0)
    return FrameBatch(frames.astype(np.float32), frame_len, hop, recording.source_id)


# ---------------------------------------------------------------------------
# frame archives
# ---------------------------------------------------------------------------

_ARCHIVE_MAGIC = b"EGN1"


def save_frames(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError("frame archive expects a 2-D array")
    num, flen = frames.shape
    with open(path, "wb") as fh:
        fh.write(_ARCHIVE_MAGIC + struct.pack("<II", flen, num))
        fh.write(frames.tobytes())


def load_frames(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != _ARCHIVE_MAGIC:
        raise ValueError(f"{path}: not a frame archive")
    flen, num = struct.unpack_from("<II", blob, 4)
    expected = 12 + 4 * flen * num
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", offset=12).reshape(num, flen).astype(np.float32)

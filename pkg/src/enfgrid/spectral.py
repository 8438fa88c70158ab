"""Spectrogram, nominal-frequency detection and ENF band isolation."""
from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import butter, get_window, sosfiltfilt

from .errors import BandOutOfRange, InvalidWindow, NyquistViolation, RecordingTooShort
from .waveform import WORKING_RATE, Recording, to_working_rate

log = logging.getLogger(__name__)

# detection STFT: 4 s Hann window, 50% hop, 0.125 Hz bins at 1 kHz
DETECT_WINDOW_S = 4.0
DETECT_NFFT = 8000
HARMONIC_HALFWIDTH = 1.0
BAND_HALFWIDTH = 1.0
FILTER_ORDER = 2  # per direction; scipy doubles it for band filters -> 4th order, 8th after filtfilt
MIN_DETECT_SECONDS = 16.0


class Nominal(enum.IntEnum):
    HZ50 = 50
    HZ60 = 60

    @classmethod
    def parse(cls, value) -> "Nominal":
        if isinstance(value, cls):
            return value
        s = str(value).strip().lower().removeprefix("hz").removesuffix("hz")
        return cls(int(s))


@dataclass
class Spectrogram:
    magnitudes: np.ndarray  # (time_bins, freq_bins)
    freq_resolution: float
    time_step: float
    sample_rate: int

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.magnitudes.shape[1]) * self.freq_resolution

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"{f:.6g}" for f in self.freqs])
            for row in self.magnitudes:
                w.writerow([f"{v:.9g}" for v in row])


@dataclass
class NominalDecision:
    nominal: Nominal
    score50: float
    score60: float
    per_harmonic: dict  # {50: [m1, m2, m3], 60: [m1, m2, m3]}

    @property
    def margin(self) -> float:
        return abs(self.score50 - self.score60)


def spectrogram(samples, sample_rate: int, window_len: int, hop: int, nfft: int) -> Spectrogram:
    x = np.asarray(samples, dtype=np.float64)
    if window_len < 1 or hop < 1:
        raise InvalidWindow(f"window_len={window_len} and hop={hop} must be positive")
    if window_len > nfft:
        raise InvalidWindow(f"window_len={window_len} exceeds nfft={nfft}")
    if x.shape[0] < window_len:
        raise InvalidWindow(f"{x.shape[0]} samples are fewer than window_len={window_len}")
    win = get_window("hann", window_len)
    cols = (x.shape[0] - window_len) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(x, window_len)[::hop][:cols]
    mags = np.abs(np.fft.rfft(view * win, n=nfft, axis=1))
    return Spectrogram(mags, sample_rate / nfft, hop / sample_rate, int(sample_rate))


def harmonic_band_mean(spec: Spectrogram, center: float, halfwidth: float) -> float:
    """Mean magnitude over time and over every bin whose center lies in the band."""
    if center + halfwidth >= spec.sample_rate / 2:
        raise BandOutOfRange(f"band {center}±{halfwidth} Hz reaches Nyquist ({spec.sample_rate / 2} Hz)")
    freqs = spec.freqs
    sel = (freqs >= center - halfwidth) & (freqs <= center + halfwidth)
    if not sel.any():
        raise BandOutOfRange(f"no frequency bin centered in {center}±{halfwidth} Hz")
    return float(spec.magnitudes[:, sel].mean())


def detect_nominal(recording: Recording, window_s: float = DETECT_WINDOW_S,
                   nfft: int = DETECT_NFFT, halfwidth: float = HARMONIC_HALFWIDTH) -> NominalDecision:
    """Decide between a 50 Hz and a 60 Hz grid from harmonic energy.

    For each candidate the first three harmonic bands are averaged, the weakest
    is dropped and the remaining two are averaged again; the larger score wins.
    """
    rec = to_working_rate(recording, WORKING_RATE)
    if rec.duration < MIN_DETECT_SECONDS:
        raise RecordingTooShort(
            f"{rec.source_id or 'recording'}: {rec.duration:.2f} s < {MIN_DETECT_SECONDS} s needed for detection")
    win = int(round(window_s * rec.sample_rate))
    spec = spectrogram(rec.samples, rec.sample_rate, win, win // 2, nfft)

    per = {}
    scores = {}
    for f0 in (50, 60):
        mags = [harmonic_band_mean(spec, h * f0, halfwidth) for h in (1, 2, 3)]
        per[f0] = mags
        kept = sorted(mags)[1:]
        scores[f0] = float(np.mean(kept))
    if scores[50] == scores[60]:
        log.warning("%s: equal harmonic scores (%g); defaulting to 50 Hz",
                    rec.source_id or "recording", scores[50])
    nominal = Nominal.HZ50 if scores[50] >= scores[60] else Nominal.HZ60
    return NominalDecision(nominal, scores[50], scores[60], per)


@lru_cache(maxsize=32)
def _band_sos(sample_rate: int, f0: float, halfwidth: float) -> np.ndarray:
    return butter(FILTER_ORDER, [f0 - halfwidth, f0 + halfwidth], btype="bandpass",
                  output="sos", fs=sample_rate)


def bandpass(samples, sample_rate: int, nominal, halfwidth: float = BAND_HALFWIDTH) -> np.ndarray:
    """Zero-phase Butterworth bandpass over ``nominal ± halfwidth`` Hz."""
    f0 = float(Nominal.parse(nominal))
    if f0 + halfwidth >= sample_rate / 2:
        raise NyquistViolation(f"{f0 + halfwidth} Hz is not below Nyquist ({sample_rate / 2} Hz)")
    x = np.asarray(samples, dtype=np.float64)
    sos = _band_sos(int(sample_rate), f0, float(halfwidth))
    return sosfiltfilt(sos, x)

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enfgrid.datasetgen import GridProfile, synth_enf
from enfgrid.errors import BandOutOfRange, InvalidWindow, NyquistViolation, RecordingTooShort
from enfgrid.spectral import Nominal, bandpass, detect_nominal, harmonic_band_mean, spectrogram
from enfgrid.waveform import Recording

FS = 1000


def tone(f, seconds=20.0, fs=FS, amp=1.0):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.sin(2 * np.pi * f * t)


# ---------------------------------------------------------------------------
# spectrogram
# ---------------------------------------------------------------------------

def test_peak_bin_of_50hz_tone():
    x = tone(50, 8)
    spec = spectrogram(x, FS, 4000, 2000, 4000)
    assert spec.freq_resolution == 0.25
    col = spec.magnitudes[0]
    assert np.argmax(col) == 200
    # direct DFT of the first windowed segment at bin 200
    seg = x[:4000] * np.hanning(4001)[:4000]
    n = np.arange(4000)
    direct = abs(np.sum(seg * np.exp(-2j * np.pi * 200 * n / 4000)))
    assert col[200] == pytest.approx(direct, rel=1e-9)


def test_column_count_and_trivial_inputs():
    spec = spectrogram(np.zeros(10_000), FS, 4000, 2000, 8000)
    assert spec.magnitudes.shape == ((10_000 - 4000) // 2000 + 1, 4001)
    assert np.all(spec.magnitudes == 0)
    dc = spectrogram(np.ones(10_000), FS, 4000, 2000, 4000).magnitudes
    assert np.all(np.argmax(dc, axis=1) == 0)
    # periodic Hann without zero padding: a constant reaches only bins 0 and 1
    assert np.all(dc[:, 2:] < 1e-9 * dc[:, :1])


@pytest.mark.parametrize("kw", [dict(window_len=9000, hop=10, nfft=8000),
                                dict(window_len=4000, hop=0, nfft=8000),
                                dict(window_len=20_000, hop=10, nfft=30_000)])
def test_invalid_window(kw):
    with pytest.raises(InvalidWindow):
        spectrogram(np.zeros(10_000), FS, **kw)


def test_spectrogram_csv(tmp_path):
    spec = spectrogram(tone(50, 5), FS, 1000, 500, 1000)
    p = tmp_path / "s.csv"
    spec.to_csv(p)
    lines = p.read_text().splitlines()
    assert len(lines) == 1 + spec.magnitudes.shape[0]
    assert len(lines[0].split(",")) == spec.magnitudes.shape[1]
    assert float(lines[0].split(",")[1]) == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_magnitudes_nonnegative(seed):
    x = np.random.default_rng(seed).standard_normal(3000)
    assert np.all(spectrogram(x, FS, 500, 250, 512).magnitudes >= 0)


# ---------------------------------------------------------------------------
# harmonic bands
# ---------------------------------------------------------------------------

def test_band_ordering_and_errors():
    spec = spectrogram(tone(50, 20), FS, 4000, 2000, 8000)
    assert harmonic_band_mean(spec, 50, 1) > harmonic_band_mean(spec, 60, 1)
    zero = spectrogram(np.zeros(8000), FS, 4000, 2000, 8000)
    assert harmonic_band_mean(zero, 60, 1) == 0
    with pytest.raises(BandOutOfRange):
        harmonic_band_mean(spec, 499.5, 1)
    with pytest.raises(BandOutOfRange):
        harmonic_band_mean(spec, 60.06, 0.01)  # falls between 0.125 Hz bin centres


# ---------------------------------------------------------------------------
# nominal detection
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("nominal", [Nominal.HZ50, Nominal.HZ60])
def test_detect_synthetic(nominal):
    prof = GridProfile(nominal, 0.05, 5.0, snr_db=(10.0, 10.0))
    rec = synth_enf(prof, 30, seed=1)
    assert detect_nominal(rec).nominal == nominal


def test_weakest_harmonic_is_ignored():
    prof = GridProfile(Nominal.HZ50, 0.02, 10.0, harmonic_amps=(1.0, 0.0, 0.6), snr_db=(5.0, 5.0))
    rec = synth_enf(prof, 30, seed=2)
    dec = detect_nominal(rec)
    assert dec.nominal == Nominal.HZ50
    assert min(dec.per_harmonic[50]) == dec.per_harmonic[50][1]


def test_detect_pure_stack_and_resampled_input():
    prof = GridProfile(Nominal.HZ60, 0.0, 1.0, snr_db=None)
    assert detect_nominal(synth_enf(prof, 16, seed=0)).nominal == Nominal.HZ60
    # 8 kHz input goes through the working-rate resampler first
    rec = synth_enf(prof, 16, sample_rate=8000, seed=0)
    assert detect_nominal(rec).nominal == Nominal.HZ60


def test_noise_only_is_deterministic():
    x = np.random.default_rng(5).standard_normal(20_000)
    a = detect_nominal(Recording(x, FS))
    b = detect_nominal(Recording(x.copy(), FS))
    assert (a.nominal, a.score50, a.score60) == (b.nominal, b.score50, b.score60)
    assert a.margin >= 0


def test_tie_defaults_to_50_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        dec = detect_nominal(Recording(np.zeros(16_000), FS))
    assert dec.nominal == Nominal.HZ50
    assert "equal harmonic scores" in caplog.text


def test_detect_needs_16_seconds():
    with pytest.raises(RecordingTooShort):
        detect_nominal(Recording(np.zeros(15_999), FS))


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-3, 1e3), st.sampled_from([Nominal.HZ50, Nominal.HZ60]), st.integers(0, 1000))
def test_detect_scale_invariant(c, nominal, seed):
    rec = synth_enf(GridProfile(nominal, 0.1, 2.0, snr_db=(0.0, 20.0)), 16, seed=seed)
    scaled = Recording(rec.samples * c, rec.sample_rate)
    assert detect_nominal(scaled).nominal == detect_nominal(rec).nominal


# ---------------------------------------------------------------------------
# bandpass
# ---------------------------------------------------------------------------

def rms(x):
    return float(np.sqrt(np.mean(x * x)))


def test_passband_and_stopband():
    x = tone(60, 20)
    y = bandpass(x, FS, Nominal.HZ60)
    assert y.shape == x.shape
    core = slice(2 * FS, -2 * FS)
    assert abs(rms(y[core]) / rms(x[core]) - 1) < 0.05
    x45 = tone(45, 20)
    assert rms(bandpass(x45, FS, Nominal.HZ50)[core]) < 0.01 * rms(x45[core])
    assert np.all(bandpass(np.zeros(5000), FS, 50) == 0)


def test_zero_phase():
    x = tone(60, 20)
    y = bandpass(x, FS, 60)
    core = slice(3 * FS, -3 * FS)
    lags = range(-20, 21)
    xc = [np.dot(np.roll(y, k)[core], x[core]) for k in lags]
    assert list(lags)[int(np.argmax(xc))] == 0


def test_nyquist_violation():
    with pytest.raises(NyquistViolation):
        bandpass(np.zeros(100), 100, 50)


@settings(max_examples=25, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**31))
def test_bandpass_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(3000), rng.standard_normal(3000)
    lhs = bandpass(a * x + b * y, FS, 50)
    rhs = a * bandpass(x, FS, 50) + b * bandpass(y, FS, 50)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9, rtol=0)


def test_nominal_parse():
    assert Nominal.parse("50") is Nominal.HZ50
    assert Nominal.parse("Hz60") is Nominal.HZ60
    assert Nominal.parse(60) is Nominal.HZ60
    with pytest.raises(ValueError):
        Nominal.parse("55")

import numpy as np
import pytest

from speechfx.audio import CANONICAL_RATE_HZ, Waveform


def sine(freq_hz, duration_s=1.0, amplitude=0.5, rate=CANONICAL_RATE_HZ, phase=0.0):
    t = np.arange(int(round(duration_s * rate))) / rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq_hz * t + phase), rate)


def tone_at_rms_dbfs(freq_hz, rms_dbfs, duration_s=1.0, rate=CANONICAL_RATE_HZ):
    """Sine whose RMS level sits at the given dBFS value."""
    amplitude = 10.0 ** (rms_dbfs / 20.0) * np.sqrt(2.0)
    return sine(freq_hz, duration_s, amplitude, rate)


def white_noise(seed, duration_s=1.0, amplitude=0.25, rate=CANONICAL_RATE_HZ):
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal(int(round(duration_s * rate)))
    x *= amplitude / max(np.max(np.abs(x)), 1e-9)
    return Waveform(x, rate)


def tail_rms_db(w, fraction=0.4):
    """Steady-state RMS (dBFS) over the trailing fraction of a waveform."""
    x = w.samples.astype(np.float64)
    tail = x[int(len(x) * (1.0 - fraction)):]
    rms = np.sqrt(np.mean(tail ** 2))
    return 20.0 * np.log10(max(rms, 1e-15))


def spectrum_db(w):
    """(freqs, magnitude dB) of the full buffer with a Hann window."""
    x = w.samples.astype(np.float64)
    win = np.hanning(len(x))
    mag = np.abs(np.fft.rfft(x * win))
    freqs = np.fft.rfftfreq(len(x), 1.0 / w.sample_rate_hz)
    return freqs, 20.0 * np.log10(np.maximum(mag, 1e-12))


@pytest.fixture
def sine_1khz():
    return sine(1000.0)

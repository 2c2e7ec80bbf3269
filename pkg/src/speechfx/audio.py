"""Waveform container, WAV file I/O, resampling, and level measurements.

Everything downstream (effects, degradations, dataset synthesis) works on
the mono ``Waveform`` defined here. Samples are stored as float32 in
nominal [-1, 1] full scale; DSP accumulates in float64 and casts back.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import upfirdn

CANONICAL_RATE_HZ = 16000

# Levels are floored here instead of going to -inf on silence.
SILENCE_FLOOR_DBFS = -120.0

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavFormatError(Exception):
    """Raised for WAV files that are unreadable or use an unsupported encoding."""


class EmptyAudioError(Exception):
    """Raised when a WAV file contains zero audio samples."""


@dataclass(frozen=True, eq=False)
class Waveform:
    """Immutable mono sample buffer.

    Parameters
    ----------
    samples : array-like
        Mono samples, nominal full scale [-1, 1]. Stored as read-only float32.
    sample_rate_hz : int
        Sampling rate, > 0.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float32)
        if arr.ndim != 1:
            raise ValueError(f"Waveform must be mono (1-D), got shape {arr.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Waveform samples must be finite (no NaN/Inf)")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        """New Waveform at this rate with different samples."""
        return Waveform(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class LevelMeasure:
    """Wideband level summary in dB relative to full scale."""

    rms_dbfs: float
    peak_dbfs: float
    crest_factor_db: float


def _db(value: float) -> float:
    if value <= 10.0 ** (SILENCE_FLOOR_DBFS / 20.0):
        return SILENCE_FLOOR_DBFS
    return float(20.0 * np.log10(value))


def measure_levels(w: Waveform) -> LevelMeasure:
    """RMS/peak/crest of a waveform, floored at -120 dBFS for silence."""
    x = w.samples.astype(np.float64)
    rms = _db(float(np.sqrt(np.mean(np.square(x))))) if len(x) else SILENCE_FLOOR_DBFS
    peak = _db(float(np.max(np.abs(x)))) if len(x) else SILENCE_FLOOR_DBFS
    return LevelMeasure(rms_dbfs=rms, peak_dbfs=peak, crest_factor_db=peak - rms)


# ---------------------------------------------------------------------------
# WAV (RIFF) reading and writing
# ---------------------------------------------------------------------------

def read_wav(path) -> Waveform:
    """Read a PCM (16/24/32-bit int) or IEEE float32 WAV file as a mono Waveform.

    Multi-channel audio is downmixed by arithmetic channel mean. Integer
    samples are scaled to [-1, 1] by the full-scale magnitude (2^(bits-1)).
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise WavFormatError(f"cannot read {path}: {exc}") from exc

    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise WavFormatError(f"{path}: truncated fmt chunk")

    tag, n_channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise WavFormatError(f"{path}: truncated extensible fmt chunk")
        (tag,) = struct.unpack_from("<H", fmt, 24)  # first bytes of SubFormat GUID

    if n_channels < 1 or rate <= 0 or block_align == 0:
        raise WavFormatError(f"{path}: malformed fmt chunk")

    if tag == _WAVE_FORMAT_PCM and bits == 16:
        x = np.frombuffer(data[:len(data) - len(data) % 2], dtype="<i2").astype(np.float64)
        x /= 32768.0
    elif tag == _WAVE_FORMAT_PCM and bits == 24:
        usable = len(data) - len(data) % 3
        b = np.frombuffer(data[:usable], dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        x = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        x = np.where(x & 0x800000, x - 0x1000000, x).astype(np.float64)
        x /= 8388608.0
    elif tag == _WAVE_FORMAT_PCM and bits == 32:
        x = np.frombuffer(data[:len(data) - len(data) % 4], dtype="<i4").astype(np.float64)
        x /= 2147483648.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(data[:len(data) - len(data) % 4], dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported encoding (format {tag}, {bits}-bit)")

    frames = x.shape[0] // n_channels
    if frames == 0:
        raise EmptyAudioError(f"{path}: file contains no audio samples")
    x = x[:frames * n_channels].reshape(frames, n_channels)
    mono = x.mean(axis=1) if n_channels > 1 else x[:, 0]
    return Waveform(mono.astype(np.float32), int(rate))


def write_wav(w: Waveform, path, bit_depth: "int | str" = "float32") -> int:
    """Write a mono Waveform as WAV at 16/24-bit PCM or IEEE float32.

    Integer formats clip samples outside [-1, 1]; returns the number of
    clipped samples (0 for float32, which round-trips bit-exactly).
    """
    path = Path(path)
    x = w.samples
    clipped = 0

    if bit_depth == "float32":
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
        payload = x.astype("<f4").tobytes()
    elif bit_depth in (16, 24):
        full_scale = 32768.0 if bit_depth == 16 else 8388608.0
        scaled = np.round(x.astype(np.float64) * full_scale)
        lo, hi = -full_scale, full_scale - 1
        clipped = int(np.count_nonzero((scaled < lo) | (scaled > hi)))
        scaled = np.clip(scaled, lo, hi).astype(np.int32)
        if bit_depth == 16:
            tag, bits = _WAVE_FORMAT_PCM, 16
            payload = scaled.astype("<i2").tobytes()
        else:
            tag, bits = _WAVE_FORMAT_PCM, 24
            u = scaled.astype("<i4").view(np.uint8).reshape(-1, 4)
            payload = u[:, :3].tobytes()
    else:
        raise ValueError(f"unsupported bit depth {bit_depth!r}; use 16, 24 or 'float32'")

    block_align = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, w.sample_rate_hz,
                      w.sample_rate_hz * block_align, block_align, bits)
    chunks = [(b"fmt ", fmt)]
    if tag == _WAVE_FORMAT_IEEE_FLOAT:
        chunks.append((b"fact", struct.pack("<I", len(w))))
    chunks.append((b"data", payload))

    body = b"WAVE"
    for cid, cbody in chunks:
        body += cid + struct.pack("<I", len(cbody)) + cbody
        if len(cbody) & 1:
            body += b"\x00"
    try:
        path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    except OSError as exc:
        raise WavFormatError(f"cannot write {path}: {exc}") from exc
    return clipped


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

# Polyphase windowed-sinc resampler: Kaiser window, beta 8, half length
# 16 taps per polyphase branch. Documented so outputs are reproducible.
_KAISER_BETA = 8.0
_TAPS_PER_BRANCH = 16


def _design_lowpass(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    cutoff = 1.0 / max_rate  # normalized to the upsampled Nyquist
    half = _TAPS_PER_BRANCH * max_rate
    n = np.arange(-half, half + 1, dtype=np.float64)
    h = cutoff * np.sinc(cutoff * n) * np.kaiser(2 * half + 1, _KAISER_BETA)
    h /= h.sum()  # unity gain at DC
    return h * up


def resample(w: Waveform, target_rate_hz: int) -> Waveform:
    """Resample to ``target_rate_hz``, band-limited below both Nyquists.

    Output length is ceil(n * target / source), so total duration is
    preserved within one output sample period. Same-rate input is
    returned unchanged.
    """
    if target_rate_hz <= 0:
        raise ValueError("target_rate_hz must be positive")
    if target_rate_hz == w.sample_rate_hz:
        return w

    g = np.gcd(w.sample_rate_hz, target_rate_hz)
    up, down = target_rate_hz // g, w.sample_rate_hz // g
    n_in = len(w)
    n_out = -(-n_in * up // down)  # ceil

    h = _design_lowpass(up, down)
    half = (len(h) - 1) // 2
    # Pre-pad the filter so output sample k lands at input time k*down/up.
    n_pre_pad = -half % down
    n_pre_remove = (half + n_pre_pad) // down
    h = np.concatenate([np.zeros(n_pre_pad), h, np.zeros(2 * down)])

    y = upfirdn(h, w.samples.astype(np.float64), up, down)
    y = y[n_pre_remove:n_pre_remove + n_out]
    if y.shape[0] < n_out:  # short inputs: tail of the response was trimmed early
        y = np.pad(y, (0, n_out - y.shape[0]))
    return Waveform(y.astype(np.float32), int(target_rate_hz))

"""Reference implementations of the six speech post-production processors.

Chain order is gate -> compressor -> EQ -> de-esser -> reverb -> limiter.
Every processor is deterministic, preserves sample count and rate, and
accumulates in float64 while waveforms stay float32.

Level conventions: dynamics detectors read an RMS level (one-pole mean
square, 2 ms window) in dBFS, so a steady tone reads exactly its RMS
level. The static gain curve maps that level to a target gain in dB,
which an attack/release envelope follower then smooths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import minimum_filter1d
from scipy.signal import butter, lfilter, sosfilt

from ._kernels import asym_one_pole, freeverb_wet, peaking_cut_tv
from .audio import SILENCE_FLOOR_DBFS, Waveform

_LEVEL_FLOOR_LIN = 10.0 ** (SILENCE_FLOOR_DBFS / 20.0)


def smoothing_coefficient(time_ms: float, sample_rate_hz: int) -> float:
    """One-pole coefficient a = exp(-1 / (rate * t_ms / 1000)), in (0, 1)."""
    return math.exp(-1.0 / (sample_rate_hz * time_ms / 1000.0))


_DETECTOR_WINDOW_MS = 2.0


def _rms_level_db(x: np.ndarray, sample_rate_hz: int) -> np.ndarray:
    """Running RMS level in dBFS: two cascaded one-pole stages smoothing x^2.

    Two stages keep the detector fast while suppressing the 2f ripple of
    tonal inputs quadratically; a steady input reads its exact RMS level.
    Stages are initialized at the first sample's power.
    """
    a = smoothing_coefficient(_DETECTOR_WINDOW_MS, sample_rate_hz)
    ms = np.square(x)
    for _ in range(2):
        ms, _ = lfilter([1.0 - a], [1.0, -a], ms, zi=[a * ms[0]])
    return 10.0 * np.log10(np.maximum(ms, _LEVEL_FLOOR_LIN ** 2))


@dataclass
class EnvelopeFollower:
    """Branching attack/release smoother for dB-domain gain signals.

    ``attack_on_rise`` selects which coefficient engages when the tracked
    value increases: a gate opens (gain rises) at the attack rate, while a
    compressor engages reduction (gain falls) at the attack rate. A fresh
    instance is constructed per render, so ``state_db`` never leaks
    across items.
    """

    attack_ms: float
    release_ms: float
    state_db: float | None = field(default=None)

    def __post_init__(self):
        if self.attack_ms <= 0 or self.release_ms <= 0:
            raise ValueError("attack_ms and release_ms must be > 0")

    def track(self, values_db: np.ndarray, sample_rate_hz: int,
              attack_on_rise: bool = True) -> np.ndarray:
        if values_db.size == 0:
            return values_db
        initial = values_db[0] if self.state_db is None else self.state_db
        a_attack = smoothing_coefficient(self.attack_ms, sample_rate_hz)
        a_release = smoothing_coefficient(self.release_ms, sample_rate_hz)
        rise, fall = (a_attack, a_release) if attack_on_rise else (a_release, a_attack)
        out = asym_one_pole(
            np.ascontiguousarray(values_db, dtype=np.float64),
            rise, fall, float(initial),
        )
        self.state_db = float(out[-1])
        return out


# ---------------------------------------------------------------------------
# Parameter types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateParams:
    threshold_db: float
    ratio: float
    attack_ms: float
    release_ms: float

    def __post_init__(self):
        if self.ratio < 1.0:
            raise ValueError("gate ratio must be >= 1")
        if self.threshold_db > 0.0:
            raise ValueError("gate threshold_db must be <= 0")


@dataclass(frozen=True)
class CompressorParams:
    threshold_db: float
    ratio: float
    attack_ms: float
    release_ms: float
    makeup_gain_db: float = 0.0

    def __post_init__(self):
        if self.ratio < 1.0:
            raise ValueError("compressor ratio must be >= 1")


@dataclass(frozen=True)
class EqBand:
    kind: str  # low_shelf | peaking | high_shelf | high_pass
    freq_hz: float
    gain_db: float = 0.0
    q: float = 0.70710678

    _KINDS = ("low_shelf", "peaking", "high_shelf", "high_pass")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown EQ band kind {self.kind!r}")
        if self.freq_hz <= 0 or self.q <= 0:
            raise ValueError("freq_hz and q must be > 0")


@dataclass(frozen=True)
class DeEsserParams:
    band_low_hz: float
    band_high_hz: float
    threshold_db: float
    max_reduction_db: float
    attack_ms: float
    release_ms: float

    def __post_init__(self):
        if not 0 < self.band_low_hz < self.band_high_hz:
            raise ValueError("need 0 < band_low_hz < band_high_hz")
        if self.max_reduction_db < 0:
            raise ValueError("max_reduction_db must be >= 0")


@dataclass(frozen=True)
class ReverbParams:
    room_size: float
    damping: float
    wet_level: float
    dry_level: float

    def __post_init__(self):
        for name in ("room_size", "damping", "wet_level", "dry_level"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class LimiterParams:
    ceiling_db: float
    release_ms: float

    def __post_init__(self):
        if self.ceiling_db > 0.0:
            raise ValueError("ceiling_db must be <= 0")
        if self.release_ms <= 0:
            raise ValueError("release_ms must be > 0")


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

def noise_gate(w: Waveform, p: GateParams) -> Waveform:
    """Downward expander: below threshold the output level is
    T + (L - T) * ratio; at or above threshold, unity gain.

    The gate opens at the attack rate and closes at the release rate.
    """
    x = w.samples.astype(np.float64)
    level = _rms_level_db(x, w.sample_rate_hz)
    target_db = np.where(level >= p.threshold_db, 0.0,
                         (level - p.threshold_db) * (p.ratio - 1.0))
    follower = EnvelopeFollower(p.attack_ms, p.release_ms)
    gain_db = follower.track(target_db, w.sample_rate_hz, attack_on_rise=True)
    return w.with_samples(x * 10.0 ** (gain_db / 20.0))


def compressor(w: Waveform, p: CompressorParams) -> Waveform:
    """Hard-knee compression: above threshold the output level is
    T + (L - T) / ratio, then makeup gain.

    Gain reduction engages at the attack rate and recovers at the
    release rate.
    """
    x = w.samples.astype(np.float64)
    level = _rms_level_db(x, w.sample_rate_hz)
    target_db = np.where(level > p.threshold_db,
                         (p.threshold_db - level) * (1.0 - 1.0 / p.ratio), 0.0)
    follower = EnvelopeFollower(p.attack_ms, p.release_ms)
    gain_db = follower.track(target_db, w.sample_rate_hz, attack_on_rise=False)
    gain_db = gain_db + p.makeup_gain_db
    return w.with_samples(x * 10.0 ** (gain_db / 20.0))


# ---------------------------------------------------------------------------
# Equalizer (audio-cookbook biquads)
# ---------------------------------------------------------------------------

def _biquad_coefficients(band: EqBand, sample_rate_hz: int):
    nyquist = sample_rate_hz / 2.0
    if band.freq_hz >= nyquist:
        raise ValueError(f"EQ band at {band.freq_hz} Hz not below Nyquist {nyquist} Hz")
    w0 = 2.0 * math.pi * band.freq_hz / sample_rate_hz
    cw = math.cos(w0)
    alpha = math.sin(w0) / (2.0 * band.q)
    a_gain = 10.0 ** (band.gain_db / 40.0)

    if band.kind == "peaking":
        b = [1.0 + alpha * a_gain, -2.0 * cw, 1.0 - alpha * a_gain]
        a = [1.0 + alpha / a_gain, -2.0 * cw, 1.0 - alpha / a_gain]
    elif band.kind == "high_pass":
        b = [(1.0 + cw) / 2.0, -(1.0 + cw), (1.0 + cw) / 2.0]
        a = [1.0 + alpha, -2.0 * cw, 1.0 - alpha]
    elif band.kind == "low_shelf":
        sq = 2.0 * math.sqrt(a_gain) * alpha
        b = [a_gain * ((a_gain + 1) - (a_gain - 1) * cw + sq),
             2.0 * a_gain * ((a_gain - 1) - (a_gain + 1) * cw),
             a_gain * ((a_gain + 1) - (a_gain - 1) * cw - sq)]
        a = [(a_gain + 1) + (a_gain - 1) * cw + sq,
             -2.0 * ((a_gain - 1) + (a_gain + 1) * cw),
             (a_gain + 1) + (a_gain - 1) * cw - sq]
    else:  # high_shelf
        sq = 2.0 * math.sqrt(a_gain) * alpha
        b = [a_gain * ((a_gain + 1) + (a_gain - 1) * cw + sq),
             -2.0 * a_gain * ((a_gain - 1) + (a_gain + 1) * cw),
             a_gain * ((a_gain + 1) + (a_gain - 1) * cw - sq)]
        a = [(a_gain + 1) - (a_gain - 1) * cw + sq,
             2.0 * ((a_gain - 1) - (a_gain + 1) * cw),
             (a_gain + 1) - (a_gain - 1) * cw - sq]

    b = np.asarray(b, dtype=np.float64) / a[0]
    a = np.asarray(a, dtype=np.float64) / a[0]
    return b, a


def equalizer(w: Waveform, bands) -> Waveform:
    """Cascade of biquads applied in band order; empty list is the identity."""
    if not bands:
        return w
    x = w.samples.astype(np.float64)
    for band in bands:
        b, a = _biquad_coefficients(band, w.sample_rate_hz)
        x = lfilter(b, a, x)
    return w.with_samples(x)


# ---------------------------------------------------------------------------
# De-esser
# ---------------------------------------------------------------------------

def de_esser(w: Waveform, p: DeEsserParams) -> Waveform:
    """Sibilance control: band-pass sidechain drives a peaking cut at the
    band center, depth = overshoot above threshold capped at max_reduction."""
    nyquist = w.sample_rate_hz / 2.0
    if p.band_high_hz >= nyquist:
        raise ValueError(f"de-esser band must end below Nyquist {nyquist} Hz")
    x = w.samples.astype(np.float64)

    sos = butter(2, [p.band_low_hz, p.band_high_hz], btype="bandpass",
                 fs=w.sample_rate_hz, output="sos")
    sidechain = sosfilt(sos, x)
    level = _rms_level_db(sidechain, w.sample_rate_hz)
    overshoot_db = np.clip(level - p.threshold_db, 0.0, p.max_reduction_db)
    follower = EnvelopeFollower(p.attack_ms, p.release_ms)
    depth_db = follower.track(overshoot_db, w.sample_rate_hz, attack_on_rise=True)
    np.clip(depth_db, 0.0, p.max_reduction_db, out=depth_db)

    center_hz = math.sqrt(p.band_low_hz * p.band_high_hz)
    q = center_hz / (p.band_high_hz - p.band_low_hz)
    w0 = 2.0 * math.pi * center_hz / w.sample_rate_hz
    alpha = math.sin(w0) / (2.0 * q)
    y = peaking_cut_tv(x, np.ascontiguousarray(depth_db), math.cos(w0), alpha)
    return w.with_samples(y)


# ---------------------------------------------------------------------------
# Reverb
# ---------------------------------------------------------------------------

# Classic Freeverb mono tunings, defined at 44100 Hz and scaled to the
# working rate. room_size maps affinely onto comb feedback, damping onto
# the comb low-pass coefficient.
_COMB_TUNINGS_44K = (1116, 1188, 1277, 1356, 1422, 1491, 1557, 1617)
_ALLPASS_TUNINGS_44K = (556, 441, 341, 225)
_REVERB_INPUT_GAIN = 0.015
_REVERB_WET_SCALE = 3.0


def reverb(w: Waveform, p: ReverbParams) -> Waveform:
    """Parallel-comb/series-all-pass room reverb, tail truncated to the
    input length. Output = dry_level * x + wet_level * wet(x)."""
    x = w.samples.astype(np.float64)
    if p.wet_level == 0.0:
        return w.with_samples(p.dry_level * x)

    scale = w.sample_rate_hz / 44100.0
    combs = np.array([max(1, int(round(n * scale))) for n in _COMB_TUNINGS_44K],
                     dtype=np.int64)
    allpasses = np.array([max(1, int(round(n * scale))) for n in _ALLPASS_TUNINGS_44K],
                         dtype=np.int64)
    feedback = 0.7 + 0.28 * p.room_size
    damp = 0.4 * p.damping

    wet = freeverb_wet(x * _REVERB_INPUT_GAIN, combs, allpasses, feedback, damp)
    y = p.dry_level * x + p.wet_level * _REVERB_WET_SCALE * wet
    return w.with_samples(y)


# ---------------------------------------------------------------------------
# Limiter
# ---------------------------------------------------------------------------

_LIMITER_LOOKAHEAD_S = 0.001
_LIMITER_ATTACK_S = 0.00025


def limiter(w: Waveform, p: LimiterParams) -> Waveform:
    """Brick-wall limiter with 1 ms lookahead.

    The gain curve is the forward sliding minimum of the per-sample
    required gain, smoothed (fast attack, configured release) and clamped
    so no output sample can exceed the ceiling.
    """
    x = w.samples.astype(np.float64)
    if x.size == 0:
        return w
    ceiling = 10.0 ** (p.ceiling_db / 20.0)

    magnitude = np.abs(x)
    required = np.where(magnitude > ceiling, ceiling / np.maximum(magnitude, 1e-30), 1.0)

    lookahead = max(1, int(round(w.sample_rate_hz * _LIMITER_LOOKAHEAD_S)))
    size = lookahead + 1
    ahead_min = minimum_filter1d(required, size=size, origin=-(size // 2), mode="nearest")

    smoothed = asym_one_pole(
        ahead_min,
        smoothing_coefficient(p.release_ms, w.sample_rate_hz),
        smoothing_coefficient(_LIMITER_ATTACK_S * 1000.0, w.sample_rate_hz),
        float(ahead_min[0]),
    )
    gain = np.minimum(smoothed, required)
    return w.with_samples(np.clip(x * gain, -ceiling, ceiling))

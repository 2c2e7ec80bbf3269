"""Capture- and platform-side degradations and their placement around the
effect chain.

A degraded render applies the pre-side op stack, renders the effect
chain, then applies the post-side op stack; each side is either empty
(identity) or a sampled two-op stack. Plans are pure functions of
(setting, seed): a serialized plan replays bit-exactly.

RNG discipline: plan sampling consumes only ``random.Random.random()``
draws in a fixed documented order (side flag for 'either', then pre ops,
then post ops; per op: kind, then parameters), because that stream is
stable across Python versions. Noise buffers come from numpy PCG64 keyed
by a per-op seed recorded in the plan.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .audio import Waveform, resample
from .presets import PresetBank, PresetTuple, render_chain

SETTINGS = ("none", "pre", "post", "either", "both")

KINDS = ("additive_noise", "resample_ladder", "quantization", "codec_emulation")

SNR_RANGE_DB = (5.0, 30.0)
NOISE_COLORS = ("white", "pink")
INTERMEDIATE_RATES_HZ = (8000, 11025, 22050, 44100)
QUANTIZATION_BITS = (6, 8, 10, 12)
CODEC_BANDWIDTHS_HZ = (3400, 4000, 5000, 6000)

OPS_PER_SIDE = 2

_MU = 255.0


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary parts (hash of their string forms)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class DegradationOp:
    kind: str
    params: dict

    def __post_init__(self):
        if self.kind == "additive_noise":
            snr = self.params["snr_db"]
            if not SNR_RANGE_DB[0] <= snr <= SNR_RANGE_DB[1]:
                raise ValueError(f"snr_db {snr} outside {SNR_RANGE_DB}")
            if self.params["noise_color"] not in NOISE_COLORS:
                raise ValueError(f"unknown noise color {self.params['noise_color']!r}")
        elif self.kind == "resample_ladder":
            if self.params["intermediate_rate_hz"] not in INTERMEDIATE_RATES_HZ:
                raise ValueError("intermediate rate not in the supported ladder set")
        elif self.kind == "quantization":
            if self.params["bit_depth"] not in QUANTIZATION_BITS:
                raise ValueError(f"bit_depth must be one of {QUANTIZATION_BITS}")
        elif self.kind == "codec_emulation":
            if self.params["bandwidth_hz"] not in CODEC_BANDWIDTHS_HZ:
                raise ValueError(f"bandwidth_hz must be one of {CODEC_BANDWIDTHS_HZ}")
        else:
            raise ValueError(f"unknown degradation kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], params=dict(d["params"]))


@dataclass(frozen=True)
class DegradationPlan:
    setting: str
    seed: int
    pre_ops: tuple = field(default=())
    post_ops: tuple = field(default=())

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        pre, post = len(self.pre_ops) > 0, len(self.post_ops) > 0
        valid = {
            "none": not pre and not post,
            "pre": pre and not post,
            "post": post and not pre,
            "either": pre != post,
            "both": pre and post,
        }[self.setting]
        if not valid:
            raise ValueError(
                f"op lists inconsistent with setting {self.setting!r} "
                f"(pre={len(self.pre_ops)}, post={len(self.post_ops)})")

    def to_dict(self):
        return {
            "setting": self.setting,
            "seed": self.seed,
            "pre_ops": [op.to_dict() for op in self.pre_ops],
            "post_ops": [op.to_dict() for op in self.post_ops],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            setting=d["setting"],
            seed=d["seed"],
            pre_ops=tuple(DegradationOp.from_dict(o) for o in d["pre_ops"]),
            post_ops=tuple(DegradationOp.from_dict(o) for o in d["post_ops"]),
        )


# ---------------------------------------------------------------------------
# Plan sampling
# ---------------------------------------------------------------------------

def _uniform(r: random.Random, lo: float, hi: float) -> float:
    return lo + (hi - lo) * r.random()


def _pick(r: random.Random, options):
    return options[min(int(r.random() * len(options)), len(options) - 1)]


def _sample_op(r: random.Random, kind: str) -> DegradationOp:
    if kind == "additive_noise":
        params = {
            "snr_db": _uniform(r, *SNR_RANGE_DB),
            "noise_color": _pick(r, NOISE_COLORS),
            "noise_seed": int(r.random() * 2 ** 53),
        }
    elif kind == "resample_ladder":
        params = {"intermediate_rate_hz": _pick(r, INTERMEDIATE_RATES_HZ)}
    elif kind == "quantization":
        params = {"bit_depth": _pick(r, QUANTIZATION_BITS),
                  "mu_law": r.random() < 0.5}
    else:
        params = {"bandwidth_hz": _pick(r, CODEC_BANDWIDTHS_HZ)}
    return DegradationOp(kind=kind, params=params)


def _sample_side(r: random.Random):
    """Two ops with distinct kinds, applied in draw order."""
    remaining = list(KINDS)
    ops = []
    for _ in range(OPS_PER_SIDE):
        kind = _pick(r, remaining)
        remaining.remove(kind)
        ops.append(_sample_op(r, kind))
    return tuple(ops)


def sample_plan(setting: str, seed: int) -> DegradationPlan:
    """Deterministic plan for one item; 'either' picks a side with p=1/2."""
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}")
    r = random.Random(seed)
    pre_ops, post_ops = (), ()
    if setting == "either":
        if r.random() < 0.5:
            pre_ops = _sample_side(r)
        else:
            post_ops = _sample_side(r)
    else:
        if setting in ("pre", "both"):
            pre_ops = _sample_side(r)
        if setting in ("post", "both"):
            post_ops = _sample_side(r)
    return DegradationPlan(setting=setting, seed=seed, pre_ops=pre_ops, post_ops=post_ops)


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def _pink(noise: np.ndarray) -> np.ndarray:
    # Paul Kellet's three-pole pinking approximation, applied as parallel
    # one-pole sections so it stays vectorized.
    sections = ((0.99765, 0.0990460), (0.96300, 0.2965164), (0.57000, 1.0526913))
    out = 0.1848 * noise
    for pole, gain in sections:
        out = out + lfilter([gain], [1.0, -pole], noise)
    return out


def _additive_noise(x: np.ndarray, params: dict) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(params["noise_seed"]))
    noise = rng.standard_normal(x.shape[0])
    if params["noise_color"] == "pink":
        noise = _pink(noise)
    speech_power = float(np.mean(np.square(x)))
    noise_power = float(np.mean(np.square(noise)))
    if speech_power <= 0.0 or noise_power <= 0.0:
        return x  # silence has no defined SNR; add nothing
    target_noise_power = speech_power / 10.0 ** (params["snr_db"] / 10.0)
    return x + noise * np.sqrt(target_noise_power / noise_power)


def _quantize(x: np.ndarray, bits: int) -> np.ndarray:
    scale = float(2 ** (bits - 1) - 1)
    return np.round(np.clip(x, -1.0, 1.0) * scale) / scale


def _mu_compress(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.log1p(_MU * np.abs(x)) / np.log1p(_MU)


def _mu_expand(y: np.ndarray) -> np.ndarray:
    return np.sign(y) * (np.expm1(np.abs(y) * np.log1p(_MU))) / _MU


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if x.shape[0] > n:
        return x[:n]
    if x.shape[0] < n:
        return np.pad(x, (0, n - x.shape[0]))
    return x


def apply_degradation(w: Waveform, ops) -> Waveform:
    """Apply ops in list order; output stays at the input rate and length."""
    out = w
    for op in ops:
        x = out.samples.astype(np.float64)
        if op.kind == "additive_noise":
            y = _additive_noise(x, op.params)
        elif op.kind == "resample_ladder":
            ladder = resample(resample(out, op.params["intermediate_rate_hz"]),
                              out.sample_rate_hz)
            y = _fit_length(ladder.samples.astype(np.float64), len(out))
        elif op.kind == "quantization":
            if op.params.get("mu_law"):
                y = _mu_expand(_quantize(_mu_compress(x), op.params["bit_depth"]))
            else:
                y = _quantize(x, op.params["bit_depth"])
        elif op.kind == "codec_emulation":
            # band-limit plus 8-bit companding round trip; stands in for a
            # real low-bitrate encoder without platform-dependent binaries
            sos = butter(10, op.params["bandwidth_hz"], btype="lowpass",
                         fs=out.sample_rate_hz, output="sos")
            y = sosfilt(sos, x)
            y = _mu_expand(_quantize(_mu_compress(y), 8))
        else:
            raise ValueError(f"unknown degradation kind {op.kind!r}")
        out = out.with_samples(y)
    return out


def degraded_render(x: Waveform, p: PresetTuple, plan: DegradationPlan,
                    bank: PresetBank | None = None) -> Waveform:
    """Pre-side ops, then the effect chain, then post-side ops."""
    pre = apply_degradation(x, plan.pre_ops) if plan.pre_ops else x
    rendered = render_chain(pre, p, bank)
    return apply_degradation(rendered, plan.post_ops) if plan.post_ops else rendered

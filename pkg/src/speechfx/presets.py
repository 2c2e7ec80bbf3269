"""Preset banks, the 2520-way class space, label derivation, and the
effect-chain renderer.

A configuration is one preset index per effect in the fixed chain order
DN -> DRC -> EQ -> DS -> RVB -> LIM (index 0 = bypass). Class ids are the
mixed-radix encoding of those indices with radices (3, 5, 7, 3, 4, 2),
DN most significant, which makes the raveled index of a (3,5,7,3,4,2)
array coincide with the class id.
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .audio import Waveform
from .effects import (
    CompressorParams,
    DeEsserParams,
    EqBand,
    GateParams,
    LimiterParams,
    ReverbParams,
    compressor,
    de_esser,
    equalizer,
    limiter,
    noise_gate,
    reverb,
)

EFFECTS = ("DN", "DRC", "EQ", "DS", "RVB", "LIM")
PRESET_COUNTS = (3, 5, 7, 3, 4, 2)  # per-effect list sizes, bypass included
TOTAL_CLASSES = 2520  # product of PRESET_COUNTS


@dataclass(frozen=True)
class EffectSlot:
    effect: str
    preset_index: int  # 0 = bypass, up to len(bank list) - 1

    def __post_init__(self):
        if self.effect not in EFFECTS:
            raise ValueError(f"unknown effect {self.effect!r}")
        limit = PRESET_COUNTS[EFFECTS.index(self.effect)]
        if not 0 <= self.preset_index < limit:
            raise ValueError(
                f"{self.effect} preset index {self.preset_index} outside [0, {limit})")


@dataclass(frozen=True)
class PresetTuple:
    """One preset index per effect, chain order."""

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) != len(EFFECTS):
            raise ValueError(f"expected {len(EFFECTS)} indices, got {len(idx)}")
        for effect, k, size in zip(EFFECTS, idx, PRESET_COUNTS):
            if not 0 <= k < size:
                raise ValueError(f"{effect} index {k} outside [0, {size})")
        object.__setattr__(self, "indices", idx)

    def slots(self):
        return tuple(EffectSlot(e, k) for e, k in zip(EFFECTS, self.indices))

    def index_for(self, effect: str) -> int:
        return self.indices[EFFECTS.index(effect)]


@dataclass(frozen=True)
class LabelSet:
    """Every supervision granularity derived from one PresetTuple."""

    presence: tuple  # six 0/1 flags
    class_id: int
    active_count: int
    intensity_scalar: float
    intensity_vector: tuple  # six values in [0, 1]


def class_of(p: PresetTuple) -> int:
    cid = 0
    for k, size in zip(p.indices, PRESET_COUNTS):
        cid = cid * size + k
    return cid


def tuple_from_class(class_id: int) -> PresetTuple:
    if not 0 <= class_id < TOTAL_CLASSES:
        raise ValueError(f"class_id {class_id} outside [0, {TOTAL_CLASSES})")
    indices = []
    rem = class_id
    for size in reversed(PRESET_COUNTS):
        indices.append(rem % size)
        rem //= size
    return PresetTuple(tuple(reversed(indices)))


def labels_of(p: PresetTuple) -> LabelSet:
    presence = tuple(1 if k > 0 else 0 for k in p.indices)
    intensity = tuple(k / (size - 1) for k, size in zip(p.indices, PRESET_COUNTS))
    return LabelSet(
        presence=presence,
        class_id=class_of(p),
        active_count=sum(presence),
        intensity_scalar=sum(intensity) / len(intensity),
        intensity_vector=intensity,
    )


# ---------------------------------------------------------------------------
# Bank file
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Preset:
    name: str
    params: object  # effect parameter object; None for bypass


@dataclass(frozen=True)
class PresetBank:
    """Ordered preset lists per effect, parsed from a versioned bank file."""

    version: int
    presets: dict  # effect -> tuple[Preset, ...]
    content_hash: str  # sha256 of the bank file bytes

    def sizes(self):
        return tuple(len(self.presets[e]) for e in EFFECTS)

    def preset_for(self, slot: EffectSlot) -> Preset:
        return self.presets[slot.effect][slot.preset_index]


class BankFormatError(Exception):
    """Raised when a bank file does not satisfy the bank schema."""


def _parse_preset(effect: str, entry) -> Preset:
    if entry == "bypass":
        return Preset(name="bypass", params=None)
    if not isinstance(entry, dict) or "name" not in entry:
        raise BankFormatError(f"{effect}: preset entries must be 'bypass' or a named mapping")
    fields = {k: v for k, v in entry.items() if k != "name"}
    try:
        if effect == "DN":
            params = GateParams(**fields)
        elif effect == "DRC":
            params = CompressorParams(**fields)
        elif effect == "EQ":
            params = tuple(EqBand(**band) for band in fields.pop("bands"))
            if fields:
                raise TypeError(f"unexpected keys {sorted(fields)}")
        elif effect == "DS":
            params = DeEsserParams(**fields)
        elif effect == "RVB":
            params = ReverbParams(**fields)
        elif effect == "LIM":
            params = LimiterParams(**fields)
        else:
            raise BankFormatError(f"unknown effect {effect!r} in bank file")
    except (TypeError, ValueError, KeyError) as exc:
        raise BankFormatError(f"{effect}/{entry.get('name')}: {exc}") from exc
    return Preset(name=entry["name"], params=params)


def load_bank(path) -> PresetBank:
    """Parse and validate a bank file; sizes must be exactly (3,5,7,3,4,2)."""
    raw = Path(path).read_bytes()
    return _bank_from_bytes(raw)


def _bank_from_bytes(raw: bytes) -> PresetBank:
    doc = yaml.safe_load(raw)
    if not isinstance(doc, dict) or "version" not in doc or "effects" not in doc:
        raise BankFormatError("bank file needs 'version' and 'effects' keys")
    presets = {}
    for effect in EFFECTS:
        entries = doc["effects"].get(effect)
        if not isinstance(entries, list):
            raise BankFormatError(f"bank file missing preset list for {effect}")
        parsed = tuple(_parse_preset(effect, e) for e in entries)
        if parsed[0].params is not None:
            raise BankFormatError(f"{effect}: index 0 must be bypass")
        expected = PRESET_COUNTS[EFFECTS.index(effect)]
        if len(parsed) != expected:
            raise BankFormatError(
                f"{effect}: expected {expected} presets (bypass included), got {len(parsed)}")
        presets[effect] = parsed
    return PresetBank(
        version=int(doc["version"]),
        presets=presets,
        content_hash=hashlib.sha256(raw).hexdigest(),
    )


@functools.lru_cache(maxsize=1)
def default_bank() -> PresetBank:
    """The bank shipped with the package."""
    raw = resources.files("speechfx").joinpath("data/preset_bank.yaml").read_bytes()
    return _bank_from_bytes(raw)


# ---------------------------------------------------------------------------
# Renderer
# ---------------------------------------------------------------------------

_PROCESSORS = {
    "DN": noise_gate,
    "DRC": compressor,
    "EQ": equalizer,
    "DS": de_esser,
    "RVB": reverb,
    "LIM": limiter,
}


def render_chain(x: Waveform, p: PresetTuple, bank: PresetBank | None = None) -> Waveform:
    """Apply the non-bypass slots of ``p`` in chain order.

    Fresh processor state per call; safe to run in parallel over items.
    An all-bypass tuple returns the input unchanged.
    """
    bank = bank if bank is not None else default_bank()
    out = x
    for slot in p.slots():
        if slot.preset_index == 0:
            continue
        params = bank.preset_for(slot).params
        out = _PROCESSORS[slot.effect](out, params)
    return out

"""speechfx: deterministic speech effect-chain rendering and evaluation toolkit."""

__version__ = "0.1.0"

from .audio import (
    CANONICAL_RATE_HZ,
    LevelMeasure,
    Waveform,
    measure_levels,
    read_wav,
    resample,
    write_wav,
)

__all__ = [
    "CANONICAL_RATE_HZ",
    "LevelMeasure",
    "Waveform",
    "measure_levels",
    "read_wav",
    "resample",
    "write_wav",
    "__version__",
]

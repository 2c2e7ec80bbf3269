"""Lightweight multi-task probe: hand-crafted acoustic features and linear
heads trained by plain mini-batch gradient descent.

The probe exists to exercise the full benchmark loop (render -> features
-> five task heads -> prediction files -> scoring) at desk scale. The
preset head is slot-factorized: six per-effect classifiers whose log
probabilities are summed over all 2520 tuples for Top-1/Top-5, keeping
the scoring interface identical to a flat classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform, measure_levels
from .evaluation import PredictionRecord
from .presets import EFFECTS, PRESET_COUNTS

FORMAT_VERSION = 1

FRAME_S = 0.025
HOP_S = 0.010
N_FFT = 512
N_MELS = 40
MIN_DURATION_S = 0.2

LOG_FLOOR = 1e-10

# log-mel mean/std + flux mean/std + crest + rms + peak + noise floor
# + high-band ratio + near-peak density + pinned-frame fraction
FEATURE_DIM = 2 * N_MELS + 2 + 7


class ProbeDivergenceError(Exception):
    """Training produced a non-finite loss."""


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def _mel_filterbank(sample_rate_hz: int) -> np.ndarray:
    n_bins = N_FFT // 2 + 1
    freqs = np.linspace(0.0, sample_rate_hz / 2.0, n_bins)
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate_hz / 2.0), N_MELS + 2))
    bank = np.zeros((N_MELS, n_bins))
    for m in range(N_MELS):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / max(center - lo, 1e-9)
        down = (hi - freqs) / max(hi - center, 1e-9)
        bank[m] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def extract_features(w: Waveform) -> np.ndarray:
    """Fixed-length feature vector; deterministic, 25 ms frames, 10 ms hop."""
    if w.duration_s < MIN_DURATION_S:
        raise ValueError(f"input too short: {w.duration_s:.3f} s < {MIN_DURATION_S} s")
    x = w.samples.astype(np.float64)
    frame = int(round(FRAME_S * w.sample_rate_hz))
    hop = int(round(HOP_S * w.sample_rate_hz))
    n_frames = 1 + (len(x) - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(frame)[None, :]

    spectra = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1))
    power = spectra ** 2

    mel = power @ _mel_filterbank(w.sample_rate_hz).T
    log_mel = np.log10(mel + LOG_FLOOR)

    flux = np.sqrt(np.sum(np.square(np.clip(np.diff(spectra, axis=0), 0.0, None)), axis=1))
    if flux.size == 0:
        flux = np.zeros(1)

    levels = measure_levels(w)
    frame_rms_db = 10.0 * np.log10(np.mean(np.square(frames), axis=1) + LOG_FLOOR)
    noise_floor_db = float(np.percentile(frame_rms_db, 10.0))

    freqs = np.fft.rfftfreq(N_FFT, 1.0 / w.sample_rate_hz)
    total_energy = float(np.sum(power))
    high_band = float(np.sum(power[:, freqs >= 4000.0]))
    high_ratio = high_band / total_energy if total_energy > 0.0 else 0.0

    # ceiling signatures: limited or clipped audio piles samples up against
    # its peak, and pins the maxima of many frames at the same level
    peak_lin = float(np.max(np.abs(x))) if len(x) else 0.0
    if peak_lin > 0.0:
        near_peak = float(np.mean(np.abs(x) >= peak_lin * 10.0 ** (-0.5 / 20.0)))
        frame_peaks = np.max(np.abs(x[idx]), axis=1)
        pinned = float(np.mean(frame_peaks >= peak_lin * 10.0 ** (-0.2 / 20.0)))
    else:
        near_peak = 0.0
        pinned = 0.0

    return np.concatenate([
        log_mel.mean(axis=0),
        log_mel.std(axis=0),
        [flux.mean(), flux.std()],
        [levels.crest_factor_db, levels.rms_dbfs, levels.peak_dbfs,
         noise_floor_db, high_ratio, near_peak, pinned],
    ])


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

_SLOT_OFFSETS = np.concatenate([[0], np.cumsum(PRESET_COUNTS)])
_N_SLOT_LOGITS = int(_SLOT_OFFSETS[-1])
_N_COUNTS = len(EFFECTS) + 1


@dataclass
class LossWeights:
    presence: float = 5.0
    preset: float = 1.0
    count: float = 1.0
    scalar: float = 1.0
    vector: float = 1.0


@dataclass
class TrainConfig:
    epochs: int = 120
    batch_size: int = 64
    learning_rate: float = 0.05
    weight_decay: float = 1e-4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)


@dataclass
class ProbeModel:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    presence_w: np.ndarray  # (d, 6)
    presence_b: np.ndarray
    slot_w: np.ndarray  # (d, 24): per-effect softmax groups of sizes (3,5,7,3,4,2)
    slot_b: np.ndarray
    count_w: np.ndarray  # (d, 7)
    count_b: np.ndarray
    scalar_w: np.ndarray  # (d,)
    scalar_b: float
    vector_w: np.ndarray  # (d, 6)
    vector_b: np.ndarray
    final_losses: dict = field(default_factory=dict)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feature_mean) / self.feature_std


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


def _bce_with_logits(z, y):
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


def _init_model(dim: int, rng: np.random.Generator) -> ProbeModel:
    def w(*shape):
        return 0.01 * rng.standard_normal(shape)

    return ProbeModel(
        feature_mean=np.zeros(dim),
        feature_std=np.ones(dim),
        presence_w=w(dim, len(EFFECTS)), presence_b=np.zeros(len(EFFECTS)),
        slot_w=w(dim, _N_SLOT_LOGITS), slot_b=np.zeros(_N_SLOT_LOGITS),
        count_w=w(dim, _N_COUNTS), count_b=np.zeros(_N_COUNTS),
        scalar_w=w(dim).reshape(dim), scalar_b=0.0,
        vector_w=w(dim, len(EFFECTS)), vector_b=np.zeros(len(EFFECTS)),
    )


def train_probe(examples, config: TrainConfig | None = None) -> ProbeModel:
    """Fit the linear heads on (feature vector, LabelSet) pairs.

    Mini-batch gradient descent, fixed step, weight decay on active heads
    only. Deterministic for a given config seed. Raises
    ProbeDivergenceError if any monitored loss goes non-finite.
    """
    config = config or TrainConfig()
    lw = config.weights

    features, presence, slots, counts, scalars, vectors = [], [], [], [], [], []
    for vec, labels in examples:
        features.append(np.asarray(vec, dtype=np.float64))
        presence.append(labels.presence)
        indices = []
        rem = labels.class_id
        for size in reversed(PRESET_COUNTS):
            indices.append(rem % size)
            rem //= size
        slots.append(list(reversed(indices)))
        counts.append(labels.active_count)
        scalars.append(labels.intensity_scalar)
        vectors.append(labels.intensity_vector)
    if not features:
        raise ValueError("training stream is empty")

    x = np.stack(features)
    y_pres = np.asarray(presence, dtype=np.float64)
    y_slot = np.asarray(slots, dtype=np.int64)
    y_count = np.asarray(counts, dtype=np.int64)
    y_scalar = np.asarray(scalars, dtype=np.float64)
    y_vec = np.asarray(vectors, dtype=np.float64)
    n, dim = x.shape

    rng = np.random.Generator(np.random.PCG64(config.seed))
    model = _init_model(dim, rng)
    model.feature_mean = x.mean(axis=0)
    model.feature_std = np.maximum(x.std(axis=0), 1e-8)
    xs = model.standardize(x)

    count_onehot = np.eye(_N_COUNTS)[y_count]
    slot_onehot = np.zeros((n, _N_SLOT_LOGITS))
    for e in range(len(EFFECTS)):
        slot_onehot[np.arange(n), _SLOT_OFFSETS[e] + y_slot[:, e]] = 1.0

    lr, wd = config.learning_rate, config.weight_decay
    losses = _task_losses(model, xs, y_pres, slot_onehot, count_onehot,
                          y_scalar, y_vec)
    if not all(np.isfinite(v) for v in losses.values()):
        raise ProbeDivergenceError(
            "non-finite loss at initialization: "
            + ", ".join(f"{k}={v:.4g}" for k, v in losses.items()))
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            xb = xs[batch]
            b = len(batch)

            if lw.presence > 0:
                z = xb @ model.presence_w + model.presence_b
                g = lw.presence * (_sigmoid(z) - y_pres[batch]) / (b * len(EFFECTS))
                model.presence_w -= lr * (xb.T @ g + wd * model.presence_w)
                model.presence_b -= lr * g.sum(axis=0)
            if lw.preset > 0:
                z = xb @ model.slot_w + model.slot_b
                g = np.empty_like(z)
                for e in range(len(EFFECTS)):
                    lo, hi = _SLOT_OFFSETS[e], _SLOT_OFFSETS[e + 1]
                    g[:, lo:hi] = np.exp(_log_softmax(z[:, lo:hi]))
                g = lw.preset * (g - slot_onehot[batch]) / (b * len(EFFECTS))
                model.slot_w -= lr * (xb.T @ g + wd * model.slot_w)
                model.slot_b -= lr * g.sum(axis=0)
            if lw.count > 0:
                z = xb @ model.count_w + model.count_b
                g = lw.count * (np.exp(_log_softmax(z)) - count_onehot[batch]) / b
                model.count_w -= lr * (xb.T @ g + wd * model.count_w)
                model.count_b -= lr * g.sum(axis=0)
            if lw.scalar > 0:
                z = xb @ model.scalar_w + model.scalar_b
                g = lw.scalar * np.sign(z - y_scalar[batch]) / b
                model.scalar_w -= lr * (xb.T @ g + wd * model.scalar_w)
                model.scalar_b -= lr * g.sum()
            if lw.vector > 0:
                z = xb @ model.vector_w + model.vector_b
                g = lw.vector * np.sign(z - y_vec[batch]) / (b * len(EFFECTS))
                model.vector_w -= lr * (xb.T @ g + wd * model.vector_w)
                model.vector_b -= lr * g.sum(axis=0)

        losses = _task_losses(model, xs, y_pres, slot_onehot, count_onehot,
                              y_scalar, y_vec)
        if not all(np.isfinite(v) for v in losses.values()):
            raise ProbeDivergenceError(
                f"non-finite loss at epoch {epoch}: "
                + ", ".join(f"{k}={v:.4g}" for k, v in losses.items()))

    model.final_losses = losses
    return model


def _task_losses(model, xs, y_pres, slot_onehot, count_onehot, y_scalar, y_vec):
    z_pres = xs @ model.presence_w + model.presence_b
    z_slot = xs @ model.slot_w + model.slot_b
    slot_ce = 0.0
    for e in range(len(EFFECTS)):
        lo, hi = _SLOT_OFFSETS[e], _SLOT_OFFSETS[e + 1]
        slot_ce -= float(np.mean(np.sum(slot_onehot[:, lo:hi]
                                        * _log_softmax(z_slot[:, lo:hi]), axis=1)))
    z_count = xs @ model.count_w + model.count_b
    count_ce = -float(np.mean(np.sum(count_onehot * _log_softmax(z_count), axis=1)))
    return {
        "presence": _bce_with_logits(z_pres, y_pres),
        "preset": slot_ce / len(EFFECTS),
        "count": count_ce,
        "scalar": float(np.mean(np.abs(xs @ model.scalar_w + model.scalar_b - y_scalar))),
        "vector": float(np.mean(np.abs(xs @ model.vector_w + model.vector_b - y_vec))),
    }


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def predict_features(model: ProbeModel, features: np.ndarray,
                     utterance_id: str = "", class_id: int = 0,
                     setting: str = "none") -> PredictionRecord:
    """Run the heads on one feature vector; key fields identify the item."""
    xs = model.standardize(np.asarray(features, dtype=np.float64))

    probs = _sigmoid(xs @ model.presence_w + model.presence_b)

    z_slot = xs @ model.slot_w + model.slot_b
    scores = np.zeros(PRESET_COUNTS)
    for e in range(len(EFFECTS)):
        lo, hi = _SLOT_OFFSETS[e], _SLOT_OFFSETS[e + 1]
        lp = _log_softmax(z_slot[None, lo:hi])[0]
        shape = [1] * len(EFFECTS)
        shape[e] = hi - lo
        scores = scores + lp.reshape(shape)
    flat = scores.ravel()  # raveled index == class id by construction
    topk = np.argsort(-flat, kind="stable")[:5]

    count = int(np.argmax(xs @ model.count_w + model.count_b))
    scalar = float(np.clip(xs @ model.scalar_w + model.scalar_b, 0.0, 1.0))
    vector = np.clip(xs @ model.vector_w + model.vector_b, 0.0, 1.0)

    return PredictionRecord(
        utterance_id=utterance_id,
        class_id=class_id,
        setting=setting,
        presence_probs=tuple(float(p) for p in probs),
        preset_topk=tuple(int(c) for c in topk),
        count_pred=count,
        intensity_scalar_pred=scalar,
        intensity_vector_pred=tuple(float(v) for v in vector),
    )


def predict(model: ProbeModel, w: Waveform, utterance_id: str = "",
            class_id: int = 0, setting: str = "none") -> PredictionRecord:
    return predict_features(model, extract_features(w), utterance_id, class_id, setting)


# ---------------------------------------------------------------------------
# Save / load
# ---------------------------------------------------------------------------

def save_model(model: ProbeModel, path, metadata: dict | None = None) -> None:
    import json
    np.savez(path,
             format_version=FORMAT_VERSION,
             metadata=json.dumps(metadata or {}),
             feature_dim=model.feature_mean.shape[0],
             feature_mean=model.feature_mean, feature_std=model.feature_std,
             presence_w=model.presence_w, presence_b=model.presence_b,
             slot_w=model.slot_w, slot_b=model.slot_b,
             count_w=model.count_w, count_b=model.count_b,
             scalar_w=model.scalar_w, scalar_b=model.scalar_b,
             vector_w=model.vector_w, vector_b=model.vector_b)


def load_model(path) -> ProbeModel:
    with np.load(path) as data:
        if int(data["format_version"]) != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {data['format_version']}")
        return ProbeModel(
            feature_mean=data["feature_mean"], feature_std=data["feature_std"],
            presence_w=data["presence_w"], presence_b=data["presence_b"],
            slot_w=data["slot_w"], slot_b=data["slot_b"],
            count_w=data["count_w"], count_b=data["count_b"],
            scalar_w=data["scalar_w"], scalar_b=float(data["scalar_b"]),
            vector_w=data["vector_w"], vector_b=data["vector_b"],
        )

"""Scoring of prediction files against labels, plus the robustness-grid,
duration, and gender analysis helpers.

Accuracies are percentages in [0, 100]; MAEs are raw values. Presence
probabilities are thresholded at 0.5, ties counting as active.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform
from .dataset import LabeledItem, hash_order
from .degrade import SETTINGS
from .presets import EFFECTS, TOTAL_CLASSES, tuple_from_class

PRESENCE_THRESHOLD = 0.5
PREDICTIONS_HEADER = "# speechfx-predictions v1"

DOMAINS = ("id", "ood")


class ScoringError(Exception):
    """Raised for key mismatches or duplicates between predictions and labels."""


@dataclass(frozen=True)
class PredictionRecord:
    utterance_id: str
    class_id: int  # true class id of the item being predicted (key, not output)
    setting: str
    presence_probs: tuple
    preset_topk: tuple
    count_pred: int
    intensity_scalar_pred: float
    intensity_vector_pred: tuple

    def __post_init__(self):
        if len(self.presence_probs) != len(EFFECTS):
            raise ValueError("presence_probs must have six entries")
        if any(not 0.0 <= p <= 1.0 for p in self.presence_probs):
            raise ValueError("presence probabilities must lie in [0, 1]")
        if len(self.preset_topk) < 5:
            raise ValueError("preset_topk must rank at least five class ids")
        if len(set(self.preset_topk)) != len(self.preset_topk):
            raise ValueError("preset_topk ids must be distinct")
        if any(not 0 <= c < TOTAL_CLASSES for c in self.preset_topk):
            raise ValueError("preset_topk contains an invalid class id")
        if not 0 <= self.count_pred <= len(EFFECTS):
            raise ValueError("count_pred outside [0, 6]")

    def item_key(self):
        return (self.utterance_id, self.class_id, self.setting)


@dataclass(frozen=True)
class MetricsReport:
    acc_macro: float
    per_effect_acc: tuple
    emr: float
    top1: float
    top5: float
    acc_num: float
    mae_mean: float
    per_effect_mae: tuple
    mae_overall: float
    n_items: int

    def to_dict(self):
        d = dict(self.__dict__)
        d["per_effect_acc"] = list(self.per_effect_acc)
        d["per_effect_mae"] = list(self.per_effect_mae)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["per_effect_acc"] = tuple(d["per_effect_acc"])
        d["per_effect_mae"] = tuple(d["per_effect_mae"])
        return cls(**d)


def score(predictions, labels) -> MetricsReport:
    """All metrics for one prediction/label set, matched on
    (utterance_id, class_id, setting)."""
    by_key = {}
    for item in labels:
        key = item.item_key()
        if key in by_key:
            raise ScoringError(f"duplicate label key {key}")
        by_key[key] = item.labels

    seen = set()
    probs, presence, topk, class_ids = [], [], [], []
    counts_pred, counts_true = [], []
    scalars_pred, scalars_true = [], []
    vectors_pred, vectors_true = [], []
    # canonical fold order: sorting by key makes the floating-point sums
    # independent of the input permutation
    for pred in sorted(predictions, key=lambda p: p.item_key()):
        key = pred.item_key()
        if key in seen:
            raise ScoringError(f"duplicate prediction key {key}")
        seen.add(key)
        if key not in by_key:
            raise ScoringError(f"prediction key {key} has no matching label")
        lab = by_key[key]
        probs.append(pred.presence_probs)
        presence.append(lab.presence)
        topk.append(pred.preset_topk[:5])
        class_ids.append(lab.class_id)
        counts_pred.append(pred.count_pred)
        counts_true.append(lab.active_count)
        scalars_pred.append(pred.intensity_scalar_pred)
        scalars_true.append(lab.intensity_scalar)
        vectors_pred.append(pred.intensity_vector_pred)
        vectors_true.append(lab.intensity_vector)
    if len(seen) != len(by_key):
        missing = set(by_key) - seen
        raise ScoringError(f"{len(missing)} labels have no prediction, e.g. {next(iter(missing))}")
    if not predictions:
        raise ScoringError("nothing to score")

    probs = np.asarray(probs, dtype=np.float64)
    presence = np.asarray(presence, dtype=np.int64)
    decisions = (probs >= PRESENCE_THRESHOLD).astype(np.int64)
    correct = decisions == presence
    per_effect_acc = correct.mean(axis=0) * 100.0
    emr = np.all(correct, axis=1).mean() * 100.0

    class_ids = np.asarray(class_ids)
    topk = np.asarray(topk)
    top1 = (topk[:, 0] == class_ids).mean() * 100.0
    top5 = (topk == class_ids[:, None]).any(axis=1).mean() * 100.0

    acc_num = (np.asarray(counts_pred) == np.asarray(counts_true)).mean() * 100.0

    mae_overall = np.abs(np.asarray(scalars_pred) - np.asarray(scalars_true)).mean()
    per_effect_mae = np.abs(np.asarray(vectors_pred, dtype=np.float64)
                            - np.asarray(vectors_true, dtype=np.float64)).mean(axis=0)

    return MetricsReport(
        acc_macro=float(per_effect_acc.mean()),
        per_effect_acc=tuple(float(v) for v in per_effect_acc),
        emr=float(emr),
        top1=float(top1),
        top5=float(top5),
        acc_num=float(acc_num),
        mae_mean=float(per_effect_mae.mean()),
        per_effect_mae=tuple(float(v) for v in per_effect_mae),
        mae_overall=float(mae_overall),
        n_items=len(predictions),
    )


def per_effect_preset_top1(predictions, labels) -> tuple:
    """Marginal per-effect preset accuracy: each slot of the top-1 tuple
    scored against the true tuple's slot."""
    by_key = {item.item_key(): item.labels for item in labels}
    hits = np.zeros(len(EFFECTS))
    for pred in predictions:
        true_indices = tuple_from_class(by_key[pred.item_key()].class_id).indices
        pred_indices = tuple_from_class(pred.preset_topk[0]).indices
        hits += np.asarray(pred_indices) == np.asarray(true_indices)
    return tuple(float(v) for v in hits / len(predictions) * 100.0)


# ---------------------------------------------------------------------------
# Robustness grid
# ---------------------------------------------------------------------------

_GRID_COLUMNS = ("acc_macro", "emr", "top1", "top5", "acc_num", "mae_mean", "mae_overall")
_ACCURACY_COLUMNS = set(_GRID_COLUMNS[:5])


@dataclass(frozen=True)
class GridReport:
    """5-row robustness table; each cell holds ID / OOD reports."""

    cells: dict  # (setting, domain) -> MetricsReport

    def render_text(self) -> str:
        header = ["test_setting"] + [f"{c} (ID / OOD)" for c in _GRID_COLUMNS]
        rows = [header]
        for setting in SETTINGS:
            if not any((setting, d) in self.cells for d in DOMAINS):
                continue
            row = [setting]
            for col in _GRID_COLUMNS:
                parts = []
                for domain in DOMAINS:
                    report = self.cells.get((setting, domain))
                    if report is None:
                        parts.append("-")
                    elif col in _ACCURACY_COLUMNS:
                        parts.append(f"{getattr(report, col):.2f}")
                    else:
                        parts.append(f"{getattr(report, col):.3f}")
                row.append(" / ".join(parts))
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
                 for r in rows]
        return "\n".join(lines) + "\n"

    def to_json(self, meta: dict | None = None) -> str:
        doc = {f"{setting}/{domain}": report.to_dict()
               for (setting, domain), report in self.cells.items()}
        if meta:
            doc["_meta"] = meta
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GridReport":
        doc = json.loads(text)
        cells = {}
        for key, value in doc.items():
            if key.startswith("_"):
                continue
            setting, domain = key.split("/")
            cells[(setting, domain)] = MetricsReport.from_dict(value)
        return cls(cells=cells)


def grid_report(runs: dict) -> GridReport:
    for (setting, domain) in runs:
        if setting not in SETTINGS or domain not in DOMAINS:
            raise ValueError(f"unknown grid cell ({setting}, {domain})")
    return GridReport(cells=dict(runs))


# ---------------------------------------------------------------------------
# Analysis protocol helpers
# ---------------------------------------------------------------------------

CROP_DURATIONS_S = (0.2, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)


def crop_for_duration(w: Waveform, duration_s: float, seed: int):
    """Seeded random-start contiguous crop; returns (waveform, cropped flag).
    Inputs shorter than the target are returned unchanged."""
    if duration_s <= 0:
        raise ValueError("duration_s must be > 0")
    target = int(round(duration_s * w.sample_rate_hz))
    if target >= len(w):
        return w, False
    start = int(random.Random(seed).random() * (len(w) - target + 1))
    start = min(start, len(w) - target)
    return Waveform(w.samples[start:start + target], w.sample_rate_hz), True


def subset_by_gender(records, gender: str, count: int, seed: int) -> list:
    """Deterministic subset of records with exactly that gender; records
    with unknown gender are never selected."""
    if gender not in ("female", "male"):
        raise ValueError("gender must be 'female' or 'male'")
    pool = {r.utterance_id: r for r in records if r.gender == gender}
    if len(pool) < count:
        raise ValueError(f"only {len(pool)} {gender} records available, need {count}")
    return [pool[uid] for uid in hash_order(pool, seed)[:count]]


# ---------------------------------------------------------------------------
# Prediction files
# ---------------------------------------------------------------------------

def write_predictions_file(predictions, path, comment: str | None = None) -> None:
    lines = [PREDICTIONS_HEADER]
    if comment:
        lines.append(f"# {comment}")
    lines.append("utterance_id\tclass_id\tsetting\tpresence_probs\tpreset_topk"
                 "\tcount_pred\tintensity_scalar\tintensity_vector")
    for p in predictions:
        lines.append("\t".join([
            p.utterance_id,
            str(p.class_id),
            p.setting,
            ",".join(repr(float(v)) for v in p.presence_probs),
            ",".join(str(c) for c in p.preset_topk),
            str(p.count_pred),
            repr(float(p.intensity_scalar_pred)),
            ",".join(repr(float(v)) for v in p.intensity_vector_pred),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_predictions_file(path) -> list:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != PREDICTIONS_HEADER:
        raise ValueError(f"{path}: not a speechfx predictions file")
    out = []
    for line_no, line in enumerate(text, start=1):
        if line.startswith("#") or line.startswith("utterance_id\t") or not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 8:
            raise ValueError(f"{path}:{line_no}: expected 8 fields, got {len(fields)}")
        try:
            out.append(PredictionRecord(
                utterance_id=fields[0],
                class_id=int(fields[1]),
                setting=fields[2],
                presence_probs=tuple(float(v) for v in fields[3].split(",")),
                preset_topk=tuple(int(v) for v in fields[4].split(",")),
                count_pred=int(fields[5]),
                intensity_scalar_pred=float(fields[6]),
                intensity_vector_pred=tuple(float(v) for v in fields[7].split(",")),
            ))
        except ValueError as exc:
            raise ValueError(f"{path}:{line_no}: {exc}") from exc
    return out

"""Corpus ingestion, deterministic splits, manifests, and item rendering.

A manifest is the complete recipe for a dataset: utterance records, item
specs (utterance x class id x degradation setting x derived seed), and a
header binding the toolkit version, global seed, and preset-bank hash.
Rendering an item from a manifest is bit-deterministic, so the offline
and streaming paths agree exactly and re-synthesis reproduces files
byte-for-byte.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import logging
import multiprocessing
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .audio import CANONICAL_RATE_HZ, EmptyAudioError, Waveform, WavFormatError, read_wav, resample, write_wav
from .degrade import SETTINGS, derive_seed, sample_plan, degraded_render
from .presets import LabelSet, PresetBank, default_bank, labels_of, tuple_from_class

log = logging.getLogger(__name__)

GENDERS = ("female", "male", "unknown")
SPLITS = ("train", "valid", "test", "test_only")

MANIFEST_FORMAT = "speechfx-manifest"
MANIFEST_VERSION = 1
LABELS_HEADER = "# speechfx-labels v1"


class CorpusError(Exception):
    """Raised when a corpus directory cannot supply usable records."""


class BankHashMismatch(Exception):
    """Raised when a manifest was built against a different preset bank.

    Fatal: labels would silently describe the wrong renders.
    """


@dataclass(frozen=True)
class UtteranceRecord:
    utterance_id: str
    corpus: str
    path: str
    duration_s: float
    speaker_id: str
    gender: str = "unknown"
    split: str | None = None

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValueError(f"unknown gender {self.gender!r}")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be > 0")

    def to_dict(self):
        return {
            "utterance_id": self.utterance_id,
            "corpus": self.corpus,
            "path": self.path,
            "duration_s": self.duration_s,
            "speaker_id": self.speaker_id,
            "gender": self.gender,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ItemSpec:
    """Everything needed to re-render one dataset item bit-exactly."""

    utterance_id: str
    class_id: int
    setting: str
    seed: int
    bank_hash: str

    def item_key(self):
        return (self.utterance_id, self.class_id, self.setting)


@dataclass(frozen=True, eq=False)
class Manifest:
    header: dict
    records: tuple
    items: tuple

    def __post_init__(self):
        index = {r.utterance_id: r for r in self.records}
        if len(index) != len(self.records):
            raise ValueError("duplicate utterance ids in manifest")
        object.__setattr__(self, "_by_id", index)

    def record_for(self, utterance_id: str) -> UtteranceRecord:
        return self._by_id[utterance_id]

    def to_json(self) -> str:
        doc = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "header": self.header,
            "records": [r.to_dict() for r in self.records],
            "items": [[i.utterance_id, i.class_id, i.setting, i.seed] for i in self.items],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        doc = json.loads(text)
        if doc.get("format") != MANIFEST_FORMAT:
            raise ValueError("not a speechfx manifest")
        header = doc["header"]
        records = tuple(UtteranceRecord.from_dict(d) for d in doc["records"])
        items = tuple(
            ItemSpec(utterance_id=uid, class_id=cid, setting=setting, seed=seed,
                     bank_hash=header["bank_hash"])
            for uid, cid, setting, seed in doc["items"])
        manifest = cls(header=header, records=records, items=items)
        known = {r.utterance_id for r in records}
        for item in items:
            if item.utterance_id not in known:
                raise ValueError(f"item references unknown utterance {item.utterance_id!r}")
        return manifest

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Manifest":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _infer_speaker(rel_path: Path) -> str:
    if len(rel_path.parts) > 1:
        return rel_path.parts[0]
    stem = rel_path.stem
    return stem.split("_")[0] if "_" in stem else stem


def _load_gender_table(metadata) -> dict:
    if metadata is None:
        return {}
    if isinstance(metadata, dict):
        table = dict(metadata)
    else:
        table = {}
        with open(metadata, newline="") as fh:
            for row in csv.reader(fh):
                if len(row) >= 2 and row[0].strip() and row[0].strip() != "speaker_id":
                    table[row[0].strip()] = row[1].strip()
    for speaker, gender in table.items():
        if gender not in GENDERS:
            raise ValueError(f"metadata gender {gender!r} for {speaker!r} "
                             f"must be one of {GENDERS}")
    return table


def ingest_corpus(root, corpus_name: str, metadata=None) -> list:
    """Scan a directory tree of WAV files into UtteranceRecords.

    Durations are measured from the audio; unreadable or empty files are
    logged and skipped. ``metadata`` maps speaker ids to genders (a dict
    or a two-column CSV path); speakers not listed stay 'unknown'.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} is not a directory")
    gender_table = _load_gender_table(metadata)

    records = []
    for path in sorted(root.rglob("*.wav")):
        rel = path.relative_to(root)
        try:
            w = read_wav(path)
        except (WavFormatError, EmptyAudioError) as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        speaker = _infer_speaker(rel)
        records.append(UtteranceRecord(
            utterance_id=f"{corpus_name}:{rel.with_suffix('').as_posix()}",
            corpus=corpus_name,
            path=str(path),
            duration_s=len(w) / w.sample_rate_hz,
            speaker_id=speaker,
            gender=gender_table.get(speaker, "unknown"),
        ))
    if not records:
        raise CorpusError(f"no readable WAV files under {root}")
    return records


# ---------------------------------------------------------------------------
# Splits and subset selection
# ---------------------------------------------------------------------------

def _shuffle_key(seed, value) -> str:
    return hashlib.blake2b(f"{seed}:{value}".encode("utf-8"), digest_size=16).hexdigest()


def hash_order(values, seed):
    """Deterministic pseudo-random order, stable across platforms."""
    return sorted(values, key=lambda v: _shuffle_key(seed, v))


def make_splits(records, ratios=(8, 1, 1), seed: int = 0, test_only_corpora=(),
                speaker_disjoint: bool = False) -> list:
    """Assign train/valid/test per corpus, as close to the ratios as integer
    rounding allows: valid and test get round(N * r / total) each, train
    absorbs the remainder, keeping every split within one record of its
    exact share. Corpora named in ``test_only_corpora`` go entirely to the
    'test_only' split.

    With ``speaker_disjoint`` the unit of assignment is the speaker, so no
    speaker spans two splits; proportions are then only as close as whole
    speakers allow.
    """
    test_only = set(test_only_corpora)
    by_corpus = {}
    for rec in records:
        by_corpus.setdefault(rec.corpus, []).append(rec)

    total = sum(ratios)
    out = {}
    for corpus, recs in by_corpus.items():
        if corpus in test_only:
            for rec in recs:
                out[rec.utterance_id] = "test_only"
            continue
        if len(recs) < 10:
            raise CorpusError(f"corpus {corpus!r} has {len(recs)} records; "
                              "need at least 10 to split 8:1:1")
        n = len(recs)
        n_valid = int(n * ratios[1] / total + 0.5)
        n_test = int(n * ratios[2] / total + 0.5)

        if speaker_disjoint:
            by_speaker = {}
            for rec in recs:
                by_speaker.setdefault(rec.speaker_id, []).append(rec.utterance_id)
            filled = {"valid": 0, "test": 0}
            for speaker in hash_order(by_speaker, seed):
                uids = by_speaker[speaker]
                if filled["valid"] < n_valid:
                    split = "valid"
                elif filled["test"] < n_test:
                    split = "test"
                else:
                    split = "train"
                if split in filled:
                    filled[split] += len(uids)
                for uid in uids:
                    out[uid] = split
        else:
            ordered = hash_order([r.utterance_id for r in recs], seed)
            for uid in ordered[:n_valid]:
                out[uid] = "valid"
            for uid in ordered[n_valid:n_valid + n_test]:
                out[uid] = "test"
            for uid in ordered[n_valid + n_test:]:
                out[uid] = "train"

    return [replace(rec, split=out[rec.utterance_id]) for rec in records]


def select_eval_subset(records, per_corpus: int, seed: int) -> list:
    """Fixed seeded evaluation subset: ``per_corpus`` utterances from each
    corpus, picked by deterministic hash order."""
    by_corpus = {}
    for rec in records:
        by_corpus.setdefault(rec.corpus, []).append(rec)
    chosen = []
    for corpus in sorted(by_corpus):
        recs = {r.utterance_id: r for r in by_corpus[corpus]}
        if len(recs) < per_corpus:
            raise CorpusError(f"corpus {corpus!r} has only {len(recs)} records, "
                              f"need {per_corpus}")
        for uid in hash_order(recs, seed)[:per_corpus]:
            chosen.append(recs[uid])
    return chosen


# ---------------------------------------------------------------------------
# Manifest construction
# ---------------------------------------------------------------------------

def build_manifest(records, sampling: str, settings, seed: int,
                   tuples_per_utterance: int | None = None,
                   bank: PresetBank | None = None) -> Manifest:
    """Pair utterances with class ids and settings into a manifest.

    sampling='exhaustive_grid' pairs every record with all 2520 class ids;
    sampling='random_tuples' draws ``tuples_per_utterance`` distinct class
    ids per utterance from a seed derived per utterance.
    """
    bank = bank if bank is not None else default_bank()
    for setting in settings:
        if setting not in SETTINGS:
            raise ValueError(f"unknown setting {setting!r}")
    if sampling not in ("exhaustive_grid", "random_tuples"):
        raise ValueError(f"unknown sampling mode {sampling!r}")
    if sampling == "random_tuples" and not tuples_per_utterance:
        raise ValueError("random_tuples needs tuples_per_utterance")

    from .presets import TOTAL_CLASSES
    import random as _random

    items = []
    for rec in records:
        if sampling == "exhaustive_grid":
            class_ids = range(TOTAL_CLASSES)
        else:
            r = _random.Random(derive_seed(seed, "tuples", rec.utterance_id))
            drawn = []
            seen = set()
            while len(drawn) < tuples_per_utterance:
                cid = min(int(r.random() * TOTAL_CLASSES), TOTAL_CLASSES - 1)
                if cid not in seen:
                    seen.add(cid)
                    drawn.append(cid)
            class_ids = drawn
        for cid in class_ids:
            for setting in settings:
                items.append(ItemSpec(
                    utterance_id=rec.utterance_id,
                    class_id=cid,
                    setting=setting,
                    seed=derive_seed(seed, rec.utterance_id, cid, setting),
                    bank_hash=bank.content_hash,
                ))

    header = {
        "toolkit_version": __version__,
        "bank_hash": bank.content_hash,
        "global_seed": seed,
        "sample_rate_hz": CANONICAL_RATE_HZ,
    }
    return Manifest(header=header, records=tuple(records), items=tuple(items))


# ---------------------------------------------------------------------------
# Rendering items
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _load_source(path: str, rate: int) -> Waveform:
    return resample(read_wav(path), rate)


def materialize(spec: ItemSpec, manifest: Manifest,
                bank: PresetBank | None = None):
    """Render one item: load, resample, degraded render, labels.

    Repeated calls are bit-identical. Raises BankHashMismatch if the bank
    does not match the manifest header.
    """
    bank = bank if bank is not None else default_bank()
    if bank.content_hash != spec.bank_hash:
        raise BankHashMismatch(
            f"manifest items were built against bank {spec.bank_hash[:12]}..., "
            f"loaded bank is {bank.content_hash[:12]}...")
    record = manifest.record_for(spec.utterance_id)
    source = _load_source(record.path, manifest.header["sample_rate_hz"])
    plan = sample_plan(spec.setting, spec.seed)
    rendered = degraded_render(source, tuple_from_class(spec.class_id), plan, bank)
    return rendered, labels_of(tuple_from_class(spec.class_id))


def item_filename(spec: ItemSpec) -> str:
    safe_uid = spec.utterance_id.replace("/", "-").replace(":", "-")
    return f"{safe_uid}__{spec.class_id:04d}__{spec.setting}.wav"


# ---------------------------------------------------------------------------
# Labels file
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledItem:
    utterance_id: str
    setting: str
    labels: LabelSet
    seed: int = 0

    def item_key(self):
        return (self.utterance_id, self.labels.class_id, self.setting)


def write_labels_file(manifest: Manifest, path) -> None:
    lines = [LABELS_HEADER,
             "# toolkit_version={} bank_hash={} global_seed={}".format(
                 manifest.header["toolkit_version"], manifest.header["bank_hash"],
                 manifest.header["global_seed"]),
             "utterance_id\tclass_id\tsetting\tpresence\tactive_count"
             "\tintensity_scalar\tintensity_vector\tseed"]
    for spec in manifest.items:
        labels = labels_of(tuple_from_class(spec.class_id))
        lines.append("\t".join([
            spec.utterance_id,
            str(spec.class_id),
            spec.setting,
            "".join(str(b) for b in labels.presence),
            str(labels.active_count),
            repr(labels.intensity_scalar),
            ",".join(repr(v) for v in labels.intensity_vector),
            str(spec.seed),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_labels_file(path) -> list:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != LABELS_HEADER:
        raise ValueError(f"{path}: not a speechfx labels file")
    out = []
    for line_no, line in enumerate(text, start=1):
        if line.startswith("#") or line.startswith("utterance_id\t") or not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 8:
            raise ValueError(f"{path}:{line_no}: expected 8 fields, got {len(fields)}")
        uid, cid, setting, presence, count, scalar, vector, seed = fields
        labels = LabelSet(
            presence=tuple(int(c) for c in presence),
            class_id=int(cid),
            active_count=int(count),
            intensity_scalar=float(scalar),
            intensity_vector=tuple(float(v) for v in vector.split(",")),
        )
        out.append(LabeledItem(utterance_id=uid, setting=setting,
                               labels=labels, seed=int(seed)))
    return out


# ---------------------------------------------------------------------------
# Offline synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthesisSummary:
    items_written: int
    failures: tuple  # (item key, error message)


_WORKER_STATE = {}


def _synth_init(manifest_json: str, bit_depth, bank):
    _WORKER_STATE["manifest"] = Manifest.from_json(manifest_json)
    _WORKER_STATE["bit_depth"] = bit_depth
    _WORKER_STATE["bank"] = bank


def _synth_one(args):
    index, out_path = args
    manifest = _WORKER_STATE["manifest"]
    spec = manifest.items[index]
    try:
        rendered, _ = materialize(spec, manifest, _WORKER_STATE["bank"])
        write_wav(rendered, out_path, _WORKER_STATE["bit_depth"])
        return None
    except Exception as exc:  # per-item failures are collected, not fatal
        return (spec.item_key(), str(exc))


def synthesize_offline(manifest: Manifest, out_dir, parallelism: int = 1,
                       bit_depth="float32",
                       bank: PresetBank | None = None) -> SynthesisSummary:
    """Write one WAV per item plus labels.tsv and the manifest itself.

    Output bytes are independent of worker count and scheduling order.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from exc

    # bank mismatches should fail up front, not per item
    bank = bank if bank is not None else default_bank()
    if manifest.items and manifest.items[0].bank_hash != bank.content_hash:
        raise BankHashMismatch("manifest bank hash does not match the loaded bank")

    tasks = [(i, str(out_dir / item_filename(spec)))
             for i, spec in enumerate(manifest.items)]
    manifest_json = manifest.to_json()

    failures = []
    if parallelism <= 1:
        _synth_init(manifest_json, bit_depth, bank)
        results = map(_synth_one, tasks)
        failures = [r for r in results if r is not None]
    else:
        ctx = multiprocessing.get_context()
        with ctx.Pool(parallelism, initializer=_synth_init,
                      initargs=(manifest_json, bit_depth, bank)) as pool:
            for result in pool.imap_unordered(_synth_one, tasks, chunksize=8):
                if result is not None:
                    failures.append(result)
    failures.sort()

    manifest.save(out_dir / "manifest.json")
    write_labels_file(manifest, out_dir / "labels.tsv")
    return SynthesisSummary(items_written=len(tasks) - len(failures),
                            failures=tuple(failures))


# ---------------------------------------------------------------------------
# Streaming
# ---------------------------------------------------------------------------

def stream(manifest: Manifest, split_filter=None, shuffle_seed: int | None = None,
           bank: PresetBank | None = None):
    """Lazily render (ItemSpec, Waveform, LabelSet) triples.

    ``split_filter`` keeps only items whose utterance is in those splits;
    ``shuffle_seed`` fixes a deterministic order (None keeps manifest
    order). Render failures surface through the iterator.
    """
    splits = set(split_filter) if split_filter is not None else None
    indices = [i for i, spec in enumerate(manifest.items)
               if splits is None or manifest.record_for(spec.utterance_id).split in splits]
    if shuffle_seed is not None:
        indices = hash_order(indices, shuffle_seed)
    for i in indices:
        spec = manifest.items[i]
        rendered, labels = materialize(spec, manifest, bank)
        yield spec, rendered, labels

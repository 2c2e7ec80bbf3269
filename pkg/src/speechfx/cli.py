"""Command-line entry point.

Subcommands cover the full pipeline: preset-bank inspection, single-file
rendering, dataset synthesis, streaming stats, probe training and
prediction, metric scoring with grid accumulation, and the duration and
gender analysis protocols.

Configuration: flags only, or a YAML config file (--config, or the
SPEECHFX_CONFIG env var) holding per-command defaults; explicit flags
override the file.

Exit codes: 0 success, 2 validation failure (bad arguments, missing
paths), 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .audio import CANONICAL_RATE_HZ, measure_levels, read_wav, resample, write_wav
from .dataset import (
    Manifest,
    build_manifest,
    ingest_corpus,
    make_splits,
    materialize,
    read_labels_file,
    select_eval_subset,
    stream,
    synthesize_offline,
    write_labels_file,
)
from .degrade import SETTINGS, derive_seed, sample_plan, degraded_render
from .evaluation import (
    CROP_DURATIONS_S,
    DOMAINS,
    GridReport,
    crop_for_duration,
    grid_report,
    read_predictions_file,
    score,
    subset_by_gender,
    write_predictions_file,
)
from .presets import EFFECTS, PresetTuple, class_of, default_bank, labels_of, load_bank, tuple_from_class
from .probe import TrainConfig, LossWeights, extract_features, load_model, predict_features, save_model, train_probe


class CliError(Exception):
    """Validation failure; exits with status 2 before any work starts."""


def _require_file(path, what):
    if not Path(path).is_file():
        raise CliError(f"{what} {path} does not exist")
    return Path(path)


def _stamp(bank=None):
    bank = bank if bank is not None else default_bank()
    return f"toolkit_version={__version__} bank_hash={bank.content_hash}"


def _bank_from_args(args):
    path = getattr(args, "bank", None)
    if path is None:
        return default_bank()
    return load_bank(_require_file(path, "bank file"))


def _parse_corpora(values):
    corpora = []
    for value in values:
        if "=" not in value:
            raise CliError(f"--corpus wants NAME=DIR, got {value!r}")
        name, root = value.split("=", 1)
        if not Path(root).is_dir():
            raise CliError(f"corpus directory {root} does not exist")
        corpora.append((name, Path(root)))
    return corpora


def _ingest_all(args):
    corpora = _parse_corpora(args.corpus)
    records = []
    for name, root in corpora:
        records.extend(ingest_corpus(root, name, metadata=args.metadata))
    return make_splits(records, seed=args.seed,
                       test_only_corpora=set(args.test_only or []))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_presets(args):
    bank = _bank_from_args(args)
    if args.action == "hash":
        print(bank.content_hash)
        return 0
    if args.action == "list":
        print(f"preset bank v{bank.version}  hash {bank.content_hash[:16]}...")
        for effect in EFFECTS:
            names = [p.name for p in bank.presets[effect]]
            print(f"  {effect}: {len(names)} presets ({', '.join(names)})")
        print(f"total classes: {int(np.prod(bank.sizes()))}")
        return 0
    effect = args.effect
    if effect not in EFFECTS:
        raise CliError(f"unknown effect {effect!r}; pick one of {', '.join(EFFECTS)}")
    for k, preset in enumerate(bank.presets[effect]):
        print(f"{effect}[{k}] {preset.name}: {preset.params}")
    return 0


def cmd_render(args):
    _require_file(args.input, "input wav")
    per_effect = [args.dn, args.drc, args.eq, args.ds, args.rvb, args.lim]
    if any(v is not None for v in per_effect):
        indices = tuple(v if v is not None else 0 for v in per_effect)
        p = PresetTuple(indices)
    elif args.class_id is not None:
        p = tuple_from_class(args.class_id)
    else:
        raise CliError("pass --class-id or per-effect indices (--dn/--drc/...)")

    bank = _bank_from_args(args)
    source = resample(read_wav(args.input), CANONICAL_RATE_HZ)
    seed = derive_seed(args.seed, Path(args.input).name, class_of(p), args.setting)
    plan = sample_plan(args.setting, seed)
    rendered = degraded_render(source, p, plan, bank)
    clipped = write_wav(rendered, args.output, args.bit_depth)
    if clipped:
        print(f"warning: {clipped} samples clipped at {args.bit_depth}-bit",
              file=sys.stderr)

    labels = labels_of(p)
    sidecar = {
        "toolkit_version": __version__,
        "bank_hash": bank.content_hash,
        "global_seed": args.seed,
        "item_seed": seed,
        "setting": args.setting,
        "class_id": labels.class_id,
        "presence": list(labels.presence),
        "active_count": labels.active_count,
        "intensity_scalar": labels.intensity_scalar,
        "intensity_vector": list(labels.intensity_vector),
        "plan": plan.to_dict(),
    }
    Path(str(args.output) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(f"wrote {args.output} (class {labels.class_id}, setting {args.setting})")
    return 0


def cmd_synth(args):
    records = _ingest_all(args)
    if args.subset_per_corpus:
        records = select_eval_subset(records, args.subset_per_corpus, args.seed)
    settings = args.settings.split(",")
    bank = _bank_from_args(args)
    manifest = build_manifest(records, args.sampling, settings, args.seed,
                              tuples_per_utterance=args.tuples_per_utterance,
                              bank=bank)
    out = Path(args.out)
    if args.labels_only:
        out.mkdir(parents=True, exist_ok=True)
        manifest.save(out / "manifest.json")
        write_labels_file(manifest, out / "labels.tsv")
        print(f"{len(manifest.items)} items described in {out}/manifest.json "
              f"and {out}/labels.tsv (no audio rendered)")
        return 0
    summary = synthesize_offline(manifest, out, parallelism=args.jobs,
                                 bit_depth=args.bit_depth, bank=bank)
    print(f"wrote {summary.items_written} items to {out} "
          f"({len(manifest.records)} utterances, settings {settings})")
    if summary.failures:
        for key, message in summary.failures:
            print(f"failed {key}: {message}", file=sys.stderr)
        return 1
    return 0


def cmd_stats(args):
    manifest = Manifest.load(_require_file(args.manifest, "manifest"))
    print(f"manifest: {len(manifest.records)} utterances, {len(manifest.items)} items")
    print(f"header: {manifest.header}")
    by_split = {}
    for rec in manifest.records:
        by_split[rec.split] = by_split.get(rec.split, 0) + 1
    print(f"records by split: {by_split}")
    by_setting = {}
    for item in manifest.items:
        by_setting[item.setting] = by_setting.get(item.setting, 0) + 1
    print(f"items by setting: {by_setting}")
    if args.probe_items:
        rms, peak = [], []
        for spec, rendered, _ in stream(manifest, shuffle_seed=0,
                                        bank=_bank_from_args(args)):
            m = measure_levels(rendered)
            rms.append(m.rms_dbfs)
            peak.append(m.peak_dbfs)
            if len(rms) >= args.probe_items:
                break
        print(f"streamed {len(rms)} items: "
              f"mean rms {np.mean(rms):.1f} dBFS, mean peak {np.mean(peak):.1f} dBFS")
    return 0


def _train_config(args):
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.learning_rate, weight_decay=args.weight_decay,
        seed=args.seed,
        weights=LossWeights(presence=args.presence_weight),
    )


def cmd_train(args):
    manifest = Manifest.load(_require_file(args.manifest, "manifest"))
    settings = set(args.settings.split(",")) if args.settings else None
    examples = []
    for spec, rendered, labels in stream(manifest, split_filter=set(args.split.split(",")),
                                         bank=_bank_from_args(args)):
        if settings and spec.setting not in settings:
            continue
        examples.append((extract_features(rendered), labels))
    model = train_probe(examples, _train_config(args))
    save_model(model, args.out, metadata={
        "toolkit_version": __version__,
        "bank_hash": manifest.header["bank_hash"],
        "global_seed": manifest.header["global_seed"],
        "train_seed": args.seed,
    })
    losses = ", ".join(f"{k}={v:.4f}" for k, v in model.final_losses.items())
    print(f"trained on {len(examples)} items; final losses: {losses}")
    print(f"model saved to {args.out}")
    return 0


def cmd_predict(args):
    manifest = Manifest.load(_require_file(args.manifest, "manifest"))
    model = load_model(_require_file(args.model, "model"))
    settings = set(args.settings.split(",")) if args.settings else None
    predictions = []
    for spec, rendered, _ in stream(manifest, split_filter=set(args.split.split(",")),
                                    bank=_bank_from_args(args)):
        if settings and spec.setting not in settings:
            continue
        predictions.append(predict_features(
            model, extract_features(rendered),
            utterance_id=spec.utterance_id, class_id=spec.class_id,
            setting=spec.setting))
    comment = f"{_stamp()} global_seed={manifest.header['global_seed']}"
    write_predictions_file(predictions, args.out, comment=comment)
    print(f"wrote {len(predictions)} predictions to {args.out}")
    return 0


def _print_report(report):
    print(f"n_items:    {report.n_items}")
    print(f"acc_macro:  {report.acc_macro:.2f}")
    per_effect = "  ".join(f"{e}={v:.2f}" for e, v in zip(EFFECTS, report.per_effect_acc))
    print(f"per-effect: {per_effect}")
    print(f"emr:        {report.emr:.2f}")
    print(f"top1/top5:  {report.top1:.2f} / {report.top5:.2f}")
    print(f"acc_num:    {report.acc_num:.2f}")
    print(f"mae_mean:   {report.mae_mean:.4f}")
    print(f"mae_overall:{report.mae_overall:.4f}")


def cmd_eval(args):
    predictions = read_predictions_file(_require_file(args.predictions, "predictions file"))
    labels = read_labels_file(_require_file(args.labels, "labels file"))
    report = score(predictions, labels)
    _print_report(report)

    if args.grid_cell:
        setting, domain = args.grid_cell
        if setting not in SETTINGS or domain not in DOMAINS:
            raise CliError(f"--grid-cell wants SETTING DOMAIN from {SETTINGS} x {DOMAINS}")
        if not args.grid_file:
            raise CliError("--grid-cell needs --grid-file to accumulate into")
        grid_path = Path(args.grid_file)
        grid = (GridReport.from_json(grid_path.read_text())
                if grid_path.exists() else GridReport(cells={}))
        cells = dict(grid.cells)
        cells[(setting, domain)] = report
        grid = grid_report(cells)
        grid_path.write_text(grid.to_json(meta={"stamp": _stamp()}))
        print(f"grid cell {setting}/{domain} stored in {grid_path}")
    if args.show_grid:
        if not args.grid_file or not Path(args.grid_file).exists():
            raise CliError("--show-grid needs an existing --grid-file")
        print(GridReport.from_json(Path(args.grid_file).read_text()).render_text())
    return 0


def cmd_analyze_duration(args):
    manifest = Manifest.load(_require_file(args.manifest, "manifest"))
    model = load_model(_require_file(args.model, "model"))
    settings = set(args.settings.split(",")) if args.settings else None

    rendered_items = []
    for spec, rendered, labels in stream(manifest, split_filter=set(args.split.split(",")),
                                         bank=_bank_from_args(args)):
        if settings and spec.setting not in settings:
            continue
        rendered_items.append((spec, rendered, labels))
    if not rendered_items:
        raise CliError("no items matched the split/setting filters")

    from .dataset import LabeledItem
    print("duration_s\tacc_macro\temr\tn_items")
    for duration in CROP_DURATIONS_S:
        predictions, labels = [], []
        for spec, rendered, label_set in rendered_items:
            cropped, _ = crop_for_duration(rendered, duration,
                                           seed=derive_seed(spec.seed, duration))
            predictions.append(predict_features(
                model, extract_features(cropped),
                utterance_id=spec.utterance_id, class_id=spec.class_id,
                setting=spec.setting))
            labels.append(LabeledItem(utterance_id=spec.utterance_id,
                                      setting=spec.setting, labels=label_set))
        report = score(predictions, labels)
        print(f"{duration}\t{report.acc_macro:.2f}\t{report.emr:.2f}\t{report.n_items}")
    return 0


def cmd_analyze_gender(args):
    records = _ingest_all(args)
    model = load_model(_require_file(args.model, "model"))
    settings = args.settings.split(",")

    reports = {}
    for gender in ("female", "male"):
        subset = subset_by_gender(records, gender, args.count, args.seed)
        bank = _bank_from_args(args)
        manifest = build_manifest(subset, "random_tuples", settings, args.seed,
                                  tuples_per_utterance=args.tuples_per_utterance,
                                  bank=bank)
        from .dataset import LabeledItem
        predictions, labels = [], []
        for spec, rendered, label_set in stream(manifest, bank=bank):
            predictions.append(predict_features(
                model, extract_features(rendered),
                utterance_id=spec.utterance_id, class_id=spec.class_id,
                setting=spec.setting))
            labels.append(LabeledItem(utterance_id=spec.utterance_id,
                                      setting=spec.setting, labels=label_set))
        reports[gender] = score(predictions, labels)

    print("metric\tfemale\tmale")
    for metric in ("n_items", "acc_macro", "emr", "top1", "top5", "acc_num",
                   "mae_mean", "mae_overall"):
        f, m = getattr(reports["female"], metric), getattr(reports["male"], metric)
        if metric == "n_items":
            print(f"{metric}\t{f}\t{m}")
        else:
            print(f"{metric}\t{f:.2f}\t{m:.2f}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_corpus_args(sub):
    sub.add_argument("--corpus", action="append", required=True,
                     metavar="NAME=DIR", help="corpus name and root directory")
    sub.add_argument("--test-only", action="append", metavar="NAME",
                     help="corpus assigned entirely to the test_only split")
    sub.add_argument("--metadata", default=None,
                     help="speaker_id,gender CSV for gender labels")
    sub.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="speechfx",
        description="Deterministic speech effect-chain rendering, degradation "
                    "protocols, dataset synthesis, and evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", default=None,
                        help="YAML file of per-command flag defaults "
                             "(or set SPEECHFX_CONFIG); flags override it")
    sub = parser.add_subparsers(dest="command", required=True)
    subparser_map = {}

    p = subparser_map["presets"] = sub.add_parser("presets", help="inspect the preset bank")
    p.add_argument("action", choices=["list", "show", "hash"])
    p.add_argument("--bank", default=None, help="alternative preset bank file")
    p.add_argument("effect", nargs="?", help="effect name for 'show'")
    p.set_defaults(func=cmd_presets)

    p = subparser_map["render"] = sub.add_parser("render", help="render one file through the chain")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--class-id", type=int, default=None)
    for effect in EFFECTS:
        p.add_argument(f"--{effect.lower()}", type=int, default=None,
                       help=f"{effect} preset index (0 = bypass)")
    p.add_argument("--setting", choices=SETTINGS, default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bit-depth", default="float32",
                   type=lambda v: v if v == "float32" else int(v))
    p.set_defaults(func=cmd_render)
    p.add_argument("--bank", default=None, help="alternative preset bank file")

    p = subparser_map["synth"] = sub.add_parser("synth", help="build a manifest and synthesize it")
    _add_corpus_args(p)
    p.add_argument("--sampling", choices=["exhaustive_grid", "random_tuples"],
                   default="random_tuples")
    p.add_argument("--tuples-per-utterance", type=int, default=None)
    p.add_argument("--settings", default="none", help="comma-separated settings")
    p.add_argument("--subset-per-corpus", type=int, default=None,
                   help="fixed evaluation subset size per corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--bit-depth", default="float32",
                   type=lambda v: v if v == "float32" else int(v))
    p.add_argument("--labels-only", action="store_true",
                   help="write manifest and labels without rendering audio")
    p.add_argument("--bank", default=None, help="alternative preset bank file")
    p.set_defaults(func=cmd_synth)

    p = subparser_map["stats"] = sub.add_parser("stats", help="summarize a manifest; optionally stream items")
    p.add_argument("--manifest", required=True)
    p.add_argument("--probe-items", type=int, default=0)
    p.add_argument("--bank", default=None, help="alternative preset bank file")
    p.set_defaults(func=cmd_stats)

    p = subparser_map["train"] = sub.add_parser("train", help="train the probe on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--settings", default=None, help="restrict to these settings")
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--presence-weight", type=float, default=5.0)
    p.add_argument("--bank", default=None, help="alternative preset bank file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = subparser_map["predict"] = sub.add_parser("predict", help="emit a predictions file for manifest items")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--settings", default=None)
    p.set_defaults(func=cmd_predict)
    p.add_argument("--bank", default=None, help="alternative preset bank file")

    p = subparser_map["eval"] = sub.add_parser("eval", help="score predictions against labels")
    p.add_argument("predictions")
    p.add_argument("labels")
    p.add_argument("--grid-cell", nargs=2, metavar=("SETTING", "DOMAIN"), default=None)
    p.add_argument("--grid-file", default=None)
    p.add_argument("--show-grid", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="duration and gender protocols")
    analyze_sub = p.add_subparsers(dest="mode", required=True)

    d = subparser_map["analyze.duration"] = analyze_sub.add_parser("duration", help="evaluate across the seven crop lengths")
    d.add_argument("--manifest", required=True)
    d.add_argument("--model", required=True)
    d.add_argument("--split", default="test")
    d.add_argument("--settings", default=None)
    d.add_argument("--bank", default=None, help="alternative preset bank file")
    d.set_defaults(func=cmd_analyze_duration)

    g = subparser_map["analyze.gender"] = analyze_sub.add_parser("gender", help="matched per-gender evaluation")
    _add_corpus_args(g)
    g.add_argument("--model", required=True)
    g.add_argument("--count", type=int, default=60)
    g.add_argument("--tuples-per-utterance", type=int, default=3)
    g.add_argument("--settings", default="none")
    g.add_argument("--bank", default=None, help="alternative preset bank file")
    g.set_defaults(func=cmd_analyze_gender)

    return parser, subparser_map


def _apply_config(argv, parser, subparser_map):
    """Install config-file values as subparser defaults; flags override."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    config_path = known.config or os.environ.get("SPEECHFX_CONFIG")
    if not config_path:
        return
    if not Path(config_path).is_file():
        raise CliError(f"config file {config_path} does not exist")
    doc = yaml.safe_load(Path(config_path).read_text()) or {}
    if not isinstance(doc, dict):
        raise CliError(f"config file {config_path} must map commands to settings")
    for command, settings in doc.items():
        sub = subparser_map.get(command)
        if sub is None or not isinstance(settings, dict):
            continue
        dests = {a.dest for a in sub._actions}
        defaults = {k.replace("-", "_"): v for k, v in settings.items()}
        sub.set_defaults(**{k: v for k, v in defaults.items() if k in dests})


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser, subparser_map = build_parser()
    try:
        _apply_config(argv, parser, subparser_map)
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

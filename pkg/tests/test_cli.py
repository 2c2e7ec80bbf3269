import json

import numpy as np
import pytest

from speechfx.audio import read_wav, write_wav
from speechfx.cli import main
from speechfx.presets import default_bank

from _speech import synth_corpus, synth_utterance


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_corpus")
    return synth_corpus(root / "voices", 14, seed0=500, duration_s=0.9)


@pytest.fixture(scope="module")
def input_wav(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli_in") / "speech.wav"
    write_wav(synth_utterance(9000, duration_s=1.0), path, "float32")
    return path


class TestPresets:
    def test_list_shows_sizes(self, capsys):
        assert main(["presets", "list"]) == 0
        out = capsys.readouterr().out
        assert "DN: 3" in out
        assert "DRC: 5" in out
        assert "EQ: 7" in out
        assert "DS: 3" in out
        assert "RVB: 4" in out
        assert "LIM: 2" in out
        assert "2520" in out

    def test_show_dn(self, capsys):
        assert main(["presets", "show", "DN"]) == 0
        out = capsys.readouterr().out
        assert "-50.0" in out and "-40.0" in out

    def test_hash_stable(self, capsys):
        main(["presets", "hash"])
        first = capsys.readouterr().out
        main(["presets", "hash"])
        assert capsys.readouterr().out == first
        assert first.strip() == default_bank().content_hash

    def test_unknown_effect_is_validation_error(self, capsys):
        assert main(["presets", "show", "XX"]) == 2


class TestRender:
    def test_class_zero_none_is_passthrough(self, input_wav, tmp_path, capsys):
        out = tmp_path / "out.wav"
        assert main(["render", str(input_wav), str(out),
                     "--class-id", "0", "--setting", "none"]) == 0
        original = read_wav(input_wav)
        rendered = read_wav(out)
        assert np.array_equal(rendered.samples, original.samples)
        sidecar = json.loads((tmp_path / "out.wav.json").read_text())
        assert sidecar["class_id"] == 0
        assert sidecar["bank_hash"] == default_bank().content_hash

    def test_same_flags_byte_identical(self, input_wav, tmp_path):
        a, b = tmp_path / "a.wav", tmp_path / "b.wav"
        args = ["--class-id", "2519", "--setting", "both", "--seed", "5"]
        assert main(["render", str(input_wav), str(a)] + args) == 0
        assert main(["render", str(input_wav), str(b)] + args) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_full_chain_respects_limiter_ceiling(self, input_wav, tmp_path):
        out = tmp_path / "lim.wav"
        assert main(["render", str(input_wav), str(out), "--class-id", "2519"]) == 0
        rendered = read_wav(out)
        ceiling = 10.0 ** (-1.0 / 20.0)
        assert np.max(np.abs(rendered.samples)) <= np.float32(ceiling)

    def test_per_effect_flags(self, input_wav, tmp_path):
        out = tmp_path / "fx.wav"
        assert main(["render", str(input_wav), str(out), "--rvb", "2"]) == 0
        sidecar = json.loads((tmp_path / "fx.wav.json").read_text())
        assert sidecar["presence"] == [0, 0, 0, 0, 1, 0]

    def test_invalid_class_id(self, input_wav, tmp_path):
        assert main(["render", str(input_wav), str(tmp_path / "x.wav"),
                     "--class-id", "9999"]) == 1

    def test_missing_input(self, tmp_path):
        assert main(["render", str(tmp_path / "nope.wav"),
                     str(tmp_path / "y.wav"), "--class-id", "0"]) == 2


class TestSynth:
    def test_counts_and_jobs_determinism(self, corpus_dir, tmp_path, capsys):
        base = ["synth", "--corpus", f"voices={corpus_dir}",
                "--sampling", "random_tuples", "--tuples-per-utterance", "3",
                "--settings", "none,both", "--seed", "3"]
        out1, out8 = tmp_path / "j1", tmp_path / "j8"
        assert main(base + ["--out", str(out1), "--jobs", "1"]) == 0
        assert main(base + ["--out", str(out8), "--jobs", "4"]) == 0
        wavs = sorted(p.name for p in out1.glob("*.wav"))
        assert len(wavs) == 14 * 3 * 2
        for name in wavs + ["labels.tsv", "manifest.json"]:
            assert (out1 / name).read_bytes() == (out8 / name).read_bytes()

    def test_missing_corpus_is_validation_error(self, tmp_path):
        assert main(["synth", "--corpus", "x=/does/not/exist",
                     "--out", str(tmp_path / "o")]) == 2

    def test_labels_only(self, corpus_dir, tmp_path):
        out = tmp_path / "labels_only"
        assert main(["synth", "--corpus", f"voices={corpus_dir}",
                     "--tuples-per-utterance", "2", "--settings", "none",
                     "--out", str(out), "--labels-only"]) == 0
        assert (out / "manifest.json").exists()
        assert (out / "labels.tsv").exists()
        assert not list(out.glob("*.wav"))

    def test_config_file_defaults_with_flag_override(self, corpus_dir, tmp_path):
        config = tmp_path / "conf.yaml"
        config.write_text(
            "synth:\n"
            "  tuples-per-utterance: 2\n"
            "  settings: none\n"
            "  labels-only: true\n")
        out = tmp_path / "from_config"
        assert main(["--config", str(config), "synth",
                     "--corpus", f"voices={corpus_dir}", "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["items"]) == 14 * 2
        # explicit flag beats the config value
        out2 = tmp_path / "override"
        assert main(["--config", str(config), "synth",
                     "--corpus", f"voices={corpus_dir}", "--out", str(out2),
                     "--tuples-per-utterance", "3"]) == 0
        manifest2 = json.loads((out2 / "manifest.json").read_text())
        assert len(manifest2["items"]) == 14 * 3

    def test_missing_config_is_validation_error(self, corpus_dir, tmp_path):
        assert main(["--config", str(tmp_path / "nope.yaml"), "presets", "list"]) == 2


class TestCustomBank:
    def _bank_with_hotter_gate(self, tmp_path):
        from importlib import resources
        raw = resources.files("speechfx").joinpath("data/preset_bank.yaml").read_text()
        assert "threshold_db: -50.0" in raw
        path = tmp_path / "custom_bank.yaml"
        path.write_text(raw.replace("threshold_db: -50.0", "threshold_db: -20.0", 1))
        return path

    def test_hash_differs_from_default(self, tmp_path, capsys):
        custom = self._bank_with_hotter_gate(tmp_path)
        assert main(["presets", "hash", "--bank", str(custom)]) == 0
        custom_hash = capsys.readouterr().out.strip()
        assert custom_hash != default_bank().content_hash

    def test_render_uses_custom_bank(self, input_wav, tmp_path):
        custom = self._bank_with_hotter_gate(tmp_path)
        out_default = tmp_path / "d.wav"
        out_custom = tmp_path / "c.wav"
        args = ["--dn", "1", "--setting", "none"]
        assert main(["render", str(input_wav), str(out_default)] + args) == 0
        assert main(["render", str(input_wav), str(out_custom),
                     "--bank", str(custom)] + args) == 0
        a = read_wav(out_default)
        b = read_wav(out_custom)
        assert not np.array_equal(a.samples, b.samples)
        sidecar = json.loads((tmp_path / "c.wav.json").read_text())
        assert sidecar["bank_hash"] != default_bank().content_hash

    def test_synth_with_custom_bank_records_its_hash(self, corpus_dir, tmp_path):
        custom = self._bank_with_hotter_gate(tmp_path)
        out = tmp_path / "synth_custom"
        assert main(["synth", "--corpus", f"voices={corpus_dir}",
                     "--tuples-per-utterance", "1", "--settings", "none",
                     "--out", str(out), "--bank", str(custom), "--jobs", "2"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["header"]["bank_hash"] != default_bank().content_hash


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, corpus_dir):
    """synth -> train -> predict artifacts shared by eval/analyze tests."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    assert main(["synth", "--corpus", f"voices={corpus_dir}",
                 "--tuples-per-utterance", "4", "--settings", "none",
                 "--seed", "1", "--out", str(data), "--labels-only"]) == 0
    model = root / "probe.npz"
    assert main(["train", "--manifest", str(data / "manifest.json"),
                 "--out", str(model), "--split", "train",
                 "--epochs", "30", "--seed", "1"]) == 0
    preds = root / "preds.tsv"
    assert main(["predict", "--manifest", str(data / "manifest.json"),
                 "--model", str(model), "--out", str(preds),
                 "--split", "train,valid,test"]) == 0
    return {"data": data, "model": model, "preds": preds}


class TestEvalCommand:
    def test_score_report_printed(self, pipeline, capsys):
        assert main(["eval", str(pipeline["preds"]),
                     str(pipeline["data"] / "labels.tsv")]) == 0
        out = capsys.readouterr().out
        assert "acc_macro" in out and "emr" in out and "mae_overall" in out

    def test_labels_scored_against_themselves_are_perfect(self, pipeline, tmp_path, capsys):
        from speechfx.dataset import read_labels_file
        from speechfx.evaluation import write_predictions_file
        from test_evaluation import perfect_prediction
        labels = read_labels_file(pipeline["data"] / "labels.tsv")
        preds = tmp_path / "perfect.tsv"
        write_predictions_file([perfect_prediction(l) for l in labels], preds)
        assert main(["eval", str(preds), str(pipeline["data"] / "labels.tsv")]) == 0
        out = capsys.readouterr().out
        assert "acc_macro:  100.00" in out
        assert "emr:        100.00" in out
        assert "mae_overall:0.0000" in out

    def test_grid_accumulation(self, pipeline, tmp_path, capsys):
        grid = tmp_path / "grid.json"
        assert main(["eval", str(pipeline["preds"]), str(pipeline["data"] / "labels.tsv"),
                     "--grid-cell", "none", "id", "--grid-file", str(grid)]) == 0
        assert main(["eval", str(pipeline["preds"]), str(pipeline["data"] / "labels.tsv"),
                     "--grid-cell", "none", "ood", "--grid-file", str(grid),
                     "--show-grid"]) == 0
        out = capsys.readouterr().out
        assert "/" in out
        assert grid.exists()

    def test_malformed_predictions_fail(self, pipeline, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("# speechfx-predictions v1\nbroken line\n")
        assert main(["eval", str(bad), str(pipeline["data"] / "labels.tsv")]) == 1


class TestStats:
    def test_summarizes(self, pipeline, capsys):
        assert main(["stats", "--manifest", str(pipeline["data"] / "manifest.json"),
                     "--probe-items", "2"]) == 0
        out = capsys.readouterr().out
        assert "items by setting" in out and "streamed 2 items" in out


class TestAnalyze:
    def test_duration_emits_seven_rows(self, pipeline, capsys):
        assert main(["analyze", "duration",
                     "--manifest", str(pipeline["data"] / "manifest.json"),
                     "--model", str(pipeline["model"]),
                     "--split", "test"]) == 0
        lines = [l for l in capsys.readouterr().out.strip().splitlines()
                 if l and not l.startswith("duration_s")]
        assert len(lines) == 7
        durations = [float(l.split("\t")[0]) for l in lines]
        assert durations == [0.2, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0]

    def test_gender_side_by_side(self, corpus_dir, pipeline, tmp_path, capsys):
        meta = tmp_path / "meta.csv"
        meta.write_text("spk0,female\nspk1,female\nspk2,male\nspk3,male\n")
        assert main(["analyze", "gender", "--corpus", f"voices={corpus_dir}",
                     "--metadata", str(meta), "--model", str(pipeline["model"]),
                     "--count", "3", "--tuples-per-utterance", "2",
                     "--settings", "none", "--seed", "2"]) == 0
        out = capsys.readouterr().out
        assert "female\tmale" in out
        n_line = next(l for l in out.splitlines() if l.startswith("n_items"))
        _, f, m = n_line.split("\t")
        assert f == m  # matched subset sizes

    def test_gender_unknown_only_pool_errors(self, corpus_dir, pipeline):
        assert main(["analyze", "gender", "--corpus", f"voices={corpus_dir}",
                     "--model", str(pipeline["model"]), "--count", "3"]) == 1

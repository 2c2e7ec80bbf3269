import numpy as np
import pytest

from speechfx.audio import Waveform, measure_levels
from speechfx.presets import (
    EFFECTS,
    PRESET_COUNTS,
    TOTAL_CLASSES,
    BankFormatError,
    PresetTuple,
    class_of,
    default_bank,
    labels_of,
    load_bank,
    render_chain,
    tuple_from_class,
)

from conftest import sine, tail_rms_db, white_noise
from test_effects import schroeder_t20


def brute_force_labels(class_id):
    """Independent label evaluator: own decode path, explicit arithmetic."""
    sizes = [3, 5, 7, 3, 4, 2]
    digits = []
    rem = class_id
    for size in sizes[::-1]:
        digits.append(rem % size)
        rem //= size
    digits = digits[::-1]
    presence = [1 if d > 0 else 0 for d in digits]
    count = 0
    for flag in presence:
        count += flag
    intensity = [d / (s - 1) for d, s in zip(digits, sizes)]
    scalar = sum(intensity) / 6.0
    return presence, count, intensity, scalar


class TestClassSpace:
    def test_zero_is_all_bypass(self):
        assert tuple_from_class(0).indices == (0, 0, 0, 0, 0, 0)

    def test_max_id_is_all_max(self):
        assert tuple_from_class(TOTAL_CLASSES - 1).indices == (2, 4, 6, 2, 3, 1)

    def test_dn_is_most_significant(self):
        # (DN=1, rest 0) encodes to 1 * 5*7*3*4*2 = 840
        assert class_of(PresetTuple((1, 0, 0, 0, 0, 0))) == 840

    def test_exhaustive_round_trip(self):
        seen = set()
        for cid in range(TOTAL_CLASSES):
            p = tuple_from_class(cid)
            assert class_of(p) == cid
            seen.add(p.indices)
        assert len(seen) == TOTAL_CLASSES

    def test_out_of_range_rejected(self):
        for cid in (-1, TOTAL_CLASSES):
            with pytest.raises(ValueError):
                tuple_from_class(cid)

    def test_invalid_indices_rejected(self):
        with pytest.raises(ValueError):
            PresetTuple((3, 0, 0, 0, 0, 0))


class TestLabels:
    def test_all_bypass(self):
        labels = labels_of(tuple_from_class(0))
        assert labels.presence == (0,) * 6
        assert labels.active_count == 0
        assert labels.intensity_scalar == 0.0
        assert labels.intensity_vector == (0.0,) * 6

    def test_single_strong_dn(self):
        labels = labels_of(PresetTuple((2, 0, 0, 0, 0, 0)))
        assert labels.presence == (1, 0, 0, 0, 0, 0)
        assert labels.active_count == 1
        assert labels.intensity_vector[0] == 1.0
        assert labels.intensity_scalar == pytest.approx(1.0 / 6.0)

    def test_mixed_tuple(self):
        labels = labels_of(PresetTuple((1, 2, 3, 1, 2, 1)))
        assert labels.active_count == 6
        assert labels.intensity_vector == (0.5, 0.5, 0.5, 0.5, 2.0 / 3.0, 1.0)
        assert labels.intensity_scalar == pytest.approx(np.mean([0.5, 0.5, 0.5, 0.5, 2 / 3, 1.0]))

    def test_exhaustive_against_brute_force(self):
        for cid in range(TOTAL_CLASSES):
            labels = labels_of(tuple_from_class(cid))
            presence, count, intensity, scalar = brute_force_labels(cid)
            assert list(labels.presence) == presence
            assert labels.active_count == count
            assert list(labels.intensity_vector) == intensity
            assert labels.intensity_scalar == scalar
            assert labels.class_id == cid


class TestBank:
    def test_sizes(self):
        assert default_bank().sizes() == (3, 5, 7, 3, 4, 2)
        assert int(np.prod(default_bank().sizes())) == TOTAL_CLASSES

    def test_dn_presets_verbatim(self):
        dn = default_bank().presets["DN"]
        assert dn[0].params is None
        assert (dn[1].params.threshold_db, dn[1].params.ratio,
                dn[1].params.attack_ms, dn[1].params.release_ms) == (-50.0, 4.0, 2.0, 50.0)
        assert (dn[2].params.threshold_db, dn[2].params.ratio,
                dn[2].params.attack_ms, dn[2].params.release_ms) == (-40.0, 8.0, 1.0, 100.0)

    def test_hash_is_stable(self):
        assert default_bank().content_hash == default_bank().content_hash
        assert len(default_bank().content_hash) == 64

    def test_load_matches_packaged(self, tmp_path):
        from importlib import resources
        raw = resources.files("speechfx").joinpath("data/preset_bank.yaml").read_bytes()
        path = tmp_path / "bank.yaml"
        path.write_bytes(raw)
        assert load_bank(path).content_hash == default_bank().content_hash

    def test_malformed_bank_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("version: 1\neffects:\n  DN: [bypass]\n")
        with pytest.raises(BankFormatError):
            load_bank(path)

    def test_reverb_presets_decay_monotone(self):
        # bank ordering property: decay time non-decreasing with index
        from speechfx.effects import reverb
        impulse = np.zeros(32000)
        impulse[0] = 1.0
        w = Waveform(impulse, 16000)
        decays = []
        for preset in default_bank().presets["RVB"][1:]:
            ir = reverb(w, preset.params)
            wet_only = ir.samples.astype(np.float64).copy()
            wet_only[0] = 0.0  # drop the direct path
            decays.append(schroeder_t20(wet_only, 16000))
        assert decays == sorted(decays)

    def test_all_presets_within_nyquist(self):
        bank = default_bank()
        for preset in bank.presets["EQ"][1:]:
            for band in preset.params:
                assert band.freq_hz < 8000.0
        for preset in bank.presets["DS"][1:]:
            assert preset.params.band_high_hz < 8000.0


class TestRenderChain:
    def test_all_bypass_identity(self):
        w = white_noise(21, duration_s=0.4)
        out = render_chain(w, tuple_from_class(0))
        assert np.array_equal(out.samples, w.samples)

    def test_limiter_only_below_ceiling(self):
        w = sine(500.0, duration_s=0.5, amplitude=10 ** (-20 / 20))
        p = PresetTuple((0, 0, 0, 0, 0, 1))
        out = render_chain(w, p)
        assert abs(tail_rms_db(out) - tail_rms_db(w)) <= 0.1

    def test_reverb_only_adds_tail_energy(self):
        impulse = np.zeros(16000)
        impulse[0] = 1.0
        w = Waveform(impulse, 16000)
        out = render_chain(w, PresetTuple((0, 0, 0, 0, 3, 0)))
        direct = np.sum(out.samples[:10].astype(np.float64) ** 2)
        tail = np.sum(out.samples[200:].astype(np.float64) ** 2)
        assert tail > 0.0
        assert not np.array_equal(out.samples, w.samples)
        assert direct > 0.0

    def test_deterministic(self):
        w = white_noise(33, duration_s=0.4, amplitude=0.6)
        p = tuple_from_class(1234)
        assert np.array_equal(render_chain(w, p).samples, render_chain(w, p).samples)

    def test_full_chain_finite_and_length_preserving(self):
        w = white_noise(77, duration_s=0.5, amplitude=0.8)
        for cid in (2519, 1, 840, 1999):
            out = render_chain(w, tuple_from_class(cid))
            assert len(out) == len(w)
            assert np.all(np.isfinite(out.samples))

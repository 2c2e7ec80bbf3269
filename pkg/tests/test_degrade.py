import numpy as np
import pytest

from speechfx.audio import Waveform
from speechfx.degrade import (
    KINDS,
    OPS_PER_SIDE,
    DegradationOp,
    DegradationPlan,
    apply_degradation,
    degraded_render,
    derive_seed,
    sample_plan,
)
from speechfx.presets import PresetTuple, render_chain, tuple_from_class

from conftest import sine, spectrum_db, tone_at_rms_dbfs, white_noise


class TestPlanSampling:
    def test_none_is_empty(self):
        plan = sample_plan("none", 123)
        assert plan.pre_ops == () and plan.post_ops == ()

    def test_deterministic(self):
        for setting in ("pre", "post", "either", "both"):
            assert sample_plan(setting, 99) == sample_plan(setting, 99)

    def test_sides_match_setting(self):
        for seed in range(20):
            assert len(sample_plan("pre", seed).pre_ops) == OPS_PER_SIDE
            assert sample_plan("pre", seed).post_ops == ()
            assert sample_plan("post", seed).pre_ops == ()
            assert len(sample_plan("post", seed).post_ops) == OPS_PER_SIDE
            both = sample_plan("both", seed)
            assert len(both.pre_ops) == len(both.post_ops) == OPS_PER_SIDE
            either = sample_plan("either", seed)
            assert (len(either.pre_ops) > 0) != (len(either.post_ops) > 0)

    def test_kinds_distinct_within_side(self):
        for seed in range(50):
            for ops in (sample_plan("both", seed).pre_ops,
                        sample_plan("both", seed).post_ops):
                kinds = [op.kind for op in ops]
                assert len(set(kinds)) == len(kinds)
                assert all(k in KINDS for k in kinds)

    def test_either_side_frequency(self):
        # 1000 plans here; the acceptance suite runs the 10k version
        pre = sum(1 for s in range(1000) if sample_plan("either", s).pre_ops)
        assert 0.44 <= pre / 1000 <= 0.56

    def test_plan_serialization_round_trip(self):
        plan = sample_plan("both", 4321)
        assert DegradationPlan.from_dict(plan.to_dict()) == plan

    def test_invalid_plan_rejected(self):
        with pytest.raises(ValueError):
            DegradationPlan(setting="none", seed=0,
                            pre_ops=(DegradationOp("quantization",
                                                   {"bit_depth": 8, "mu_law": False}),))

    def test_unknown_setting_rejected(self):
        with pytest.raises(ValueError):
            sample_plan("sometimes", 1)


class TestDeriveSeed:
    def test_stable_and_distinct(self):
        a = derive_seed(7, "corpus:utt1", 42, "both")
        assert a == derive_seed(7, "corpus:utt1", 42, "both")
        assert a != derive_seed(7, "corpus:utt1", 43, "both")
        assert 0 <= a < 2 ** 64


class TestOperators:
    def test_empty_op_list_identity(self):
        w = white_noise(3, duration_s=0.3)
        out = apply_degradation(w, ())
        assert np.array_equal(out.samples, w.samples)

    def test_additive_noise_snr(self):
        # power-ratio oracle: measured SNR == requested within 0.5 dB
        w = tone_at_rms_dbfs(1000.0, -20.0, duration_s=2.0)
        for color in ("white", "pink"):
            op = DegradationOp("additive_noise",
                               {"snr_db": 20.0, "noise_color": color, "noise_seed": 7})
            out = apply_degradation(w, [op])
            added = out.samples.astype(np.float64) - w.samples.astype(np.float64)
            snr = 10 * np.log10(np.mean(w.samples.astype(np.float64) ** 2)
                                / np.mean(added ** 2))
            assert snr == pytest.approx(20.0, abs=0.5)

    def test_noise_on_silence_is_noop(self):
        w = Waveform(np.zeros(8000), 16000)
        op = DegradationOp("additive_noise",
                           {"snr_db": 10.0, "noise_color": "white", "noise_seed": 1})
        assert np.array_equal(apply_degradation(w, [op]).samples, w.samples)

    def test_resample_ladder_removes_high_band(self):
        w = sine(7000.0, duration_s=1.0, amplitude=0.5)
        op = DegradationOp("resample_ladder", {"intermediate_rate_hz": 8000})
        out = apply_degradation(w, [op])
        assert len(out) == len(w)
        freqs, mags = spectrum_db(out)
        ref = np.max(spectrum_db(w)[1])
        assert np.max(mags[freqs > 4100]) < ref - 40.0

    @pytest.mark.parametrize("bits", [6, 8, 10, 12])
    @pytest.mark.parametrize("mu_law", [False, True])
    def test_quantization_error_bound(self, bits, mu_law):
        w = white_noise(bits, duration_s=0.2, amplitude=0.9)
        op = DegradationOp("quantization", {"bit_depth": bits, "mu_law": mu_law})
        out = apply_degradation(w, [op])
        err = np.abs(out.samples.astype(np.float64) - w.samples.astype(np.float64))
        step = 1.0 / (2 ** (bits - 1) - 1)
        if mu_law:
            # expansion maps a companded-domain step onto at most
            # step * d(expand)/dy at |y|=1, i.e. step * (1+mu)ln(1+mu)/mu
            step *= (1.0 + 255.0) * np.log(256.0) / 255.0
        assert np.max(err) <= step + 1e-7

    def test_codec_emulation_bandlimits(self):
        w = sine(6500.0, duration_s=0.5, amplitude=0.4)
        op = DegradationOp("codec_emulation", {"bandwidth_hz": 3400})
        out = apply_degradation(w, [op])
        freqs, mags = spectrum_db(out)
        ref = np.max(spectrum_db(w)[1])
        assert np.max(mags[freqs > 6000]) < ref - 30.0

    def test_ops_are_deterministic(self):
        w = white_noise(5, duration_s=0.3)
        plan = sample_plan("both", 31)
        a = apply_degradation(w, plan.pre_ops)
        b = apply_degradation(w, plan.pre_ops)
        assert np.array_equal(a.samples, b.samples)


class TestDegradedRender:
    def test_none_plan_bypass_tuple_identity(self):
        w = white_noise(16, duration_s=0.3)
        plan = sample_plan("none", 0)
        out = degraded_render(w, tuple_from_class(0), plan)
        assert np.array_equal(out.samples, w.samples)

    def test_none_plan_equals_render_chain(self):
        w = white_noise(17, duration_s=0.4, amplitude=0.7)
        p = tuple_from_class(777)
        plan = sample_plan("none", 5)
        assert np.array_equal(degraded_render(w, p, plan).samples,
                              render_chain(w, p).samples)

    def test_pre_vs_post_not_commutative(self):
        # identical op stacks on opposite sides of a non-bypass chain differ
        w = white_noise(18, duration_s=0.5, amplitude=0.6)
        p = PresetTuple((1, 2, 3, 1, 2, 1))
        ops = sample_plan("pre", 9).pre_ops
        pre_plan = DegradationPlan("pre", 9, pre_ops=ops)
        post_plan = DegradationPlan("post", 9, post_ops=ops)
        a = degraded_render(w, p, pre_plan)
        b = degraded_render(w, p, post_plan)
        assert not np.array_equal(a.samples, b.samples)

    def test_both_equals_step_by_step_replay(self):
        w = white_noise(19, duration_s=0.4, amplitude=0.6)
        p = tuple_from_class(1500)
        plan = sample_plan("both", 77)
        replay = DegradationPlan.from_dict(plan.to_dict())
        stepwise = apply_degradation(w, replay.pre_ops)
        stepwise = render_chain(stepwise, p)
        stepwise = apply_degradation(stepwise, replay.post_ops)
        assert np.array_equal(degraded_render(w, p, plan).samples, stepwise.samples)

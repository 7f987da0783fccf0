import numpy as np
import pytest

from msmslab import acoustic, tensor as tc
from msmslab.acoustic import AcousticModel, ConditioningInput, ModelConfig, length_regulate
from msmslab.dsp import ProsodyTrack
from msmslab.tensor import Tensor

from oracles import finite_diff_grad_sampled, rel_err


@pytest.fixture(scope="module")
def desk_model():
    return AcousticModel(ModelConfig.desk(), seed=3)


def toy_track(n_phones, rng):
    durations = [int(d) for d in rng.integers(2, 6, size=n_phones)]
    pitch = [float(p) for p in rng.uniform(90, 220, size=n_phones)]
    pitch[0] = 0.0  # one unvoiced phone
    energy = [float(e) for e in rng.uniform(0.05, 0.3, size=n_phones)]
    return ProsodyTrack(durations, pitch, energy)


class TestPositions:
    def test_row_zero_alternates_zero_one(self):
        table = acoustic.sinusoidal_positions(3, 8)
        np.testing.assert_allclose(table[0], [0, 1, 0, 1, 0, 1, 0, 1])

    def test_values_bounded(self):
        table = acoustic.sinusoidal_positions(50, 16)
        assert np.abs(table).max() <= 1.0


class TestEncode:
    def test_output_shape(self, desk_model):
        out = desk_model.encode([1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12])
        assert out.shape == (12, desk_model.config.d_model)

    def test_unknown_phoneme_rejected(self, desk_model):
        with pytest.raises(ValueError, match="unknown phoneme"):
            desk_model.encode([1, 2, 99])

    def test_empty_rejected(self, desk_model):
        with pytest.raises(ValueError):
            desk_model.encode([])

    def test_permutation_changes_encodings(self, desk_model):
        base = [5, 1, 7, 3, 9, 2, 8, 4]
        swapped = list(base)
        swapped[0], swapped[-1] = swapped[-1], swapped[0]
        a = desk_model.encode(base).data
        b = desk_model.encode(swapped).data
        assert np.abs(a - b).max() > 1e-4

    def test_fft_block_grads_match_finite_difference(self):
        # two feed-forward Transformer blocks checked end to end
        cfg = ModelConfig(encoder_layers=2, attention_heads=2, d_model=8,
                          encoder_conv_kernel=3, encoder_conv_filters=6,
                          decoder_blocks=1, decoder_dilations=(1,), decoder_filters=8,
                          predictor_filters=4, dropout=0.0, mel_bins=4)
        model = AcousticModel(cfg, seed=1, dtype=np.float64)
        phonemes = [1, 4, 2, 9, 6]

        def loss():
            out = model.encode(phonemes)
            return float((out * out).sum().data)

        out = model.encode(phonemes)
        tc.backward((out * out).sum())
        rng = np.random.default_rng(0)
        for name, p in model.params.items():
            if not name.startswith("encoder") or p.grad is None:
                continue
            idx = rng.choice(p.data.size, size=min(3, p.data.size), replace=False)
            numeric = finite_diff_grad_sampled(loss, p, idx)
            for i, num in numeric.items():
                analytic = p.grad.reshape(-1)[i]
                scale = max(abs(analytic), abs(num), 1.0)
                assert abs(analytic - num) / scale < 1e-4, name


class TestConditioning:
    def test_onehot_positions(self, desk_model):
        cond = ConditioningInput(speaker_index=2, style_index=0)
        c = desk_model.config
        onehot = np.zeros(c.speaker_slots + c.style_slots)
        onehot[2] = 1.0
        onehot[c.speaker_slots] = 1.0
        w = desk_model.params["cond.adaptor.w"].data
        b = desk_model.params["cond.adaptor.b"].data
        emb = desk_model.condition_embedding(cond, 4, "adaptor").data
        np.testing.assert_allclose(emb, np.tile(onehot @ w + b, (4, 1)), atol=1e-6)

    def test_concat_width_is_128(self, desk_model):
        assert desk_model.params["cond.adaptor.w"].shape[0] == 128

    def test_zero_weights_give_constant_bias_row(self, desk_model):
        cond = ConditioningInput(1, 1)
        desk_model.params["cond.decoder.b"].data = np.arange(
            desk_model.config.decoder_filters, dtype=np.float32)
        try:
            emb = desk_model.condition_embedding(cond, 3, "decoder").data
            for row in emb:
                np.testing.assert_allclose(row, np.arange(desk_model.config.decoder_filters))
        finally:
            desk_model.params["cond.decoder.b"].data = np.zeros(
                desk_model.config.decoder_filters, dtype=np.float32)

    def test_out_of_range_index(self, desk_model):
        with pytest.raises(ValueError, match="speaker index"):
            desk_model.condition_embedding(ConditioningInput(64, 0), 2, "adaptor")

    def test_unconditioned_model_has_no_cond_params(self):
        model = AcousticModel(ModelConfig.desk(conditioned=False), seed=0)
        assert not any(n.startswith("cond.") for n in model.params)


class TestPredictVariances:
    def test_output_lengths(self, desk_model):
        enc = desk_model.encode([1, 2, 3, 4, 5])
        log_dur, pitch, energy = desk_model.predict_variances(enc, ConditioningInput(1, 0))
        assert log_dur.shape == (5,) and pitch.shape == (5,) and energy.shape == (5,)

    def test_teacher_forcing_substitutes_ground_truth(self, desk_model):
        rng = np.random.default_rng(4)
        track = toy_track(6, rng)
        out = desk_model.forward([1, 2, 3, 4, 5, 6], ConditioningInput(1, 0), track=track)
        assert out.durations_used == list(track.phone_durations)
        np.testing.assert_allclose(out.pitch_hz_used, track.phone_pitch)
        assert out.mel.shape == (track.total_frames, desk_model.config.mel_bins)

    def test_predictor_grads_match_finite_difference(self):
        cfg = ModelConfig.miniature()
        model = AcousticModel(cfg, seed=2, dtype=np.float64)
        x = Tensor(np.random.default_rng(5).normal(size=(4, cfg.d_model)), requires_grad=True)

        def loss():
            return float((model._predictor("duration", x) ** 2.0).sum().data)

        tc.backward((model._predictor("duration", x) ** 2.0).sum())
        rng = np.random.default_rng(6)
        for name, p in model.params.items():
            if not name.startswith("variance.duration") or p.grad is None:
                continue
            idx = rng.choice(p.data.size, size=min(3, p.data.size), replace=False)
            numeric = finite_diff_grad_sampled(loss, p, idx)
            for i, num in numeric.items():
                analytic = p.grad.reshape(-1)[i]
                assert abs(analytic - num) / max(abs(analytic), abs(num), 1.0) < 1e-4, name


class TestLengthRegulate:
    def test_sum_of_durations(self):
        enc = Tensor(np.arange(12.0).reshape(3, 4))
        out = length_regulate(enc, [2, 1, 3])
        assert out.shape == (6, 4)

    def test_all_ones_identity(self):
        enc = Tensor(np.random.default_rng(7).normal(size=(4, 3)))
        np.testing.assert_array_equal(length_regulate(enc, [1, 1, 1, 1]).data, enc.data)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(8)
        enc = Tensor(rng.normal(size=(5, 2)))
        durations = [3, 1, 4, 2, 2]
        out = length_regulate(enc, durations).data
        expected = np.concatenate([np.tile(enc.data[i], (d, 1)) for i, d in enumerate(durations)])
        np.testing.assert_array_equal(out, expected)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="durations"):
            length_regulate(Tensor(np.zeros((3, 2))), [1, 2])


class TestDecode:
    def test_receptive_field_full_config(self):
        assert ModelConfig().receptive_field() == 253

    def test_single_frame(self, desk_model):
        up = Tensor(np.random.default_rng(9).normal(size=(1, desk_model.config.d_model)).astype(np.float32))
        out = desk_model.decode(up, ConditioningInput(0, 0))
        assert out.shape == (1, desk_model.config.mel_bins)

    def test_style_changes_mel_once_conditioning_is_nonzero(self, desk_model):
        # simulate a trained conditioning path
        w = desk_model.params["cond.decoder.w"]
        old = w.data.copy()
        try:
            w.data = np.random.default_rng(10).normal(size=w.data.shape).astype(np.float32) * 0.1
            up = Tensor(np.random.default_rng(11).normal(size=(7, desk_model.config.d_model)).astype(np.float32))
            a = desk_model.decode(up, ConditioningInput(1, 0)).data
            b = desk_model.decode(up, ConditioningInput(1, 1)).data
            assert np.abs(a - b).mean() > 1e-5
        finally:
            w.data = old


class TestForward:
    def test_unseen_pair_accepted(self, desk_model):
        out = desk_model.forward([1, 2, 3], ConditioningInput(speaker_index=1, style_index=1))
        assert out.mel.shape[0] == sum(out.durations_used)

    def test_inference_durations_clamped(self, desk_model):
        out = desk_model.forward([1, 2, 3, 4])
        assert all(d >= 1 for d in out.durations_used)

    def test_inference_deterministic(self, desk_model):
        a = desk_model.forward([3, 1, 4, 1, 5], ConditioningInput(2, 1))
        b = desk_model.forward([3, 1, 4, 1, 5], ConditioningInput(2, 1))
        np.testing.assert_array_equal(a.mel.data, b.mel.data)

    def test_track_length_mismatch_rejected(self, desk_model):
        rng = np.random.default_rng(12)
        with pytest.raises(ValueError, match="phones"):
            desk_model.forward([1, 2, 3], track=toy_track(4, rng))

    def test_untrained_model_is_conditioning_invariant(self, desk_model):
        # conditioning projections are zero-initialized
        fresh = AcousticModel(ModelConfig.desk(), seed=3)
        track = toy_track(4, np.random.default_rng(13))
        mels = [fresh.forward([1, 2, 3, 4], ConditioningInput(s, t), track=track).mel.data
                for s, t in [(0, 0), (3, 1), (7, 0)]]
        np.testing.assert_array_equal(mels[0], mels[1])
        np.testing.assert_array_equal(mels[0], mels[2])

    def test_dropout_path_runs(self, desk_model):
        rng = np.random.default_rng(14)
        track = toy_track(5, rng)
        out = desk_model.forward([1, 2, 3, 4, 5], ConditioningInput(0, 0), track=track,
                                 training=True, rng=rng)
        assert np.isfinite(out.mel.data).all()


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path, desk_model):
        path = tmp_path / "model.ckpt"
        acoustic.save_model(path, desk_model, extra={"note": "test"})
        loaded, extra = acoustic.load_model(path)
        assert extra == {"note": "test"}
        track = toy_track(4, np.random.default_rng(15))
        a = desk_model.forward([1, 2, 3, 4], ConditioningInput(1, 0), track=track).mel.data
        b = loaded.forward([1, 2, 3, 4], ConditioningInput(1, 0), track=track).mel.data
        np.testing.assert_array_equal(a, b)

    def test_namespaces(self, desk_model):
        names = list(desk_model.params)
        for prefix in ("encoder.", "variance.", "decoder.", "cond."):
            assert any(n.startswith(prefix) for n in names)

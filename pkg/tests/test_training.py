import dataclasses
import json

import numpy as np
import pytest

from msmslab import corpus, dsp, tensor as tc, training, vocoder as voc
from msmslab.acoustic import AcousticModel, ConditioningInput, ModelConfig, save_model
from msmslab.dsp import ProsodyTrack
from msmslab.tensor import Tensor
from msmslab.training import (
    SystemKind,
    TrainConfig,
    TrainingData,
    conditioning_for,
    loss_components,
    training_records,
    validation_metrics,
)

TINY_MODEL = ModelConfig(
    encoder_layers=1, attention_heads=2, d_model=32,
    encoder_conv_kernel=3, encoder_conv_filters=48,
    decoder_blocks=1, decoder_dilations=(1, 2), decoder_filters=32,
    predictor_filters=24, dropout=0.1,
)


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    speakers = [
        corpus.SpeakerSpec(id=1, median_pitch=188.0, timbre_seed=1000, data_minutes=2.2, style="TTS"),
        corpus.SpeakerSpec(id=2, median_pitch=112.0, timbre_seed=1001, data_minutes=2.2, style="TTS"),
        corpus.SpeakerSpec(id=6, median_pitch=159.0, timbre_seed=1005, data_minutes=2.2, style="LongForm"),
    ]
    corpus.build_corpus(out, speakers=speakers, seed=21)
    return TrainingData(out)


def fake_output(model, utt):
    return model.forward(utt.phonemes, None, track=utt.track)


class TestSystemKind:
    def test_target_required(self):
        with pytest.raises(ValueError):
            SystemKind("single_speaker")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SystemKind("mega")

    def test_conditioned_flags(self):
        assert SystemKind("msms").conditioned
        assert SystemKind("multi_speaker").conditioned
        assert not SystemKind("single_speaker", target_speaker=1).conditioned
        assert not SystemKind("pretrain_finetune", target_speaker=1).conditioned


class TestLoss:
    def test_zero_when_output_equals_target(self, data):
        utt = data.utterances[0]
        cfg = TrainConfig(steps=1, seed=0)
        model = AcousticModel(dataclasses.replace(TINY_MODEL, conditioned=False), seed=0)
        out = fake_output(model, utt)
        # overwrite predictions with the exact targets
        out.mel = Tensor(utt.mel_norm)
        out.log_duration = Tensor(np.log(np.asarray(utt.track.phone_durations, dtype=np.float32)))
        out.pitch = Tensor(np.asarray(utt.track.phone_pitch, dtype=np.float32) / 100.0)
        out.energy = Tensor(np.asarray(utt.track.phone_energy, dtype=np.float32))
        total, comps = loss_components(out, utt, cfg)
        assert float(total.data) == pytest.approx(0.0, abs=1e-9)
        assert all(v == pytest.approx(0.0, abs=1e-9) for v in comps.values())

    def test_zero_weights_zero_total(self, data):
        utt = data.utterances[0]
        cfg = TrainConfig(steps=1, mel_weight=0, duration_weight=0, pitch_weight=0, energy_weight=0)
        model = AcousticModel(dataclasses.replace(TINY_MODEL, conditioned=False), seed=0)
        total, _ = loss_components(fake_output(model, utt), utt, cfg)
        assert float(total.data) == 0.0

    def test_components_match_brute_force(self, data):
        utt = data.utterances[1]
        cfg = TrainConfig(steps=1)
        model = AcousticModel(dataclasses.replace(TINY_MODEL, conditioned=False), seed=1)
        out = fake_output(model, utt)
        total, comps = loss_components(out, utt, cfg)

        mel = np.abs(out.mel.data - utt.mel_norm).mean()
        dur = ((out.log_duration.data - np.log(np.asarray(utt.track.phone_durations))) ** 2).mean()
        hz = np.asarray(utt.track.phone_pitch)
        mask = hz > 0
        pit = ((out.pitch.data[mask] - hz[mask] / 100.0) ** 2).mean()
        ene = ((out.energy.data - np.asarray(utt.track.phone_energy)) ** 2).mean()
        assert comps["mel"] == pytest.approx(mel, rel=1e-5)
        assert comps["duration"] == pytest.approx(dur, rel=1e-5)
        assert comps["pitch"] == pytest.approx(pit, rel=1e-5)
        assert comps["energy"] == pytest.approx(ene, rel=1e-5)
        expected_total = 1.0 * mel + 0.1 * dur + 0.1 * pit + 0.1 * ene
        assert float(total.data) == pytest.approx(expected_total, rel=1e-5)
        assert all(v >= 0 for v in comps.values())

    def test_shape_mismatch_rejected(self, data):
        utt = data.utterances[0]
        cfg = TrainConfig(steps=1)
        model = AcousticModel(dataclasses.replace(TINY_MODEL, conditioned=False), seed=0)
        out = fake_output(model, utt)
        out.mel = Tensor(np.zeros((3, 80), dtype=np.float32))
        with pytest.raises(ValueError, match="mel shape"):
            loss_components(out, utt, cfg)


class TestRegimeDataDiscipline:
    def test_msms_sees_all_speakers(self, data):
        records = training_records(SystemKind("msms"), data)
        assert {u.speaker for u in records} == {1, 2, 6}

    def test_single_speaker_filtered(self, data):
        records = training_records(SystemKind("single_speaker", target_speaker=2), data)
        assert {u.speaker for u in records} == {2}

    def test_finetune_phase_filtered(self, data):
        sys = SystemKind("pretrain_finetune", target_speaker=1)
        assert {u.speaker for u in training_records(sys, data, phase="pretrain")} == {1, 2, 6}
        assert {u.speaker for u in training_records(sys, data, phase="finetune")} == {1}

    def test_empty_target_rejected(self, data):
        with pytest.raises(ValueError, match="no training records"):
            training_records(SystemKind("single_speaker", target_speaker=5), data)

    def test_multi_speaker_style_pinned(self, data):
        sys = SystemKind("multi_speaker")
        utt_longform = next(u for u in data.utterances if u.style_index == 1)
        cond = conditioning_for(sys, utt_longform)
        assert cond.style_index == training.CONSTANT_STYLE_INDEX

    def test_msms_uses_manifest_style(self, data):
        utt_longform = next(u for u in data.utterances if u.style_index == 1)
        assert conditioning_for(SystemKind("msms"), utt_longform).style_index == 1


@pytest.fixture(scope="module")
def short_run(data):
    cfg = TrainConfig(steps=12, batch_size=4, seed=5, validate_every=6, peak_lr=5e-4)
    model, log = training.train(SystemKind("msms"), data, TINY_MODEL, cfg)
    return model, log


class TestTrainLoop:

    def test_metrics_log_structure(self, short_run):
        _, log = short_run
        assert all({"phase", "step", "train", "val"} <= set(e) for e in log)
        assert log[0]["step"] == 0
        assert "mel_per_speaker" in log[0]["val"]

    def test_validation_loss_decreases(self, data, short_run):
        _, log = short_run
        assert log[-1]["val"]["loss"] < log[0]["val"]["loss"]

    def test_checkpoint_round_trip_validation_identical(self, data, short_run, tmp_path):
        model, _ = short_run
        cfg = TrainConfig(steps=1, seed=5)
        before = validation_metrics(model, SystemKind("msms"), data, cfg)
        save_model(tmp_path / "m.ckpt", model)
        from msmslab.acoustic import load_model
        loaded, _ = load_model(tmp_path / "m.ckpt")
        after = validation_metrics(loaded, SystemKind("msms"), data, cfg)
        assert before["loss"] == after["loss"]  # zero ulps
        assert before["mel_per_speaker"] == after["mel_per_speaker"]

    def test_msms_and_multispeaker_step0_match(self, data):
        # conditioning projections start at zero, so the two regimes coincide at step 0
        cfg = TrainConfig(steps=1, batch_size=2, seed=9, validate_every=1)
        _, log_a = training.train(SystemKind("msms"), data, TINY_MODEL, cfg)
        _, log_b = training.train(SystemKind("multi_speaker"), data, TINY_MODEL, cfg)
        assert log_a[0]["train"]["mel"] == pytest.approx(log_b[0]["train"]["mel"], rel=1e-6)

    def test_training_deterministic(self, data):
        cfg = TrainConfig(steps=3, batch_size=2, seed=11, validate_every=3)

        def run():
            model, _ = training.train(SystemKind("multi_speaker"), data, TINY_MODEL, cfg)
            return b"".join(p.data.tobytes() for p in model.params.values())

        assert run() == run()


class TestPretrainFinetune:
    def test_phases_logged_and_target_only(self, data):
        pre = TrainConfig(steps=8, batch_size=3, seed=3, validate_every=4, peak_lr=5e-4)
        ft = TrainConfig(steps=2, batch_size=3, seed=4, validate_every=1, peak_lr=2e-4)
        model, log = training.pretrain_finetune(1, data, TINY_MODEL, pre, ft)
        phases = {e["phase"] for e in log}
        assert phases == {"pretrain", "finetune"}
        assert not model.config.conditioned

    def test_desk_ratio_default(self):
        # documented desk-scale default preserves the full-scale 20:1 ratio
        assert 2000 // 100 == 20


@pytest.fixture(scope="module")
def eval_tree(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("evalset")
    cfg = TrainConfig(steps=2, batch_size=2, seed=7, validate_every=2)
    model, _ = training.train(SystemKind("msms"), data, TINY_MODEL, cfg)
    ckpt = out / "msms.ckpt"
    save_model(ckpt, model, extra={"system": "msms"})

    clip, _ = corpus.render_utterance([2, 7, 12, 41], corpus.default_speakers()[0],
                                      corpus.TTS_STYLE, seed=3)
    mel = dsp.mel_spectrogram(dsp.pre_emphasis(clip)).frames
    vmodel = voc.Vocoder(voc.VocoderConfig(rnn_hidden=16, embed_channels=8, fc_hidden=32),
                         seed=0, mel_mean=mel.mean(axis=0), mel_std=np.maximum(mel.std(axis=0), 1e-3))
    vpath = out / "voc1.ckpt"
    voc.save_vocoder(vpath, vmodel, speaker_id=1)

    sentences = corpus.sample_eval_sentences(2, seed=31)[:4]
    systems = {
        "msms_longform": (SystemKind("msms", inference_style="LongForm"), ckpt),
        "msms_tts": (SystemKind("msms", inference_style="TTS"), ckpt),
    }
    index = training.synthesize_eval_set(out / "tree", systems, [1], sentences, data,
                                         seed=13, vocoder_paths={1: vpath})
    return out, index, sentences


class TestSynthesizeEvalSet:
    def test_index_rows_reference_existing_files(self, eval_tree):
        out, index, sentences = eval_tree
        rows = training.load_eval_index(index)
        assert len(rows) == 2 * len(sentences)
        for row in rows:
            assert (index.parent / row["mel"]).exists()
            assert row["wav"] is not None and (index.parent / row["wav"]).exists()

    def test_directory_layout(self, eval_tree):
        out, index, sentences = eval_tree
        rows = training.load_eval_index(index)
        for row in rows:
            assert row["wav"].startswith(f"{row['system']}/voice{row['voice']}/{row['domain']}/")

    def test_missing_checkpoint_rejected(self, eval_tree, data):
        out, _, sentences = eval_tree
        systems = {"broken": (SystemKind("msms"), out / "nope.ckpt")}
        with pytest.raises(FileNotFoundError, match="missing checkpoint"):
            training.synthesize_eval_set(out / "x", systems, [1], sentences, data)

    def test_resynthesis_identical(self, eval_tree, data, tmp_path):
        out, index, sentences = eval_tree
        systems = {"msms_tts": (SystemKind("msms", inference_style="TTS"), out / "msms.ckpt")}
        a = training.synthesize_eval_set(tmp_path / "a", systems, [1], sentences, data, seed=13)
        b = training.synthesize_eval_set(tmp_path / "b", systems, [1], sentences, data, seed=13)
        assert a.read_bytes() == b.read_bytes()
        row = training.load_eval_index(a)[0]
        assert (tmp_path / "a" / row["mel"]).read_bytes() == (tmp_path / "b" / row["mel"]).read_bytes()

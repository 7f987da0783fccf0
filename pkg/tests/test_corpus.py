import numpy as np
import pytest

from msmslab import corpus, dsp


def small_speakers():
    # two voices, one per style, with budgets just past the 20-utterance floor
    return [
        corpus.SpeakerSpec(id=1, median_pitch=188.0, timbre_seed=1000, data_minutes=1.9, style="TTS"),
        corpus.SpeakerSpec(id=6, median_pitch=159.0, timbre_seed=1005, data_minutes=1.9, style="LongForm"),
    ]


class TestDefaultSpeakers:
    def test_voice_1(self):
        s = corpus.default_speakers()[0]
        assert s.median_pitch == 188.0
        assert s.style == "TTS"

    def test_voice_7(self):
        s = corpus.default_speakers()[6]
        assert s.median_pitch == 84.0
        assert s.style == "LongForm"

    def test_style_counts(self):
        speakers = corpus.default_speakers()
        assert sum(1 for s in speakers if s.style == "TTS") == 5
        assert sum(1 for s in speakers if s.style == "LongForm") == 2

    def test_budget_ratio_voice1_voice4(self):
        speakers = corpus.default_speakers()
        assert speakers[0].data_minutes / speakers[3].data_minutes == pytest.approx(37 / 11)

    def test_median_pitch_bounds_enforced(self):
        with pytest.raises(ValueError):
            corpus.SpeakerSpec(id=9, median_pitch=300.0, timbre_seed=0, data_minutes=1, style="TTS")


class TestRenderUtterance:
    def test_base_80ms_phone_is_8_frames_tts(self):
        # phoneme id 2 has the 80 ms intrinsic length; keep it non-final
        assert corpus.phone_duration_frames(2, corpus.TTS_STYLE, phrase_final=False) == 8

    def test_base_80ms_phone_is_9_frames_longform(self):
        # 80 ms * 1.15 = 92 ms -> 9 frames, round to nearest
        assert corpus.phone_duration_frames(2, corpus.LONGFORM_STYLE, phrase_final=False) == 9

    def test_deterministic(self):
        spk = small_speakers()[0]
        phonemes = [2, 7, 12, 44, 3, 30, 41]
        a, track_a = corpus.render_utterance(phonemes, spk, corpus.TTS_STYLE, seed=5)
        b, track_b = corpus.render_utterance(phonemes, spk, corpus.TTS_STYLE, seed=5)
        assert np.array_equal(a.samples, b.samples)
        assert track_a.phone_pitch == track_b.phone_pitch

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            corpus.render_utterance([], small_speakers()[0], corpus.TTS_STYLE, seed=0)

    def test_durations_match_frame_count(self):
        spk = small_speakers()[0]
        sent = corpus._sample_sentence(corpus.stable_rng(0, "t"), "dialog")
        clip, track = corpus.render_utterance(sent, spk, corpus.TTS_STYLE, seed=1)
        assert track.total_frames == dsp.frame_count(len(clip))

    def test_pitch_contour_recovered(self):
        # extractor median error over voiced phones stays under 5 Hz
        spk = small_speakers()[0]
        sent = corpus._sample_sentence(corpus.stable_rng(1, "t"), "books")
        clip, track = corpus.render_utterance(sent, spk, corpus.TTS_STYLE, seed=2)
        measured = dsp.phone_average(dsp.extract_pitch(clip), track.phone_durations, voiced_only=True)
        gt = np.array(track.phone_pitch)
        errors = np.abs(measured[gt > 0] - gt[gt > 0])
        assert np.median(errors) < 5.0

    def test_median_pitch_tracks_style_scale(self):
        for spk, style in [(small_speakers()[0], corpus.TTS_STYLE), (small_speakers()[1], corpus.LONGFORM_STYLE)]:
            voiced = []
            for i in range(6):
                sent = corpus._sample_sentence(corpus.stable_rng(i, "p"), "books")
                clip, _ = corpus.render_utterance(sent, spk, style, seed=i)
                pitch = dsp.extract_pitch(clip)
                voiced.extend(pitch[pitch > 0])
            target = spk.median_pitch * style.pitch_scale
            assert abs(np.median(voiced) - target) / target < 0.05

    def test_rate_axis_separates_styles(self):
        # mean frames per rate-carrying phone: LongForm / TTS = 1.15 +/- 2%
        rng = corpus.stable_rng(3, "ratio")
        sentences = [corpus._sample_sentence(rng, "books") for _ in range(60)]
        means = {}
        for name, style in corpus.STYLES.items():
            total, count = 0.0, 0
            for sent in sentences:
                finals = corpus._phrase_final_flags(sent)
                durs = [corpus.phone_duration_frames(p, style, f) for p, f in zip(sent, finals)]
                mask = corpus.rate_phone_mask(sent)
                total += np.asarray(durs, dtype=float)[mask].sum()
                count += int(mask.sum())
            means[name] = total / count
        ratio = means["LongForm"] / means["TTS"]
        assert abs(ratio - 1.15) / 1.15 < 0.02


class TestPairStructure:
    def test_pair_properties_shared_across_speakers(self):
        # coarticulation structure is a property of the phoneme pair, not the voice
        a, b = small_speakers()
        freqs = np.linspace(100, 6000, 64)
        env_a = corpus._envelope(freqs, 3, a, neighbor=11)
        env_b = corpus._envelope(freqs, 3, b, neighbor=11)
        # same pair warp under different speaker warps: the ratio is smooth
        # and speaker-specific, while the pair key itself is deterministic
        assert corpus._pair_glide(3, 11) == corpus._pair_glide(3, 11)
        assert corpus._pair_amp_slope(3, 11) == corpus._pair_amp_slope(3, 11)
        assert corpus._pair_glide(3, 11) != corpus._pair_glide(11, 3)
        assert env_a.shape == env_b.shape

    def test_edge_phones_have_no_pair_effects(self):
        assert corpus._pair_glide(5, None) == 0.0
        assert corpus._pair_amp_slope(5, None) == 0.0
        assert corpus._pair_breathiness(5, None) == 0.0

    def test_glide_preserves_median_pitch(self):
        spk = small_speakers()[0]
        sent = [2, 9, 16, 23, 2, 9, 41]  # voiced phones with assorted pair glides
        clip, track = corpus.render_utterance(sent, spk, corpus.TTS_STYLE, seed=3)
        measured = dsp.phone_average(dsp.extract_pitch(clip), track.phone_durations, voiced_only=True)
        gt = np.array(track.phone_pitch)
        errors = np.abs(measured[gt > 0] - gt[gt > 0]) / gt[gt > 0]
        assert np.median(errors) < 0.04


class TestEvalSentences:
    def test_counts(self):
        sentences = corpus.sample_eval_sentences(75, seed=11)
        assert len(sentences) == 300
        for domain in corpus.DOMAINS:
            assert sum(1 for s in sentences if s["domain"] == domain) == 75

    def test_deterministic(self):
        assert corpus.sample_eval_sentences(10, seed=4) == corpus.sample_eval_sentences(10, seed=4)

    def test_knowledge_domain_duration(self):
        sentences = corpus.sample_eval_sentences(75, seed=11)
        secs = [corpus.estimate_seconds(s["phonemes"], corpus.TTS_STYLE)
                for s in sentences if s["domain"] == "knowledge"]
        assert abs(np.mean(secs) - 8.03) / 8.03 < 0.15

    def test_exclusion(self):
        first = corpus.sample_eval_sentences(5, seed=2)
        excluded = [s["phonemes"] for s in first]
        second = corpus.sample_eval_sentences(5, seed=2, exclude=excluded)
        assert all(s["phonemes"] not in excluded for s in second)


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    corpus.build_corpus(out, speakers=small_speakers(), seed=9)
    return out


class TestBuildCorpus:

    def test_coverage_map_enforced(self, built):
        records = corpus.load_manifest(built)
        allowed = {(s.id, s.style) for s in small_speakers()}
        assert all((r.speaker, r.style) in allowed for r in records)
        assert not any(r.speaker == 1 and r.style == "LongForm" for r in records)

    def test_minimum_utterances(self, built):
        records = corpus.load_manifest(built)
        for spk in small_speakers():
            assert sum(1 for r in records if r.speaker == spk.id) >= corpus.MIN_UTTERANCES_PER_SPEAKER

    def test_split_fractions(self, built):
        records = corpus.load_manifest(built)
        n_val = sum(1 for r in records if r.split == "val")
        assert 0 < n_val <= round(0.06 * len(records)) + 1

    def test_total_count_matches_recount(self, built):
        records = corpus.load_manifest(built)
        per_speaker = {}
        for r in records:
            per_speaker[r.speaker] = per_speaker.get(r.speaker, 0) + 1
        assert sum(per_speaker.values()) == len(records)

    def test_files_exist_and_features_load(self, built):
        from msmslab.tensor import load_checkpoint
        records = corpus.load_manifest(built)
        r = records[0]
        clip = dsp.read_wav(built / r.wav)
        feats = load_checkpoint(built / r.features)
        assert feats["mel"].shape == (sum(r.durations), 80)
        assert dsp.frame_count(len(clip)) == sum(r.durations)

    def test_manifest_byte_identical_across_runs(self, built, tmp_path):
        corpus.build_corpus(tmp_path / "again", speakers=small_speakers(), seed=9)
        assert (tmp_path / "again" / "manifest.jsonl").read_bytes() == (built / "manifest.jsonl").read_bytes()
        # and one rendered wav as a spot check
        rec = corpus.load_manifest(built)[3]
        assert (tmp_path / "again" / rec.wav).read_bytes() == (built / rec.wav).read_bytes()

    def test_too_small_scale_rejected(self, tmp_path):
        tiny = [corpus.SpeakerSpec(id=1, median_pitch=188.0, timbre_seed=1, data_minutes=0.2, style="TTS")]
        with pytest.raises(ValueError, match="increase the scale"):
            corpus.build_corpus(tmp_path / "tiny", speakers=tiny, seed=0)

"""Deterministic multi-speaker multi-style synthetic corpus.

Each utterance is rendered from a phoneme sequence as a harmonic source
(voiced phonemes) or shaped noise (unvoiced), filtered by a per-phoneme
formant envelope that is warped per speaker. Pitch level, speaking rate,
pitch range and phrase-final lengthening are controlled by the style, so
every prosodic quantity the models must learn has a known ground truth.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import dsp
from .dsp import AudioClip, ProsodyTrack
from .tensor import save_checkpoint

# phoneme inventory: 40 phonemes, 4 punctuation marks, 1 word boundary
N_PHONEMES = 40
PUNCTUATION_IDS = (40, 41, 42, 43)
BOUNDARY_ID = 44
INVENTORY_SIZE = 45
VOICED_IDS = frozenset(range(30))  # ids 30..39 render as noise

TABLE_HOURS = (37.0, 23.0, 13.0, 11.0, 12.0, 40.0, 24.0)
TABLE_MEDIAN_PITCH = (188.0, 112.0, 148.0, 119.0, 145.0, 159.0, 84.0)

BASE_PHONE_MS = 80.0
BOUNDARY_MS = 20.0
PUNCTUATION_MS = 120.0
PITCH_SIGMA = 0.08          # log-domain contour spread before range scaling
MIN_UTTERANCES_PER_SPEAKER = 20

DOMAINS = ("books", "knowledge", "navigation", "dialog")
# mean words per sentence, tuned so TTS-rate renders average
# 4.67 / 8.03 / 3.49 / 3.06 seconds per domain
DOMAIN_MEAN_WORDS = {"books": 13.9, "knowledge": 23.6, "navigation": 10.5, "dialog": 8.8}

# intrinsic phoneme lengths; mean is the 80 ms base, and the spread is chosen
# so frame rounding preserves the style rate ratio when averaged over the set
INTRINSIC_MS = (50.0, 70.0, 80.0, 90.0, 110.0)


@dataclass(frozen=True)
class StyleSpec:
    id: str
    rate_multiplier: float = 1.0
    pitch_scale: float = 1.0
    pitch_range_scale: float = 1.0
    final_lengthening: float = 1.0

    def __post_init__(self):
        for name in ("rate_multiplier", "pitch_scale", "pitch_range_scale", "final_lengthening"):
            if getattr(self, name) <= 0:
                raise ValueError(f"style {self.id}: {name} must be positive")


TTS_STYLE = StyleSpec("TTS")
LONGFORM_STYLE = StyleSpec("LongForm", rate_multiplier=1.15, pitch_scale=0.95,
                           pitch_range_scale=1.3, final_lengthening=1.4)
STYLES = {"TTS": TTS_STYLE, "LongForm": LONGFORM_STYLE}
STYLE_INDEX = {"TTS": 0, "LongForm": 1}


@dataclass(frozen=True)
class SpeakerSpec:
    id: int
    median_pitch: float
    timbre_seed: int
    data_minutes: float
    style: str  # the single style this speaker is recorded in

    def __post_init__(self):
        if not 80.0 <= self.median_pitch <= 200.0:
            raise ValueError(f"speaker {self.id}: median pitch {self.median_pitch} outside [80, 200] Hz")
        if self.style not in STYLES:
            raise ValueError(f"speaker {self.id}: unknown style {self.style}")


def default_speakers(minutes_per_table_hour: float = 2.0) -> list[SpeakerSpec]:
    """The seven-voice roster: five TTS voices, two long-form voices."""
    speakers = []
    for i in range(7):
        speakers.append(SpeakerSpec(
            id=i + 1,
            median_pitch=TABLE_MEDIAN_PITCH[i],
            timbre_seed=1000 + i,
            data_minutes=TABLE_HOURS[i] * minutes_per_table_hour,
            style="TTS" if i < 5 else "LongForm",
        ))
    return speakers


def stable_rng(seed: int, *parts) -> np.random.Generator:
    """Deterministic generator keyed by seed plus arbitrary labels."""
    key = [zlib.crc32(str(p).encode()) for p in parts]
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key)))


# -- deterministic timbre and duration tables ----------------------------------


def _phoneme_base_ms(phoneme: int) -> float:
    if phoneme == BOUNDARY_ID:
        return BOUNDARY_MS
    if phoneme in PUNCTUATION_IDS:
        return PUNCTUATION_MS
    return INTRINSIC_MS[phoneme % 5]


_ENVELOPE_SEED = 7720  # phoneme formants are shared across all speakers


def _base_formants(phoneme: int) -> np.ndarray:
    rng = stable_rng(_ENVELOPE_SEED, "formants", phoneme)
    f1 = 300.0 + 600.0 * rng.random()
    f2 = 900.0 + 1600.0 * rng.random()
    f3 = 2500.0 + 1500.0 * rng.random()
    return np.array([f1, f2, f3])


def _pair_jitter(phoneme: int, neighbor: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic per-ordered-pair formant warp: position and amplitude.

    Shared by every speaker, so the pair inventory is learnable from pooled
    data but under-determined by any single speaker's utterances."""
    rng = stable_rng(_ENVELOPE_SEED, "pair", phoneme, neighbor)
    return rng.uniform(0.88, 1.12, size=3), rng.uniform(0.45, 1.0, size=3)


def _harmonic_phases(phoneme: int, count: int) -> np.ndarray:
    return stable_rng(_ENVELOPE_SEED, "phase", phoneme).uniform(0.0, 2.0 * np.pi, size=count)


def _pair_amp_slope(phoneme: int, neighbor: int | None) -> float:
    """Log-slope of the within-phone amplitude ramp, keyed like the glide.

    Teacher forcing exposes only the phone's scalar RMS; the ramp shape must
    be inferred from the phone pair, which takes pooled coverage."""
    if neighbor is None:
        return 0.0
    return float(stable_rng(_ENVELOPE_SEED, "ampslope", phoneme, neighbor).uniform(-1.1, 1.1))


def _pair_breathiness(phoneme: int, neighbor: int | None) -> float:
    """Noise fraction mixed into a voiced phone, keyed by the ordered pair."""
    if neighbor is None:
        return 0.0
    return float(stable_rng(_ENVELOPE_SEED, "breath", phoneme, neighbor).uniform(0.0, 0.35))


def _pair_glide(phoneme: int, neighbor: int | None) -> float:
    """Log-slope of the within-phone pitch movement toward the next phone.

    Keyed by the ordered pair and shared by all speakers; the phone's median
    pitch is unaffected (the glide is centered), so the per-phone ground
    truth stays exact while frame-level harmonics depend on the pair."""
    if neighbor is None:
        return 0.0
    return float(stable_rng(_ENVELOPE_SEED, "glide", phoneme, neighbor).uniform(-0.2, 0.2))


def _envelope(freqs: np.ndarray, phoneme: int, speaker: SpeakerSpec,
              neighbor: int | None = None, blend: float = 0.4) -> np.ndarray:
    """Formant envelope of one phone half, colored by its neighbor.

    The phoneme's formants are global; the speaker contributes a vocal-tract
    scale and a spectral tilt. Coarticulation mixes in the neighbor's
    formants and applies a pair-specific warp, so spectra depend on phoneme
    pairs: the pair inventory is shared by all speakers but far too large to
    cover from one speaker's data alone.
    """
    centers = _base_formants(phoneme)
    amps = np.array([1.0, 0.55, 0.3])
    if neighbor is not None and neighbor != phoneme:
        centers = (1.0 - blend) * centers + blend * _base_formants(neighbor)
        center_warp, amp_warp = _pair_jitter(phoneme, neighbor)
        centers = centers * center_warp
        amps = amps * amp_warp
    shift = 0.94 + 0.12 * stable_rng(speaker.timbre_seed, "shift").random()
    tilt = -0.15 + 0.3 * stable_rng(speaker.timbre_seed, "tilt").random()
    centers = centers * shift
    widths = np.array([90.0, 140.0, 220.0])
    env = np.full(freqs.shape, 0.02)
    for c, w, a in zip(centers, widths, amps):
        env = env + a * np.exp(-0.5 * ((freqs - c) / w) ** 2)
    return env * np.power(np.maximum(freqs, 50.0) / 1000.0, tilt)


def phone_duration_frames(phoneme: int, style: StyleSpec, phrase_final: bool) -> int:
    ms = _phoneme_base_ms(phoneme) * style.rate_multiplier
    if phrase_final and phoneme < N_PHONEMES:
        ms *= style.final_lengthening
    return max(1, int(np.round(ms / 10.0)))


def _phrase_final_flags(phonemes) -> list[bool]:
    """A regular phone is phrase-final when followed by punctuation or the end."""
    flags = []
    n = len(phonemes)
    for i, p in enumerate(phonemes):
        if p >= N_PHONEMES:
            flags.append(False)
            continue
        nxt = next((q for q in phonemes[i + 1:] if q != BOUNDARY_ID), None)
        flags.append(nxt is None or nxt in PUNCTUATION_IDS)
    return flags


def render_utterance(phonemes, speaker: SpeakerSpec, style: StyleSpec, seed: int):
    """Render audio plus the exact prosody used to produce it."""
    phonemes = list(phonemes)
    if not phonemes:
        raise ValueError("cannot render an empty phoneme sequence")
    if any(not 0 <= p < INVENTORY_SIZE for p in phonemes):
        raise ValueError("phoneme id outside inventory")

    rng = stable_rng(seed, "render", speaker.id, style.id)
    finals = _phrase_final_flags(phonemes)
    durations = [phone_duration_frames(p, style, f) for p, f in zip(phonemes, finals)]

    pitches = []
    for p in phonemes:
        if p in VOICED_IDS:
            contour = float(np.exp(rng.normal() * PITCH_SIGMA * style.pitch_range_scale))
            hz = speaker.median_pitch * style.pitch_scale * contour
            pitches.append(float(np.clip(hz, 62.0, 350.0)))
        else:
            rng.normal()  # keep the stream aligned across voicing patterns
            pitches.append(0.0)

    total_samples = sum(durations) * dsp.HOP - dsp.HOP // 2
    signal = np.zeros(total_samples)
    fs = dsp.SAMPLE_RATE
    pos = 0
    fade = np.linspace(0.0, 1.0, 72)  # 3 ms edge ramps against clicks
    regular = [p if p < N_PHONEMES else None for p in phonemes]
    for i, (p, dur, hz) in enumerate(zip(phonemes, durations, pitches)):
        n = min(dur * dsp.HOP, total_samples - pos)
        if n <= 0:
            break
        prev_p = regular[i - 1] if i > 0 else None
        next_p = regular[i + 1] if i + 1 < len(regular) else None
        if p in VOICED_IDS:
            n_harm = int(min(40, 11000.0 // hz))
            h = np.arange(1, n_harm + 1)
            # envelope morphs from the previous phoneme's color into the
            # next one's over the phone: spectra depend on the phone pair
            amps_in = _envelope(h * hz, p, speaker, neighbor=prev_p)
            amps_out = _envelope(h * hz, p, speaker, neighbor=next_p)
            scale = 1.0 / (max(np.abs(amps_in).sum(), np.abs(amps_out).sum()) + 1e-9)
            # phases are a fixed per-phoneme property; renders are then fully
            # determined by envelope, pitch and duration, so held-out error
            # measures structure, not phase luck
            phases = _harmonic_phases(p, n_harm)
            u = np.linspace(0.0, 1.0, n)
            f0 = hz * np.exp(_pair_glide(p, next_p) * (u - 0.5))
            phase0 = 2.0 * np.pi * np.cumsum(f0) / fs
            mix = u[:, None]
            amps = (1.0 - mix) * amps_in[None, :] + mix * amps_out[None, :]
            seg = (np.sin(phase0[:, None] * h[None, :] + phases[None, :])
                   * amps * scale).sum(axis=1)
            breath = _pair_breathiness(p, next_p)
            if breath > 0.0:
                hiss = np.fft.irfft(np.fft.rfft(rng.normal(size=n))
                                    * _envelope(np.fft.rfftfreq(n, d=1.0 / fs), p, speaker, neighbor=next_p), n=n)
                hiss *= np.sqrt((seg * seg).mean()) / (np.sqrt((hiss * hiss).mean()) + 1e-9)
                seg = (1.0 - breath) * seg + breath * hiss
            seg *= 0.45 * np.exp(_pair_amp_slope(p, next_p) * (u - 0.5))
        elif p < N_PHONEMES:
            noise = rng.normal(size=n)
            spec = np.fft.rfft(noise)
            freqs = np.fft.rfftfreq(n, d=1.0 / fs)
            half = (_envelope(freqs, p, speaker, neighbor=prev_p)
                    + _envelope(freqs, p, speaker, neighbor=next_p)) / 2.0
            seg = np.fft.irfft(spec * half, n=n)
            seg *= 0.08 / (np.sqrt((seg * seg).mean()) + 1e-9)
            seg *= np.exp(_pair_amp_slope(p, next_p) * (np.arange(n) / max(1, n - 1) - 0.5))
        else:
            seg = np.zeros(n)
        signal[pos:pos + n] = seg
        pos += n

    # ramp phone edges in place
    pos = 0
    for dur in durations:
        n = min(dur * dsp.HOP, total_samples - pos)
        k = min(fade.size, n // 2)
        if k:
            signal[pos:pos + k] *= fade[:k]
            signal[pos + n - k:pos + n] *= fade[:k][::-1]
        pos += n

    peak = np.abs(signal).max()
    if peak > 0.85:
        signal *= 0.85 / peak
    clip = AudioClip(signal)

    emphasized = dsp.pre_emphasis(clip)
    frame_energy = dsp.extract_energy(emphasized)
    phone_energy = dsp.phone_average(frame_energy, durations)
    track = ProsodyTrack(
        phone_durations=durations,
        phone_pitch=pitches,
        phone_energy=[float(e) for e in phone_energy],
    )
    assert track.total_frames == dsp.frame_count(len(clip))
    return clip, track


# -- sentence sampling -----------------------------------------------------------


def _sample_sentence(rng: np.random.Generator, domain: str) -> list[int]:
    mean_words = DOMAIN_MEAN_WORDS[domain]
    n_words = max(2, int(round(rng.normal(mean_words, 0.15 * mean_words))))
    phonemes: list[int] = []
    words_in_phrase = 0
    phrase_len = int(rng.integers(2, 5))
    for w in range(n_words):
        if w > 0 and words_in_phrase > 0:
            phonemes.append(BOUNDARY_ID)
        word_len = int(rng.integers(2, 6))
        phonemes.extend(int(x) for x in rng.integers(0, N_PHONEMES, size=word_len))
        words_in_phrase += 1
        if words_in_phrase >= phrase_len and w < n_words - 1:
            phonemes.append(int(rng.choice(PUNCTUATION_IDS)))
            words_in_phrase = 0
            phrase_len = int(rng.integers(2, 5))
    phonemes.append(int(rng.choice(PUNCTUATION_IDS)))
    return phonemes


def sample_eval_sentences(n_per_domain: int, seed: int, exclude=()) -> list[dict]:
    """Deterministic domain-tagged sentences, disjoint from ``exclude``."""
    excluded = {tuple(e) for e in exclude}
    out = []
    for domain in DOMAINS:
        rng = stable_rng(seed, "eval-sentences", domain)
        count = 0
        while count < n_per_domain:
            phonemes = _sample_sentence(rng, domain)
            if tuple(phonemes) in excluded:
                continue
            out.append({
                "sentence_id": f"{domain}_{count:04d}",
                "domain": domain,
                "phonemes": phonemes,
            })
            count += 1
    return out


# -- corpus assembly ---------------------------------------------------------------


@dataclass
class UtteranceRecord:
    utt: str
    speaker: int
    style: str
    domain: str
    phonemes: list
    durations: list
    pitch: list
    energy: list
    wav: str
    features: str
    split: str

    @property
    def style_index(self) -> int:
        return STYLE_INDEX[self.style]


def estimate_seconds(phonemes, style: StyleSpec) -> float:
    finals = _phrase_final_flags(phonemes)
    return sum(phone_duration_frames(p, style, f) for p, f in zip(phonemes, finals)) * dsp.HOP / dsp.SAMPLE_RATE


def rate_phone_mask(phonemes) -> np.ndarray:
    """Phones that carry the speaking-rate axis: regular phonemes that are
    not phrase-final, so the final-lengthening axis cannot leak in."""
    finals = _phrase_final_flags(phonemes)
    return np.array([p < N_PHONEMES and not f for p, f in zip(phonemes, finals)])


def mean_rate_frames(phonemes, durations) -> float:
    """Mean frames per rate-carrying phone, the measurable speaking-rate statistic."""
    mask = rate_phone_mask(phonemes)
    durations = np.asarray(durations, dtype=np.float64)
    if not mask.any():
        return float("nan")
    return float(durations[mask].mean())


def build_corpus(out_dir, speakers=None, seed: int = 0) -> Path:
    """Render every speaker's budget of utterances and write the manifest.

    Layout: ``manifest.jsonl``, ``meta.json``, ``wav/``, ``feat/``. Budgets come
    from each speaker's ``data_minutes``; each speaker appears in exactly the
    one style assigned by the coverage map.
    """
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    (out_dir / "feat").mkdir(parents=True, exist_ok=True)
    speakers = list(speakers) if speakers is not None else default_speakers()
    if len({s.id for s in speakers}) != len(speakers):
        raise ValueError("speaker ids must be unique")

    records: list[UtteranceRecord] = []
    train_mels = []
    for speaker in speakers:
        style = STYLES[speaker.style]
        sent_rng = stable_rng(seed, "sentences", speaker.id)
        budget = speaker.data_minutes * 60.0
        rendered = 0.0
        idx = 0
        speaker_records = []
        while rendered < budget:
            domain = DOMAINS[int(sent_rng.integers(0, len(DOMAINS)))]
            phonemes = _sample_sentence(sent_rng, domain)
            utt_id = f"v{speaker.id}_{idx:05d}"
            clip, track = render_utterance(phonemes, speaker, style, seed=seed * 100003 + speaker.id * 1009 + idx)
            wav_rel = f"wav/{utt_id}.wav"
            feat_rel = f"feat/{utt_id}.msms"
            dsp.write_wav(out_dir / wav_rel, clip)
            mel = dsp.mel_spectrogram(dsp.pre_emphasis(clip))
            save_checkpoint(out_dir / feat_rel, {"mel": mel.frames.astype(np.float32)})
            split = "val" if idx % 20 == 19 else "train"
            rec = UtteranceRecord(
                utt=utt_id, speaker=speaker.id, style=speaker.style, domain=domain,
                phonemes=[int(p) for p in phonemes],
                durations=[int(d) for d in track.phone_durations],
                pitch=[round(float(p), 4) for p in track.phone_pitch],
                energy=[round(float(e), 6) for e in track.phone_energy],
                wav=wav_rel, features=feat_rel, split=split,
            )
            speaker_records.append(rec)
            if split == "train":
                train_mels.append(mel.frames)
            rendered += clip.duration
            idx += 1
        if len(speaker_records) < MIN_UTTERANCES_PER_SPEAKER:
            raise ValueError(
                f"speaker {speaker.id}: budget of {speaker.data_minutes:.2f} minutes yields only "
                f"{len(speaker_records)} utterances (need >= {MIN_UTTERANCES_PER_SPEAKER}); increase the scale")
        records.extend(speaker_records)

    stacked = np.concatenate(train_mels, axis=0)
    meta = {
        "seed": seed,
        "speakers": [asdict(s) for s in speakers],
        "styles": {name: asdict(s) for name, s in STYLES.items()},
        "style_index": STYLE_INDEX,
        "inventory_size": INVENTORY_SIZE,
        "mel_mean": [round(float(v), 6) for v in stacked.mean(axis=0)],
        "mel_std": [round(float(v), 6) for v in np.maximum(stacked.std(axis=0), 1e-3)],
    }
    with open(out_dir / "manifest.jsonl", "w") as f:
        for rec in records:
            f.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
    with open(out_dir / "meta.json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    return out_dir


def load_manifest(corpus_dir) -> list[UtteranceRecord]:
    corpus_dir = Path(corpus_dir)
    records = []
    with open(corpus_dir / "manifest.jsonl") as f:
        for line in f:
            records.append(UtteranceRecord(**json.loads(line)))
    return records


def load_meta(corpus_dir) -> dict:
    with open(Path(corpus_dir) / "meta.json") as f:
        return json.load(f)

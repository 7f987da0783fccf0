"""Objective evaluation: speaker similarity, listening-test statistics,
pitch distributions and style-transfer scoring.

The speaker embedding is a fixed recipe, not a trained network: summary
statistics of the Mel, pitch and energy tracks, zero-padded to 256 and
rotated by a constant seeded orthonormal matrix. Deterministic by
construction, which makes every similarity number reproducible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import corpus as corpus_mod
from . import dsp
from .corpus import STYLES, VOICED_IDS, StyleSpec
from .dsp import AudioClip

logger = logging.getLogger(__name__)

EMBED_DIM = 256
_ROTATION_SEED = 20240917
_rotation_cache: np.ndarray | None = None

BASE_RATE_FRAMES = 8.0  # inventory-mean 80 ms phone at 10 ms shift


def _rotation() -> np.ndarray:
    global _rotation_cache
    if _rotation_cache is None:
        rng = np.random.default_rng(_ROTATION_SEED)
        q, r = np.linalg.qr(rng.normal(size=(EMBED_DIM, EMBED_DIM)))
        _rotation_cache = q * np.sign(np.diag(r))  # fix signs so the factorization is unique
    return _rotation_cache


def embed_features(mel: np.ndarray, frame_pitch: np.ndarray, frame_energy: np.ndarray) -> np.ndarray:
    """256-dim unit vector from Mel/pitch/energy tracks.

    Layout before rotation: per-band mel mean (80), per-band mel std (80),
    voiced-pitch mean/std/median scaled to hundreds of Hz (3), energy
    mean/std (2), mean absolute frame-to-frame mel delta per band (80),
    voicing rate (1); zero-padded to 256.
    """
    mel = np.asarray(mel, dtype=np.float64)
    frame_pitch = np.asarray(frame_pitch, dtype=np.float64)
    frame_energy = np.asarray(frame_energy, dtype=np.float64)
    voiced = frame_pitch[frame_pitch > 0]
    if voiced.size:
        pitch_stats = np.array([voiced.mean(), voiced.std(), np.median(voiced)]) / 100.0
    else:
        logger.warning("embed_features: clip has no voiced frames; pitch statistics set to 0")
        pitch_stats = np.zeros(3)
    delta = np.abs(np.diff(mel, axis=0)).mean(axis=0) if mel.shape[0] > 1 else np.zeros(mel.shape[1])
    feats = np.concatenate([
        mel.mean(axis=0),
        mel.std(axis=0),
        pitch_stats,
        [frame_energy.mean(), frame_energy.std()],
        delta,
        [voiced.size / max(1, frame_pitch.size)],
    ])
    padded = np.zeros(EMBED_DIM)
    padded[:feats.size] = feats
    rotated = _rotation() @ padded
    return rotated / np.linalg.norm(rotated)


def embed_clip(clip: AudioClip) -> np.ndarray:
    """Embedding straight from audio, deriving all three tracks."""
    emphasized = dsp.pre_emphasis(clip)
    mel = dsp.mel_spectrogram(emphasized).frames
    return embed_features(mel, dsp.extract_pitch(clip), dsp.extract_energy(emphasized))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def embedding_mse(a: np.ndarray, b: np.ndarray) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float((d * d).mean())


def similarity_report(system_embeddings: dict, reference: str) -> list[dict]:
    """Sentence-paired MSE and cosine of every system against the reference.

    ``system_embeddings`` maps system name -> {sentence_id: embedding}. Rows
    come back reference first, then ascending MSE, with the layout
    (system, mse, cosine).
    """
    if reference not in system_embeddings:
        raise ValueError(f"reference system {reference!r} not present")
    ref = system_embeddings[reference]
    rows = []
    for name, embeds in system_embeddings.items():
        if set(embeds) != set(ref):
            missing = set(ref).symmetric_difference(embeds)
            raise ValueError(f"system {name!r} sentence set differs from reference: {sorted(missing)[:5]}")
        mses = [embedding_mse(embeds[s], ref[s]) for s in sorted(ref)]
        cosines = [cosine(embeds[s], ref[s]) for s in sorted(ref)]
        rows.append({"system": name, "mse": float(np.mean(mses)), "cosine": float(np.mean(cosines))})
    rows.sort(key=lambda r: (r["system"] != reference, r["mse"]))
    return rows


# -- listening-test statistics ---------------------------------------------------


def abx_binomial(wins_a: int, n: int) -> float:
    """Exact two-sided binomial p-value at null probability one half."""
    if n <= 0:
        raise ValueError("binomial test needs at least one trial")
    if not 0 <= wins_a <= n:
        raise ValueError(f"wins {wins_a} outside 0..{n}")
    p_obs = math.comb(n, wins_a)
    total = sum(math.comb(n, k) for k in range(n + 1) if math.comb(n, k) <= p_obs)
    return min(1.0, total / 2.0 ** n)


def mos_aggregate(ratings, group_key=None) -> dict:
    """Mean, normal-approximation 95% CI and score histogram per group.

    ``ratings`` is an iterable of dicts with a ``score`` in 1..5;
    ``group_key`` picks the grouping value (default: one overall group).
    """
    groups: dict = {}
    for r in ratings:
        score = int(r["score"])
        if not 1 <= score <= 5:
            raise ValueError(f"MOS score {score} outside 1..5")
        key = group_key(r) if group_key else "overall"
        groups.setdefault(key, []).append(score)
    if not groups:
        logger.warning("mos_aggregate: no ratings; empty report")
    out = {}
    for key in sorted(groups, key=str):
        scores = np.asarray(groups[key], dtype=np.float64)
        n = scores.size
        sd = float(scores.std(ddof=1)) if n > 1 else 0.0
        half = 1.96 * sd / math.sqrt(n) if n else 0.0
        hist = np.bincount(groups[key], minlength=6)[1:6]
        out[key] = {
            "mean": float(scores.mean()),
            "ci_low": float(scores.mean() - half),
            "ci_high": float(scores.mean() + half),
            "n": int(n),
            "histogram": [int(c) for c in hist],
        }
    return out


# -- pitch distributions ------------------------------------------------------------


PITCH_HIST_EDGES = np.arange(50.0, 402.0, 2.0)


@dataclass
class PitchDistribution:
    histogram: np.ndarray
    median: float
    voiced_frames: int
    empty: bool = False


def pitch_distribution(frame_pitch_tracks) -> PitchDistribution:
    """Normalized 2 Hz histogram over 50-400 Hz plus the median, voiced only."""
    voiced = np.concatenate([np.asarray(t)[np.asarray(t) > 0] for t in frame_pitch_tracks]) \
        if frame_pitch_tracks else np.zeros(0)
    if voiced.size == 0:
        logger.warning("pitch_distribution: no voiced frames")
        return PitchDistribution(np.zeros(PITCH_HIST_EDGES.size - 1), float("nan"), 0, empty=True)
    counts, _ = np.histogram(voiced, bins=PITCH_HIST_EDGES)
    total = counts.sum()
    hist = counts / total if total else counts.astype(float)
    return PitchDistribution(hist, float(np.median(voiced)), int(voiced.size))


# -- style transfer scoring -----------------------------------------------------------


@dataclass
class ProsodyMeasurement:
    median_pitch_hz: float
    mean_rate_frames: float


def measure_prosody(phonemes, durations, phone_pitch_hz) -> ProsodyMeasurement:
    """Style-relevant statistics of one utterance's phone-level prosody.

    Pitch is the median over phones whose phoneme is voiced by inventory;
    rate is the mean duration of non-phrase-final regular phones.
    """
    pitch = np.asarray(phone_pitch_hz, dtype=np.float64)
    voiced_mask = np.array([p in VOICED_IDS for p in phonemes])
    voiced = pitch[voiced_mask]
    median = float(np.median(voiced)) if voiced.size else float("nan")
    return ProsodyMeasurement(median, corpus_mod.mean_rate_frames(phonemes, durations))


def measure_prosody_from_clip(clip: AudioClip, phonemes, durations) -> ProsodyMeasurement:
    """Audio-path variant: pitch measured by the extractor, not taken as given."""
    per_phone = dsp.phone_average(dsp.extract_pitch(clip), durations, voiced_only=True)
    return measure_prosody(phonemes, durations, per_phone)


@dataclass
class StyleTransferScore:
    pitch_err: float
    rate_err: float
    measured_pitch_hz: float
    measured_rate_frames: float
    target_pitch_hz: float
    target_rate_frames: float


def score_measurements(measurements, speaker_median_hz: float, style: StyleSpec) -> StyleTransferScore:
    """Relative errors of measured prosody against the style's targets."""
    pitches = [m.median_pitch_hz for m in measurements if np.isfinite(m.median_pitch_hz)]
    rates = [m.mean_rate_frames for m in measurements if np.isfinite(m.mean_rate_frames)]
    measured_pitch = float(np.median(pitches)) if pitches else float("nan")
    measured_rate = float(np.mean(rates)) if rates else float("nan")
    target_pitch = speaker_median_hz * style.pitch_scale
    target_rate = BASE_RATE_FRAMES * style.rate_multiplier
    return StyleTransferScore(
        pitch_err=abs(measured_pitch - target_pitch) / target_pitch,
        rate_err=abs(measured_rate - target_rate) / target_rate,
        measured_pitch_hz=measured_pitch,
        measured_rate_frames=measured_rate,
        target_pitch_hz=target_pitch,
        target_rate_frames=target_rate,
    )


def style_transfer_score(model, voice: int, style_name: str, sentences,
                         speaker_median_hz: float) -> StyleTransferScore:
    """Synthesize held-out sentences with (voice, style) and score the prosody
    the model actually predicts."""
    from .acoustic import ConditioningInput

    style = STYLES[style_name]
    cond = ConditioningInput(voice, corpus_mod.STYLE_INDEX[style_name])
    measurements = []
    for sent in sentences:
        out = model.forward(sent["phonemes"], cond)
        measurements.append(measure_prosody(sent["phonemes"], out.durations_used, out.pitch_hz_used))
    return score_measurements(measurements, speaker_median_hz, style)


# -- speaker identification over embeddings ---------------------------------------------


def speaker_centroids(embeddings_by_voice: dict) -> dict:
    """Mean embedding per voice, re-normalized."""
    out = {}
    for voice, embeds in embeddings_by_voice.items():
        c = np.mean(embeds, axis=0)
        out[voice] = c / np.linalg.norm(c)
    return out


def classify_speaker(embedding: np.ndarray, centroids: dict):
    """Voice whose centroid has the highest cosine with the embedding."""
    return max(sorted(centroids), key=lambda v: cosine(embedding, centroids[v]))

"""Audio analysis and encoding: pre-emphasis, Mel-spectrograms, mu-law,
pitch and energy tracks, phone-level averaging.

All frame-based operations share one grid: 25 ms windows every 10 ms at
24 kHz, centered with reflection padding, giving floor(n/hop)+1 frames.
"""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

SAMPLE_RATE = 24000
FRAME_LENGTH = 600   # 25 ms
HOP = 240            # 10 ms
N_FFT = 1024
MEL_BINS = 80
MEL_FMAX = 12000.0
LOG_FLOOR = 1e-10
PRE_EMPHASIS_ALPHA = 0.97

PITCH_MIN_HZ = 50.0
PITCH_MAX_HZ = 400.0
PITCH_WINDOW = 1200  # 50 ms; long enough to cover two 50 Hz periods
VOICING_THRESHOLD = 0.3
PITCH_BINS = 256

MU = 255.0


@dataclass
class AudioClip:
    """Mono waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size and np.abs(self.samples).max() > 1.0 + 1e-9:
            raise ValueError("samples exceed [-1, 1]")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    """Log-compressed Mel band energies, [frames, 80]."""

    frames: np.ndarray
    frame_shift_ms: float = 10.0
    frame_length_ms: float = 25.0

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != MEL_BINS:
            raise ValueError(f"expected [T, {MEL_BINS}] mel frames, got {self.frames.shape}")


@dataclass
class ProsodyTrack:
    """Phone-level duration (frames), pitch (Hz, 0 unvoiced) and RMS energy."""

    phone_durations: list = field(default_factory=list)
    phone_pitch: list = field(default_factory=list)
    phone_energy: list = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.phone_durations) == len(self.phone_pitch) == len(self.phone_energy)):
            raise ValueError("duration, pitch and energy lists must have equal length")
        if any(d <= 0 for d in self.phone_durations):
            raise ValueError("phone durations must be positive")

    def __len__(self):
        return len(self.phone_durations)

    @property
    def total_frames(self) -> int:
        return int(sum(self.phone_durations))


# -- waveform-domain ops -------------------------------------------------------


def pre_emphasis(clip: AudioClip, alpha: float = PRE_EMPHASIS_ALPHA) -> AudioClip:
    """y[0] = x[0]; y[n] = x[n] - alpha * x[n-1]."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    x = clip.samples
    y = np.empty_like(x)
    if x.size:
        y[0] = x[0]
        y[1:] = x[1:] - alpha * x[:-1]
    out = AudioClip.__new__(AudioClip)
    out.samples = y  # may briefly exceed [-1,1]; filter gain is < 2
    out.sample_rate = clip.sample_rate
    return out


def de_emphasis(samples: np.ndarray, alpha: float = PRE_EMPHASIS_ALPHA) -> np.ndarray:
    """Invert pre_emphasis: y[n] = x[n] + alpha * y[n-1]."""
    y = np.empty_like(np.asarray(samples, dtype=np.float64))
    prev = 0.0
    x = np.asarray(samples, dtype=np.float64)
    for n in range(x.size):
        prev = x[n] + alpha * prev
        y[n] = prev
    return y


def mu_law_encode(x) -> np.ndarray:
    """Compand to 8 bits: code = floor((F(x)+1)/2 * 255 + 0.5), mu = 255."""
    x = np.asarray(x, dtype=np.float64)
    n_clipped = int(np.count_nonzero(np.abs(x) > 1.0))
    if n_clipped:
        logger.warning("mu_law_encode: clamping %d samples outside [-1, 1]", n_clipped)
        x = np.clip(x, -1.0, 1.0)
    companded = np.sign(x) * np.log1p(MU * np.abs(x)) / np.log1p(MU)
    codes = np.floor((companded + 1.0) / 2.0 * 255.0 + 0.5)
    return np.clip(codes, 0, 255).astype(np.int64)


def mu_law_decode(codes) -> np.ndarray:
    """Map codes back to the center of their companded cell and expand."""
    codes = np.asarray(codes, dtype=np.float64)
    companded = codes / 127.5 - 1.0
    return np.sign(companded) * (np.expm1(np.abs(companded) * np.log1p(MU))) / MU


# -- frame-based analysis ------------------------------------------------------


def frame_count(n_samples: int) -> int:
    return n_samples // HOP + 1


def _frames(x: np.ndarray, window: int) -> np.ndarray:
    """Centered frames [T, window] on the shared 10 ms grid."""
    if x.size < window:
        raise ValueError(f"clip too short: {x.size} samples < one {window}-sample frame")
    half = window // 2
    padded = np.pad(x, half, mode="reflect")
    t = frame_count(x.size)
    idx = np.arange(t)[:, None] * HOP + np.arange(window)[None, :]
    return padded[idx]


def _mel_scale(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_inverse(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank() -> np.ndarray:
    """80 unit-height triangular filters on the mel scale, 0 to 12 kHz."""
    points = _mel_inverse(np.linspace(0.0, _mel_scale(MEL_FMAX), MEL_BINS + 2))
    freqs = np.arange(N_FFT // 2 + 1) * SAMPLE_RATE / N_FFT
    bank = np.zeros((MEL_BINS, freqs.size))
    for b in range(MEL_BINS):
        lo, center, hi = points[b], points[b + 1], points[b + 2]
        up = (freqs - lo) / (center - lo)
        down = (hi - freqs) / (hi - center)
        bank[b] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def mel_band_centers() -> np.ndarray:
    points = _mel_inverse(np.linspace(0.0, _mel_scale(MEL_FMAX), MEL_BINS + 2))
    return points[1:-1]


_HANN = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(FRAME_LENGTH) / FRAME_LENGTH)
_FILTERBANK = mel_filterbank()


def mel_spectrogram(clip: AudioClip) -> MelSpectrogram:
    """80-band log Mel-spectrogram on the shared frame grid."""
    if len(clip) == 0:
        raise ValueError("cannot analyze an empty clip")
    frames = _frames(clip.samples, FRAME_LENGTH) * _HANN
    spectrum = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    mel = spectrum @ _FILTERBANK.T
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)))


def extract_energy(clip: AudioClip) -> np.ndarray:
    """Per-frame RMS over the same centered 25 ms windows."""
    if len(clip) == 0:
        raise ValueError("cannot analyze an empty clip")
    frames = _frames(clip.samples, FRAME_LENGTH)
    return np.sqrt((frames * frames).mean(axis=1))


def extract_pitch(clip: AudioClip) -> np.ndarray:
    """Per-frame fundamental frequency in Hz, 0 where unvoiced.

    Normalized autocorrelation over 50 ms windows; a frame is voiced when the
    best peak in the 50-400 Hz lag range reaches 0.3. Among near-equal peaks
    the shortest lag wins, which suppresses octave-down errors.
    """
    if len(clip) == 0:
        raise ValueError("cannot analyze an empty clip")
    x = clip.samples
    if x.size < PITCH_WINDOW:
        x = np.pad(x, (0, PITCH_WINDOW - x.size))
    frames = _frames(x, PITCH_WINDOW)[: frame_count(len(clip))]
    lag_min = int(round(clip.sample_rate / PITCH_MAX_HZ))
    lag_max = int(round(clip.sample_rate / PITCH_MIN_HZ))

    out = np.zeros(frames.shape[0])
    span = PITCH_WINDOW - lag_max
    base = frames[:, :span]
    base_norm = np.sqrt((base * base).sum(axis=1))
    silent = base_norm < 1e-8

    # r[t, i] = normalized correlation of the frame with itself at lag i
    lags = np.arange(lag_min, lag_max + 1)
    corr = np.empty((frames.shape[0], lags.size))
    for i, lag in enumerate(lags):
        shifted = frames[:, lag:lag + span]
        num = (base * shifted).sum(axis=1)
        den = base_norm * np.sqrt((shifted * shifted).sum(axis=1)) + 1e-12
        corr[:, i] = num / den

    best = corr.max(axis=1)
    for t in range(frames.shape[0]):
        if silent[t] or best[t] < VOICING_THRESHOLD:
            continue
        # among local maxima within 3% of the best one, the shortest lag wins
        c = corr[t]
        interior = (c[1:-1] >= c[:-2]) & (c[1:-1] >= c[2:])
        peaks = np.nonzero(interior)[0] + 1
        peaks = peaks[c[peaks] >= 0.97 * best[t]]
        i = int(peaks[0]) if peaks.size else int(np.argmax(c))
        lag = float(lags[i])
        if 0 < i < lags.size - 1:
            # parabolic refinement around the chosen sample
            y0, y1, y2 = corr[t, i - 1], corr[t, i], corr[t, i + 1]
            denom = y0 - 2.0 * y1 + y2
            if abs(denom) > 1e-12:
                lag += 0.5 * (y0 - y2) / denom
        hz = clip.sample_rate / lag
        if PITCH_MIN_HZ <= hz <= PITCH_MAX_HZ:
            out[t] = hz
    return out


def quantize_pitch(hz: float, bins: int = PITCH_BINS) -> int:
    """Log-spaced bin over [50, 400] Hz; bin 0 is the unvoiced sentinel."""
    if hz <= 0.0:
        return 0
    clamped = min(max(hz, PITCH_MIN_HZ), PITCH_MAX_HZ)
    frac = np.log(clamped / PITCH_MIN_HZ) / np.log(PITCH_MAX_HZ / PITCH_MIN_HZ)
    return 1 + int(round(frac * (bins - 2)))


def phone_average(track: np.ndarray, durations, voiced_only: bool = False) -> np.ndarray:
    """Average per-frame values into one value per phone.

    With ``voiced_only`` zeros are excluded from each segment's mean; a phone
    with no voiced frames averages to 0.
    """
    track = np.asarray(track, dtype=np.float64)
    durations = [int(d) for d in durations]
    if sum(durations) != track.size:
        raise ValueError(f"durations sum to {sum(durations)} but track has {track.size} frames")
    out = np.zeros(len(durations))
    pos = 0
    for i, d in enumerate(durations):
        seg = track[pos:pos + d]
        pos += d
        if voiced_only:
            seg = seg[seg > 0]
            out[i] = seg.mean() if seg.size else 0.0
        else:
            out[i] = seg.mean()
    return out


# -- WAV files -----------------------------------------------------------------


def write_wav(path, clip: AudioClip):
    """PCM 16-bit mono WAV."""
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(clip.sample_rate)
        f.writeframes(pcm.tobytes())


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected PCM 16-bit mono")
        rate = f.getframerate()
        pcm = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32767.0, sample_rate=rate)

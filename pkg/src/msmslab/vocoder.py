"""Autoregressive waveform vocoder over 8-bit mu-law classes.

One GRU layer conditioned on Mel frames (projected, then repeated per
sample), two dense layers, and a 256-way softmax sampled one step at a
time. Trained per speaker with teacher forcing on pre-emphasized speech.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import dsp
from . import tensor as tc
from .dsp import AudioClip
from .tensor import Tensor

LN_CLASSES = float(np.log(256.0))


@dataclass
class VocoderConfig:
    rnn_hidden: int = 96        # 512 reproduces the full-scale recurrent width
    embed_channels: int = 64
    fc_hidden: int = 256
    classes: int = 256
    hop: int = dsp.HOP
    mel_bins: int = dsp.MEL_BINS
    sample_rate: int = dsp.SAMPLE_RATE

    def __post_init__(self):
        if self.classes != 256:
            raise ValueError("mu-law vocoder requires exactly 256 classes")

    @classmethod
    def full(cls):
        return cls(rnn_hidden=512)


class Vocoder:
    def __init__(self, config: VocoderConfig, seed: int = 0,
                 mel_mean=None, mel_std=None):
        self.config = config
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        rng = np.random.default_rng(seed)
        c = config
        h, e = c.rnn_hidden, c.embed_channels

        def par(name, arr):
            self.params[name] = Tensor(arr.astype(np.float32), requires_grad=True, name=name)

        scale = 0.02  # small init keeps step-0 logits near uniform
        par("embed", rng.normal(0, scale, size=(c.classes, e)))
        par("cond.w", rng.normal(0, scale, size=(c.mel_bins, e)))
        par("cond.b", np.zeros(e))
        par("gru.wx", rng.normal(0, scale, size=(e, 3 * h)))
        par("gru.wh", rng.normal(0, scale, size=(h, 3 * h)))
        par("gru.bx", np.zeros(3 * h))
        par("gru.bh", np.zeros(3 * h))
        par("fc1.w", rng.normal(0, scale, size=(h, c.fc_hidden)))
        par("fc1.b", np.zeros(c.fc_hidden))
        par("fc2.w", rng.normal(0, scale, size=(c.fc_hidden, c.classes)))
        par("fc2.b", np.zeros(c.classes))

        self.mel_mean = np.zeros(c.mel_bins, dtype=np.float32) if mel_mean is None else np.asarray(mel_mean, dtype=np.float32)
        self.mel_std = np.ones(c.mel_bins, dtype=np.float32) if mel_std is None else np.asarray(mel_std, dtype=np.float32)

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def normalize_mel(self, mel: np.ndarray) -> np.ndarray:
        return (mel - self.mel_mean) / self.mel_std

    # -- pieces ------------------------------------------------------------------

    def upsample_conditioning(self, mel: np.ndarray) -> np.ndarray:
        """Project each Mel frame and repeat it hop times (nearest frame)."""
        proj = self.normalize_mel(mel) @ self.params["cond.w"].data + self.params["cond.b"].data
        return np.repeat(proj, self.config.hop, axis=0)

    def _gru_cell_np(self, x, hidden):
        h = self.config.rnn_hidden
        gx = x @ self.params["gru.wx"].data + self.params["gru.bx"].data
        gh = hidden @ self.params["gru.wh"].data + self.params["gru.bh"].data
        r = 1.0 / (1.0 + np.exp(-(gx[..., :h] + gh[..., :h])))
        z = 1.0 / (1.0 + np.exp(-(gx[..., h:2 * h] + gh[..., h:2 * h])))
        n = np.tanh(gx[..., 2 * h:] + r * gh[..., 2 * h:])
        return (1.0 - z) * n + z * hidden

    def step(self, prev_code: int, cond_row: np.ndarray, state: np.ndarray):
        """One inference step: logits over 256 classes plus the new GRU state."""
        x = self.params["embed"].data[prev_code] + cond_row
        new_state = self._gru_cell_np(x, state)
        hidden = np.maximum(new_state @ self.params["fc1.w"].data + self.params["fc1.b"].data, 0.0)
        logits = hidden @ self.params["fc2.w"].data + self.params["fc2.b"].data
        return logits, new_state

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.config.rnn_hidden, dtype=np.float32)

    # -- differentiable teacher-forced pass ----------------------------------------

    def teacher_forced_logits(self, prev_codes: np.ndarray, frame_ids: np.ndarray,
                              mel: np.ndarray) -> Tensor:
        """Logits [B*S, classes] for segments of teacher codes.

        ``prev_codes`` is [B, S] (the codes fed in), ``frame_ids`` is [B, S]
        (mel frame per sample position).
        """
        b, s = prev_codes.shape
        h = self.config.rnn_hidden
        frames = np.unique(frame_ids)
        remap = np.searchsorted(frames, frame_ids)
        cond_all = tc.matmul(Tensor(self.normalize_mel(mel[frames]).astype(np.float32)),
                             self.params["cond.w"]) + self.params["cond.b"]

        hidden = Tensor(np.zeros((b, h), dtype=np.float32))
        outputs = []
        for t in range(s):
            x = tc.gather_rows(self.params["embed"], prev_codes[:, t]) \
                + tc.gather_rows(cond_all, remap[:, t])
            gx = tc.matmul(x, self.params["gru.wx"]) + self.params["gru.bx"]
            gh = tc.matmul(hidden, self.params["gru.wh"]) + self.params["gru.bh"]
            r = tc.sigmoid(gx[:, :h] + gh[:, :h])
            z = tc.sigmoid(gx[:, h:2 * h] + gh[:, h:2 * h])
            n = tc.tanh(gx[:, 2 * h:] + r * gh[:, 2 * h:])
            hidden = (1.0 - z) * n + z * hidden
            outputs.append(hidden)
        stacked = tc.concat(outputs, axis=0) if len(outputs) > 1 else outputs[0]
        fc = tc.relu(tc.matmul(stacked, self.params["fc1.w"]) + self.params["fc1.b"])
        return tc.matmul(fc, self.params["fc2.w"]) + self.params["fc2.b"]

    def nll(self, logits: Tensor, targets: np.ndarray) -> Tensor:
        """Mean cross-entropy in nats per sample; targets are flat codes."""
        probs = tc.softmax(logits)
        picked = tc.log(probs[np.arange(targets.size), targets])
        return -picked.mean()

    # -- sampling --------------------------------------------------------------------

    @staticmethod
    def sample(logits: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        if temperature == 0.0:
            return int(np.argmax(logits))
        scaled = logits / temperature
        scaled = scaled - scaled.max()
        p = np.exp(scaled)
        p /= p.sum()
        return int(rng.choice(logits.size, p=p))

    def generate(self, mel: np.ndarray, temperature: float = 1.0, seed: int = 0) -> AudioClip:
        """Autoregressive synthesis: frames x hop samples, de-emphasized."""
        rng = np.random.default_rng(seed)
        cond = self.upsample_conditioning(np.asarray(mel, dtype=np.float32))
        state = self.initial_state()
        code = 128  # mu-law zero
        codes = np.empty(cond.shape[0], dtype=np.int64)
        for i in range(cond.shape[0]):
            logits, state = self.step(code, cond[i], state)
            code = self.sample(logits, temperature, rng)
            codes[i] = code
        samples = dsp.mu_law_decode(codes)
        samples = dsp.de_emphasis(samples)
        return AudioClip(np.clip(samples, -1.0, 1.0))


# -- training ------------------------------------------------------------------------


def clip_gradients(params, max_norm: float):
    """Scale all gradients down when their global L2 norm exceeds max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm



def utterance_codes(clip: AudioClip, alpha: float = dsp.PRE_EMPHASIS_ALPHA) -> np.ndarray:
    """Training targets: mu-law codes of the pre-emphasized waveform."""
    return dsp.mu_law_encode(dsp.pre_emphasis(clip, alpha).samples)


def teacher_forced_nll(model: Vocoder, codes: np.ndarray, mel: np.ndarray) -> float:
    """Deterministic full-utterance NLL under the current parameters."""
    n = min(codes.size, mel.shape[0] * model.config.hop)
    prev = np.concatenate([[128], codes[:n - 1]])
    frame_ids = np.arange(n) // model.config.hop
    with tc.no_grad():
        logits = model.teacher_forced_logits(prev[None, :], frame_ids[None, :], mel)
        value = model.nll(logits, codes[:n])
    return float(value.data)


def train_vocoder(model: Vocoder, utterances, steps: int, seed: int,
                  batch: int = 4, segment: int = 480, lr: float = 3e-3,
                  burn_in: int = 120, clip_norm: float = 1.0,
                  log_every: int = 25):
    """Teacher-forced cross-entropy training over random segments.

    ``utterances`` is a list of (codes, mel) pairs for one speaker. The first
    ``burn_in`` positions of each segment warm up the GRU state (it starts
    from zeros mid-waveform) and are excluded from the loss. Returns the loss
    log [(step, nll)].
    """
    if not utterances:
        raise ValueError("cannot train a vocoder on an empty utterance list")
    rng = np.random.default_rng(seed)
    state = tc.AdamState(lr=lr, beta2=0.99, eps=1e-8)
    log = []
    hop = model.config.hop
    burn_in = min(burn_in, segment // 2)
    for step_idx in range(steps):
        prev = np.empty((batch, segment), dtype=np.int64)
        targets = np.empty((batch, segment), dtype=np.int64)
        frame_ids = np.empty((batch, segment), dtype=np.int64)
        uidx = int(rng.integers(0, len(utterances)))
        codes, mel = utterances[uidx]
        n = min(codes.size, mel.shape[0] * hop)
        for b in range(batch):
            start = int(rng.integers(0, max(1, n - segment)))
            seg = slice(start, start + segment)
            targets[b] = codes[seg]
            prev[b] = np.concatenate([[128 if start == 0 else codes[start - 1]],
                                      codes[start:start + segment - 1]])
            frame_ids[b] = np.arange(start, start + segment) // hop
        logits = model.teacher_forced_logits(prev, frame_ids, mel)
        # logits are stacked time-major: [t0 batch, t1 batch, ...]
        keep = np.repeat(np.arange(segment) >= burn_in, batch)
        loss = model.nll(logits[np.nonzero(keep)[0]], targets.T.reshape(-1)[keep])
        model.zero_grad()
        tc.backward(loss)
        clip_gradients(model.params, clip_norm)
        tc.adam_step(model.params, state, lr=tc.warmup_inverse_sqrt(step_idx + 1, steps, lr))
        if step_idx % log_every == 0 or step_idx == steps - 1:
            log.append((step_idx, float(loss.data)))
    return log


# -- persistence -----------------------------------------------------------------------


def save_vocoder(path, model: Vocoder, speaker_id: int):
    path = Path(path)
    named = OrderedDict()
    for name, p in model.params.items():
        named[f"vocoder.{speaker_id}.{name}"] = p
    named[f"vocoder.{speaker_id}.mel_mean"] = model.mel_mean
    named[f"vocoder.{speaker_id}.mel_std"] = model.mel_std
    tc.save_checkpoint(path, named)
    meta = {"config": asdict(model.config), "speaker_id": speaker_id}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_vocoder(path) -> tuple[Vocoder, int]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    sid = meta["speaker_id"]
    model = Vocoder(VocoderConfig(**meta["config"]))
    arrays = tc.load_checkpoint(path)
    prefix = f"vocoder.{sid}."
    for name, p in model.params.items():
        p.data = arrays[prefix + name].astype(np.float32)
    model.mel_mean = arrays[prefix + "mel_mean"]
    model.mel_std = arrays[prefix + "mel_std"]
    return model, sid

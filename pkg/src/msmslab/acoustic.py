"""Non-autoregressive acoustic model: phonemes to Mel-spectrogram.

Feed-forward Transformer encoder, per-phone duration/pitch/energy
predictors, length regulation to frame rate, and a dilated-convolution
decoder. Speaker and style enter as concatenated one-hot vectors pushed
through two zero-initialized projections, one added to the variance
adaptor input and one to the decoder input; the encoder sees neither.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as tc
from .dsp import quantize_pitch, PITCH_BINS
from .tensor import Tensor

PITCH_UNIT_HZ = 100.0  # predictors work in units of 100 Hz to balance losses


@dataclass
class ModelConfig:
    encoder_layers: int = 4
    attention_heads: int = 2
    d_model: int = 256
    encoder_conv_kernel: int = 9
    encoder_conv_filters: int = 1024
    decoder_blocks: int = 2
    decoder_dilations: tuple = (1, 2, 4, 8, 16, 32)
    decoder_kernel: int = 3
    decoder_filters: int = 256
    predictor_kernel: int = 3
    predictor_filters: int = 256
    dropout: float = 0.2
    ln_eps: float = 1e-6
    mel_bins: int = 80
    speaker_slots: int = 64
    style_slots: int = 64
    inventory_size: int = 45
    pitch_bins: int = PITCH_BINS
    conditioned: bool = True

    def __post_init__(self):
        if self.d_model % self.attention_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.attention_heads} heads")
        if self.decoder_filters != self.d_model:
            raise ValueError("decoder filters must match d_model for residual connections")

    @classmethod
    def desk(cls, **overrides):
        """Reduced width/depth preset for CPU-budget training runs."""
        base = dict(encoder_layers=2, attention_heads=2, d_model=64,
                    encoder_conv_kernel=9, encoder_conv_filters=128,
                    decoder_blocks=1, decoder_dilations=(1, 2, 4, 8),
                    decoder_filters=64, predictor_filters=64, dropout=0.1)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def miniature(cls):
        """Tiny preset for end-to-end gradient checking."""
        return cls(encoder_layers=1, attention_heads=2, d_model=16,
                   encoder_conv_kernel=3, encoder_conv_filters=8,
                   decoder_blocks=1, decoder_dilations=(1, 2),
                   decoder_filters=16, predictor_filters=8, dropout=0.0,
                   mel_bins=6, inventory_size=45)

    def receptive_field(self) -> int:
        per_conv = self.decoder_kernel - 1
        return 1 + self.decoder_blocks * per_conv * sum(self.decoder_dilations)


@dataclass(frozen=True)
class ConditioningInput:
    speaker_index: int
    style_index: int

    def validate(self, config: ModelConfig):
        if not 0 <= self.speaker_index < config.speaker_slots:
            raise ValueError(f"speaker index {self.speaker_index} outside 0..{config.speaker_slots - 1}")
        if not 0 <= self.style_index < config.style_slots:
            raise ValueError(f"style index {self.style_index} outside 0..{config.style_slots - 1}")


@dataclass
class AcousticOutput:
    mel: Tensor                      # [frames, mel_bins]
    log_duration: Tensor             # [phones], predicted log frame counts
    pitch: Tensor                    # [phones], units of 100 Hz
    energy: Tensor                   # [phones]
    durations_used: list = field(default_factory=list)
    pitch_hz_used: np.ndarray | None = None


def sinusoidal_positions(length: int, depth: int, dtype=np.float32) -> np.ndarray:
    """Standard interleaved sin/cos position table: row 0 is [0,1,0,1,...]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(depth, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (i // 2) / depth)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def length_regulate(encodings: Tensor, durations) -> Tensor:
    """Repeat phone vectors by their durations, preserving order."""
    durations = [int(d) for d in durations]
    if len(durations) != encodings.shape[0]:
        raise ValueError(f"{len(durations)} durations for {encodings.shape[0]} phones")
    if any(d < 1 for d in durations):
        raise ValueError("durations must be >= 1")
    return tc.gather_rows(encodings, np.repeat(np.arange(len(durations)), durations))


class AcousticModel:
    """Holds the parameter set and implements the full forward pass."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self._init_params(np.random.default_rng(seed))

    # -- parameters ------------------------------------------------------------

    def _param(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(array.astype(self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _glorot(self, rng, shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    def _init_params(self, rng):
        c = self.config
        d = c.d_model
        self._param("encoder.embed", rng.normal(0.0, d ** -0.5, size=(c.inventory_size, d)))
        for i in range(c.encoder_layers):
            pre = f"encoder.layer{i}"
            for w in ("wq", "wk", "wv", "wo"):
                self._param(f"{pre}.att.{w}", self._glorot(rng, (d, d), d, d))
            for b in ("bq", "bk", "bv", "bo"):
                self._param(f"{pre}.att.{b}", np.zeros(d))
            self._param(f"{pre}.ln1.gamma", np.ones(d))
            self._param(f"{pre}.ln1.beta", np.zeros(d))
            k, f = c.encoder_conv_kernel, c.encoder_conv_filters
            self._param(f"{pre}.conv1.w", self._glorot(rng, (k, d, f), k * d, k * f))
            self._param(f"{pre}.conv1.b", np.zeros(f))
            self._param(f"{pre}.conv2.w", self._glorot(rng, (k, f, d), k * f, k * d))
            self._param(f"{pre}.conv2.b", np.zeros(d))
            self._param(f"{pre}.ln2.gamma", np.ones(d))
            self._param(f"{pre}.ln2.beta", np.zeros(d))

        p = c.predictor_filters
        for head in ("duration", "pitch", "energy"):
            pre = f"variance.{head}"
            k = c.predictor_kernel
            self._param(f"{pre}.conv1.w", self._glorot(rng, (k, d, p), k * d, k * p))
            self._param(f"{pre}.conv1.b", np.zeros(p))
            self._param(f"{pre}.ln1.gamma", np.ones(p))
            self._param(f"{pre}.ln1.beta", np.zeros(p))
            self._param(f"{pre}.conv2.w", self._glorot(rng, (k, p, p), k * p, k * p))
            self._param(f"{pre}.conv2.b", np.zeros(p))
            self._param(f"{pre}.ln2.gamma", np.ones(p))
            self._param(f"{pre}.ln2.beta", np.zeros(p))
            self._param(f"{pre}.proj.w", self._glorot(rng, (p, 1), p, 1))
            self._param(f"{pre}.proj.b", np.zeros(1))
        self._param("variance.pitch_embed", rng.normal(0.0, d ** -0.5, size=(c.pitch_bins, d)))
        self._param("variance.energy_proj.w", self._glorot(rng, (1, d), 1, d))
        self._param("variance.energy_proj.b", np.zeros(d))

        dd = c.decoder_filters
        for b in range(c.decoder_blocks):
            for j, dil in enumerate(c.decoder_dilations):
                pre = f"decoder.block{b}.conv{j}"
                k = c.decoder_kernel
                self._param(f"{pre}.w", self._glorot(rng, (k, dd, dd), k * dd, k * dd))
                self._param(f"{pre}.b", np.zeros(dd))
                self._param(f"{pre}.ln.gamma", np.ones(dd))
                self._param(f"{pre}.ln.beta", np.zeros(dd))
        self._param("decoder.out.w", self._glorot(rng, (dd, c.mel_bins), dd, c.mel_bins))
        self._param("decoder.out.b", np.zeros(c.mel_bins))

        if c.conditioned:
            width = c.speaker_slots + c.style_slots
            # zero init: an untrained model is conditioning-invariant, and the
            # MSMS and multi-speaker regimes start from identical step-0 losses
            self._param("cond.adaptor.w", np.zeros((width, d)))
            self._param("cond.adaptor.b", np.zeros(d))
            self._param("cond.decoder.w", np.zeros((width, dd)))
            self._param("cond.decoder.b", np.zeros(dd))

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def load_state(self, arrays):
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            if tuple(arrays[name].shape) != tuple(p.data.shape):
                raise ValueError(f"{name}: checkpoint shape {arrays[name].shape} vs model {p.data.shape}")
            p.data = arrays[name].astype(self.dtype)

    def clone(self) -> "AcousticModel":
        """Independent copy with identical parameter values."""
        other = AcousticModel(self.config, seed=0, dtype=self.dtype)
        other.load_state({name: p.data.copy() for name, p in self.params.items()})
        return other

    # -- submodules ------------------------------------------------------------

    def _ln(self, x, prefix):
        return tc.layer_norm(x, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"], self.config.ln_eps)

    def encode(self, phonemes, training=False, rng=None) -> Tensor:
        c = self.config
        ids = np.asarray(list(phonemes), dtype=np.int64)
        if ids.size == 0:
            raise ValueError("empty phoneme sequence")
        if ids.min() < 0 or ids.max() >= c.inventory_size:
            raise ValueError(f"unknown phoneme id in {sorted(set(ids) - set(range(c.inventory_size)))}")
        x = tc.gather_rows(self.params["encoder.embed"], ids)
        x = x + Tensor(sinusoidal_positions(ids.size, c.d_model, self.dtype))
        for i in range(c.encoder_layers):
            pre = f"encoder.layer{i}"
            att_params = {k: self.params[f"{pre}.att.{k}"]
                          for k in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")}
            a = tc.multi_head_attention(x, c.attention_heads, att_params)
            a = tc.dropout(a, c.dropout, training, rng)
            x = self._ln(x + a, f"{pre}.ln1")
            h = tc.conv1d(x, self.params[f"{pre}.conv1.w"]) + self.params[f"{pre}.conv1.b"]
            h = tc.relu(h)
            h = tc.conv1d(h, self.params[f"{pre}.conv2.w"]) + self.params[f"{pre}.conv2.b"]
            h = tc.dropout(h, c.dropout, training, rng)
            x = self._ln(x + h, f"{pre}.ln2")
        return x

    def condition_embedding(self, cond: ConditioningInput, length: int, consumer: str) -> Tensor:
        """One-hot speaker+style concat, projected and tiled over ``length``."""
        c = self.config
        if not c.conditioned:
            raise ValueError("model was built without conditioning parameters")
        cond.validate(c)
        onehot = np.zeros((1, c.speaker_slots + c.style_slots), dtype=self.dtype)
        onehot[0, cond.speaker_index] = 1.0
        onehot[0, c.speaker_slots + cond.style_index] = 1.0
        proj = tc.matmul(Tensor(onehot), self.params[f"cond.{consumer}.w"]) + self.params[f"cond.{consumer}.b"]
        return tc.matmul(Tensor(np.ones((length, 1), dtype=self.dtype)), proj)

    def _predictor(self, head: str, x: Tensor, training=False, rng=None) -> Tensor:
        c = self.config
        pre = f"variance.{head}"
        h = tc.conv1d(x, self.params[f"{pre}.conv1.w"]) + self.params[f"{pre}.conv1.b"]
        h = tc.relu(h)
        h = self._ln(h, f"{pre}.ln1")
        h = tc.dropout(h, c.dropout, training, rng)
        h = tc.conv1d(h, self.params[f"{pre}.conv2.w"]) + self.params[f"{pre}.conv2.b"]
        h = tc.relu(h)
        h = self._ln(h, f"{pre}.ln2")
        h = tc.dropout(h, c.dropout, training, rng)
        out = tc.matmul(h, self.params[f"{pre}.proj.w"]) + self.params[f"{pre}.proj.b"]
        return out.reshape(x.shape[0])

    def predict_variances(self, encodings: Tensor, cond: ConditioningInput | None,
                          training=False, rng=None):
        x = encodings
        if self.config.conditioned and cond is not None:
            x = x + self.condition_embedding(cond, encodings.shape[0], "adaptor")
        log_dur = self._predictor("duration", x, training, rng)
        pitch = self._predictor("pitch", x, training, rng)
        energy = self._predictor("energy", x, training, rng)
        return log_dur, pitch, energy

    def decode(self, upsampled: Tensor, cond: ConditioningInput | None,
               training=False, rng=None) -> Tensor:
        c = self.config
        x = upsampled
        if c.conditioned and cond is not None:
            x = x + self.condition_embedding(cond, upsampled.shape[0], "decoder")
        for b in range(c.decoder_blocks):
            for j, dil in enumerate(c.decoder_dilations):
                pre = f"decoder.block{b}.conv{j}"
                h = tc.conv1d(x, self.params[f"{pre}.w"], dilation=dil) + self.params[f"{pre}.b"]
                h = tc.relu(h)
                h = self._ln(h, f"{pre}.ln")
                h = tc.dropout(h, c.dropout, training, rng)
                x = x + h
        return tc.matmul(x, self.params["decoder.out.w"]) + self.params["decoder.out.b"]

    # -- full pass ---------------------------------------------------------------

    def forward(self, phonemes, cond: ConditioningInput | None = None, track=None,
                training=False, rng=None) -> AcousticOutput:
        """Teacher-forced when ``track`` is given, free-running otherwise."""
        phonemes = list(phonemes)
        enc = self.encode(phonemes, training, rng)
        log_dur, pitch, energy = self.predict_variances(enc, cond, training, rng)

        if track is not None:
            if len(track.phone_durations) != len(phonemes):
                raise ValueError(f"track has {len(track.phone_durations)} phones, input has {len(phonemes)}")
            durations = [int(d) for d in track.phone_durations]
            pitch_hz = np.asarray(track.phone_pitch, dtype=np.float64)
            energy_used = Tensor(np.asarray(track.phone_energy, dtype=self.dtype).reshape(-1, 1))
        else:
            with tc.no_grad():
                durations = [max(1, int(round(float(np.exp(v))))) for v in log_dur.data]
                pitch_hz = np.maximum(pitch.data.astype(np.float64), 0.0) * PITCH_UNIT_HZ
                energy_used = Tensor(energy.data.reshape(-1, 1))

        bins = np.array([quantize_pitch(hz, self.config.pitch_bins) for hz in pitch_hz])
        pitch_emb = tc.gather_rows(self.params["variance.pitch_embed"], bins)
        energy_emb = tc.matmul(energy_used, self.params["variance.energy_proj.w"]) \
            + self.params["variance.energy_proj.b"]
        x = enc + pitch_emb + energy_emb
        up = length_regulate(x, durations)
        mel = self.decode(up, cond, training, rng)
        return AcousticOutput(mel=mel, log_duration=log_dur, pitch=pitch, energy=energy,
                              durations_used=durations, pitch_hz_used=pitch_hz)


# -- persistence ------------------------------------------------------------------


def save_model(path, model: AcousticModel, extra: dict | None = None):
    """Checkpoint container plus a sidecar JSON with config and metadata."""
    path = Path(path)
    tc.save_checkpoint(path, model.params)
    meta = {"config": asdict(model.config), "extra": extra or {}}
    meta["config"]["decoder_dilations"] = list(model.config.decoder_dilations)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_model(path) -> tuple[AcousticModel, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    cfg = meta["config"]
    cfg["decoder_dilations"] = tuple(cfg["decoder_dilations"])
    model = AcousticModel(ModelConfig(**cfg))
    model.load_state(tc.load_checkpoint(path))
    return model, meta.get("extra", {})

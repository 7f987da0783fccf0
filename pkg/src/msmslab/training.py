"""Training regimes over the corpus: losses, schedules, checkpoints, metrics.

Five systems share one architecture. The joint system conditions on speaker
and style, the multi-speaker system pins the style index, and the
single-speaker and pretrain/fine-tune systems are built without
conditioning parameters at all.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import dsp
from . import tensor as tc
from .acoustic import AcousticModel, AcousticOutput, ConditioningInput, ModelConfig, save_model
from .dsp import ProsodyTrack
from .tensor import Tensor

SYSTEM_KINDS = ("msms", "multi_speaker", "pretrain_finetune", "single_speaker")
CONSTANT_STYLE_INDEX = 0  # style slot the multi-speaker system pins


@dataclass(frozen=True)
class SystemKind:
    kind: str
    target_speaker: int | None = None
    inference_style: str | None = None  # applies to the joint system only

    def __post_init__(self):
        if self.kind not in SYSTEM_KINDS:
            raise ValueError(f"unknown system kind {self.kind!r}")
        if self.kind in ("pretrain_finetune", "single_speaker") and self.target_speaker is None:
            raise ValueError(f"{self.kind} requires a target speaker")

    @property
    def conditioned(self) -> bool:
        return self.kind in ("msms", "multi_speaker")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    seed: int = 0
    peak_lr: float = 1e-3
    lr_decay: str = "inverse_sqrt"  # or "constant": flat after warmup
    mel_weight: float = 1.0
    duration_weight: float = 0.1
    pitch_weight: float = 0.1
    energy_weight: float = 0.1
    validate_every: int = 200

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        for name in ("mel_weight", "duration_weight", "pitch_weight", "energy_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class Utterance:
    """One manifest record with features loaded and mel normalized."""

    utt: str
    speaker: int
    style_index: int
    domain: str
    split: str
    phonemes: list
    track: ProsodyTrack
    mel_norm: np.ndarray


class TrainingData:
    """Corpus loaded into memory with normalization statistics applied."""

    def __init__(self, corpus_dir):
        self.corpus_dir = Path(corpus_dir)
        meta = corpus_mod.load_meta(self.corpus_dir)
        self.mel_mean = np.asarray(meta["mel_mean"], dtype=np.float32)
        self.mel_std = np.asarray(meta["mel_std"], dtype=np.float32)
        self.meta = meta
        self.utterances: list[Utterance] = []
        for rec in corpus_mod.load_manifest(self.corpus_dir):
            mel = tc.load_checkpoint(self.corpus_dir / rec.features)["mel"]
            self.utterances.append(Utterance(
                utt=rec.utt, speaker=rec.speaker, style_index=rec.style_index,
                domain=rec.domain, split=rec.split, phonemes=rec.phonemes,
                track=ProsodyTrack(rec.durations, rec.pitch, rec.energy),
                mel_norm=((mel - self.mel_mean) / self.mel_std).astype(np.float32),
            ))

    def subset(self, split: str, speaker: int | None = None) -> list[Utterance]:
        out = [u for u in self.utterances if u.split == split]
        if speaker is not None:
            out = [u for u in out if u.speaker == speaker]
        return out

    def speakers(self) -> list[int]:
        return sorted({u.speaker for u in self.utterances})

    def denormalize(self, mel_norm: np.ndarray) -> np.ndarray:
        return mel_norm * self.mel_std + self.mel_mean


def conditioning_for(system: SystemKind, utt: Utterance) -> ConditioningInput | None:
    if system.kind == "msms":
        return ConditioningInput(utt.speaker, utt.style_index)
    if system.kind == "multi_speaker":
        return ConditioningInput(utt.speaker, CONSTANT_STYLE_INDEX)
    return None


def training_records(system: SystemKind, data: TrainingData, phase: str = "train") -> list[Utterance]:
    records = data.subset("train")
    if system.kind == "single_speaker" or (system.kind == "pretrain_finetune" and phase == "finetune"):
        records = [u for u in records if u.speaker == system.target_speaker]
        if not records:
            raise ValueError(f"no training records for target speaker {system.target_speaker}")
    return records


# -- loss ---------------------------------------------------------------------------


def loss_components(output: AcousticOutput, utt: Utterance, cfg: TrainConfig):
    """Weighted sum of mel L1 and the three prosody regressions.

    Pitch error is measured on voiced phones only, in 100 Hz units.
    """
    target_mel = Tensor(utt.mel_norm)
    if output.mel.shape != target_mel.shape:
        raise ValueError(f"mel shape {output.mel.shape} vs target {target_mel.shape}")
    mel_l1 = tc.absolute(output.mel - target_mel).mean()

    log_dur_target = Tensor(np.log(np.asarray(utt.track.phone_durations, dtype=np.float32)))
    dur_mse = ((output.log_duration - log_dur_target) ** 2.0).mean()

    pitch_hz = np.asarray(utt.track.phone_pitch, dtype=np.float32)
    voiced = pitch_hz > 0
    if voiced.any():
        idx = np.nonzero(voiced)[0]
        target = Tensor(pitch_hz[voiced] / 100.0)
        pitch_mse = ((output.pitch[idx] - target) ** 2.0).mean()
    else:
        pitch_mse = Tensor(np.zeros(()))

    energy_target = Tensor(np.asarray(utt.track.phone_energy, dtype=np.float32))
    energy_mse = ((output.energy - energy_target) ** 2.0).mean()

    total = (cfg.mel_weight * mel_l1 + cfg.duration_weight * dur_mse
             + cfg.pitch_weight * pitch_mse + cfg.energy_weight * energy_mse)
    components = {
        "mel": float(mel_l1.data),
        "duration": float(dur_mse.data),
        "pitch": float(pitch_mse.data),
        "energy": float(energy_mse.data),
    }
    return total, components


def validation_metrics(model: AcousticModel, system: SystemKind, data: TrainingData,
                       cfg: TrainConfig, records=None) -> dict:
    """Teacher-forced losses on the validation split, overall and per speaker."""
    records = data.subset("val") if records is None else records
    totals, per_speaker = [], {}
    mels = {}
    with tc.no_grad():
        for utt in records:
            out = model.forward(utt.phonemes, conditioning_for(system, utt), track=utt.track)
            total, comp = loss_components(out, utt, cfg)
            totals.append(float(total.data))
            per_speaker.setdefault(utt.speaker, []).append(comp["mel"])
            mels.setdefault(utt.speaker, []).append(comp["mel"])
    return {
        "loss": float(np.mean(totals)) if totals else float("nan"),
        "mel_per_speaker": {str(k): float(np.mean(v)) for k, v in sorted(mels.items())},
        "count": len(records),
    }


# -- training loops --------------------------------------------------------------------


def train(system: SystemKind, data: TrainingData, model_config: ModelConfig,
          cfg: TrainConfig, model: AcousticModel | None = None,
          phase: str = "train", log: list | None = None,
          checkpoint_dir=None, checkpoint_name: str | None = None):
    """Run one training phase and return (model, metrics log).

    With ``checkpoint_dir`` set, a checkpoint is written at every validation
    cadence point and at the end.
    """
    if model is None:
        model_config = dataclasses.replace(model_config, conditioned=system.conditioned)
        model = AcousticModel(model_config, seed=cfg.seed)
    records = training_records(system, data, phase)
    rng = np.random.default_rng(cfg.seed + 1)
    dropout_rng = np.random.default_rng(cfg.seed + 2)
    state = tc.AdamState(lr=cfg.peak_lr)
    log = [] if log is None else log

    order = rng.permutation(len(records))
    cursor = 0
    for step in range(cfg.steps):
        model.zero_grad()
        comps_acc = {"mel": 0.0, "duration": 0.0, "pitch": 0.0, "energy": 0.0}
        for _ in range(cfg.batch_size):
            if cursor >= len(order):
                order = rng.permutation(len(records))
                cursor = 0
            utt = records[order[cursor]]
            cursor += 1
            out = model.forward(utt.phonemes, conditioning_for(system, utt), track=utt.track,
                                training=True, rng=dropout_rng)
            total, comps = loss_components(out, utt, cfg)
            tc.backward(total * (1.0 / cfg.batch_size))
            for k in comps_acc:
                comps_acc[k] += comps[k] / cfg.batch_size
        schedule = tc.warmup_constant if cfg.lr_decay == "constant" else tc.warmup_inverse_sqrt
        lr = schedule(step + 1, cfg.steps, cfg.peak_lr)
        tc.adam_step(model.params, state, lr=lr)
        if step % cfg.validate_every == 0 or step == cfg.steps - 1:
            entry = {"phase": phase, "step": step, "train": comps_acc,
                     "val": validation_metrics(model, system, data, cfg)}
            log.append(entry)
            if checkpoint_dir is not None:
                name = checkpoint_name or system.kind
                tag = "final" if step == cfg.steps - 1 else f"step{step:06d}"
                Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                save_model(Path(checkpoint_dir) / f"{name}.{tag}.ckpt", model,
                           extra={"system": system.kind, "phase": phase, "step": step})
    return model, log


def pretrain_finetune(target_speaker: int, data: TrainingData, model_config: ModelConfig,
                      pre_cfg: TrainConfig, ft_cfg: TrainConfig):
    """Phase 1 on all speakers, phase 2 on the target only; 20:1 step ratio
    mirrors the full-scale schedule."""
    system = SystemKind("pretrain_finetune", target_speaker=target_speaker)
    model, log = train(system, data, model_config, pre_cfg, phase="pretrain")
    model, log = train(system, data, model_config, ft_cfg, model=model, phase="finetune", log=log)
    return model, log


# -- evaluation-set synthesis ------------------------------------------------------------


def style_index_for(system: SystemKind) -> int:
    if system.kind == "msms":
        style = system.inference_style or "TTS"
        return corpus_mod.STYLE_INDEX[style]
    return CONSTANT_STYLE_INDEX


def synthesize_eval_set(out_dir, systems: dict, voices, sentences, data: TrainingData,
                        seed: int = 0, vocoder_paths: dict | None = None,
                        temperature: float = 0.7):
    """Run inference for every (system, voice, sentence) and write the tree.

    ``systems`` maps system name -> (SystemKind, checkpoint path or per-voice
    dict of paths). Audio is generated when a vocoder checkpoint is supplied
    for the voice; mel and predicted prosody are always dumped. Returns the
    index path.
    """
    from .acoustic import load_model
    from .vocoder import load_vocoder

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocoders = {}
    for voice, path in (vocoder_paths or {}).items():
        model, sid = load_vocoder(path)
        if sid != voice:
            raise ValueError(f"vocoder at {path} is for speaker {sid}, not {voice}")
        vocoders[voice] = model

    index_rows = []
    for system_name in sorted(systems):
        system, ckpt = systems[system_name]
        for voice in voices:
            path = ckpt[voice] if isinstance(ckpt, dict) else ckpt
            path = Path(path)
            if not path.exists():
                raise FileNotFoundError(f"missing checkpoint for system {system_name}, voice {voice}: {path}")
            model, _ = load_model(path)
            cond = ConditioningInput(voice, style_index_for(system)) if system.conditioned else None
            for sent in sentences:
                out = model.forward(sent["phonemes"], cond)
                mel_raw = data.denormalize(out.mel.data)
                rel_dir = Path(system_name) / f"voice{voice}" / sent["domain"]
                (out_dir / rel_dir).mkdir(parents=True, exist_ok=True)
                stem = f"{sent['sentence_id']}"
                mel_rel = rel_dir / f"{stem}.msms"
                tc.save_checkpoint(out_dir / mel_rel, {"mel": mel_raw.astype(np.float32)})
                wav_rel = None
                if voice in vocoders:
                    gen_seed = int(np.random.SeedSequence(
                        entropy=seed, spawn_key=(hash_id(system_name), voice, hash_id(stem))).generate_state(1)[0])
                    clip = vocoders[voice].generate(mel_raw, temperature=temperature, seed=gen_seed)
                    wav_rel = rel_dir / f"{stem}.wav"
                    dsp.write_wav(out_dir / wav_rel, clip)
                index_rows.append({
                    "audio_id": f"{system_name}/voice{voice}/{sent['domain']}/{stem}",
                    "system": system_name,
                    "voice": voice,
                    "domain": sent["domain"],
                    "sentence_id": sent["sentence_id"],
                    "mel": str(mel_rel),
                    "wav": str(wav_rel) if wav_rel else None,
                    "durations": [int(d) for d in out.durations_used],
                    "pitch_hz": [round(float(h), 3) for h in out.pitch_hz_used],
                    "energy": [round(float(e), 6) for e in out.energy.data],
                    "phonemes": list(sent["phonemes"]),
                })
    index_path = out_dir / "index.jsonl"
    with open(index_path, "w") as f:
        for row in index_rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    return index_path


def hash_id(text: str) -> int:
    import zlib
    return zlib.crc32(str(text).encode())


def load_eval_index(index_path) -> list[dict]:
    rows = []
    with open(index_path) as f:
        for line in f:
            rows.append(json.loads(line))
    return rows

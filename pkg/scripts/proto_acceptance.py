"""Prototype of the acceptance training bundle; measures outcomes and wall time."""
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from msmslab import corpus, evaluate, training
from msmslab.acoustic import ModelConfig
from msmslab.training import SystemKind, TrainConfig, TrainingData

t0 = time.time()

def clock(msg):
    print(f"[{time.time()-t0:7.1f}s] {msg}", flush=True)

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/proto_ws")
corpus_dir = root / "corpus"
if not (corpus_dir / "manifest.jsonl").exists():
    speakers = corpus.default_speakers(minutes_per_table_hour=0.16)
    corpus.build_corpus(corpus_dir, speakers=speakers, seed=104)
    clock("corpus built")
data = TrainingData(corpus_dir)
clock(f"data loaded: {len(data.utterances)} utterances, "
      f"{sum(1 for u in data.utterances if u.split=='val')} val")

model_cfg = ModelConfig.desk()
msms_cfg = TrainConfig(steps=600, batch_size=8, seed=104, peak_lr=1e-3, validate_every=150)

msms_model, msms_log = training.train(SystemKind("msms"), data, model_cfg, msms_cfg)
clock(f"msms trained: val {msms_log[0]['val']['loss']:.4f} -> {msms_log[-1]['val']['loss']:.4f}")

# disentanglement measurements
sentences = corpus.sample_eval_sentences(3, seed=555)
score_lf = evaluate.style_transfer_score(msms_model, 1, "LongForm", sentences, 188.0)
score_tts = evaluate.style_transfer_score(msms_model, 1, "TTS", sentences, 188.0)
ratio = score_lf.measured_rate_frames / score_tts.measured_rate_frames
clock(f"voice1 LongForm: pitch {score_lf.measured_pitch_hz:.1f} Hz (target 178.6, err {score_lf.pitch_err:.3f})")
clock(f"voice1 TTS: pitch {score_tts.measured_pitch_hz:.1f} Hz; rate LF {score_lf.measured_rate_frames:.2f} "
      f"TTS {score_tts.measured_rate_frames:.2f} ratio {ratio:.3f} (want 1.0..1.3)")

# regime runs
small = TrainConfig(steps=300, batch_size=8, seed=104, peak_lr=1e-3, validate_every=299)
ms_model, ms_log = training.train(SystemKind("multi_speaker"), data, model_cfg, small)
clock(f"multi_speaker: val {ms_log[-1]['val']['loss']:.4f}")

val_cfg = small
ms_val = training.validation_metrics(ms_model, SystemKind("multi_speaker"), data, val_cfg)
msms_val = training.validation_metrics(msms_model, SystemKind("msms"), data, val_cfg)

ss_vals, pf_vals, forget = {}, {}, {}
for v in (1, 2, 3, 4, 5):
    ss_model, ss_log = training.train(SystemKind("single_speaker", target_speaker=v), data, model_cfg,
                                      TrainConfig(steps=300, batch_size=8, seed=104 + v, peak_lr=1e-3, validate_every=299))
    ss_vals[v] = ss_log[-1]["val"]["mel_per_speaker"][str(v)]
    clock(f"single_speaker v{v}: mel(v{v}) {ss_vals[v]:.4f}")

    pre = TrainConfig(steps=300, batch_size=8, seed=204 + v, peak_lr=1e-3, validate_every=299)
    ft = TrainConfig(steps=15, batch_size=8, seed=304 + v, peak_lr=2e-4, validate_every=14)
    pf_model, pf_log = training.pretrain_finetune(v, data, model_cfg, pre, ft)
    pre_entries = [e for e in pf_log if e["phase"] == "pretrain"]
    ft_entries = [e for e in pf_log if e["phase"] == "finetune"]
    pf_vals[v] = ft_entries[-1]["val"]["mel_per_speaker"][str(v)]
    pre_per = pre_entries[-1]["val"]["mel_per_speaker"]
    post_per = ft_entries[-1]["val"]["mel_per_speaker"]
    others = [s for s in pre_per if int(s) != v]
    forget[v] = (np.mean([pre_per[s] for s in others]), np.mean([post_per[s] for s in others]))
    clock(f"pretrain_finetune v{v}: mel(v{v}) {pf_vals[v]:.4f}; non-target {forget[v][0]:.4f} -> {forget[v][1]:.4f}")

ms_wins = sum(ms_val["mel_per_speaker"][str(v)] <= ss_vals[v] for v in (1, 2, 3, 4, 5))
msms_wins = sum(msms_val["mel_per_speaker"][str(v)] <= pf_vals[v] for v in (1, 2, 3, 4, 5))
clock(f"MultiSpeaker<=SingleSpeaker: {ms_wins}/5 "
      f"({[(round(ms_val['mel_per_speaker'][str(v)],4), round(ss_vals[v],4)) for v in (1,2,3,4,5)]})")
clock(f"MSMS<=PretrainFinetune: {msms_wins}/5 "
      f"({[(round(msms_val['mel_per_speaker'][str(v)],4), round(pf_vals[v],4)) for v in (1,2,3,4,5)]})")
clock(f"forgetting: {[(v, round(a,4), round(b,4)) for v,(a,b) in forget.items()]}")

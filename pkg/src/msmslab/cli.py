"""Command-line gateway for the whole pipeline.

Subcommands cover corpus generation, the five training regimes, vocoder
training, evaluation-set synthesis, the objective evaluations, listening
test statistics, the HTTP rating service, and report rendering. A JSON
config file supplies overrides; every command honors --seed and
--workspace.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import dsp
from . import evaluate
from . import report as report_mod
from . import service as service_mod
from . import tensor as tc
from . import training
from . import vocoder as voc
from .acoustic import ModelConfig, load_model, save_model
from .training import SystemKind, TrainConfig, TrainingData


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# -- workspace conventions ----------------------------------------------------------


class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    @property
    def corpus(self):
        return self.root / "corpus"

    @property
    def checkpoints(self):
        return self.root / "checkpoints"

    @property
    def logs(self):
        return self.root / "logs"

    @property
    def evalset(self):
        return self.root / "evalset"

    @property
    def reports(self):
        return self.root / "reports"

    @property
    def ratings_log(self):
        return self.root / "ratings.jsonl"

    @property
    def eval_sentences(self):
        return self.corpus / "eval_sentences.jsonl"

    def checkpoint(self, name: str) -> Path:
        return self.checkpoints / f"{name}.ckpt"

    def require(self, path: Path, hint: str) -> Path:
        if not path.exists():
            raise CliError("missing-file", f"{path} not found; run `{hint}` first")
        return path


def update_run_manifest(ws: Workspace, seed: int, **fields):
    """Record what this experiment has produced so far.

    The manifest tracks the corpus path, per-system checkpoints, the eval-set
    index and the seeds used; recorded paths are checked at load time.
    """
    path = ws.root / "run_manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {
        "experiment": ws.root.name, "checkpoints": {}, "seeds": {}}
    for key, value in fields.items():
        if key == "checkpoints":
            manifest["checkpoints"].update({k: str(v) for k, v in value.items()})
        elif key == "seeds":
            manifest["seeds"].update(value)
        else:
            manifest[key] = str(value)
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def check_run_manifest(ws: Workspace):
    path = ws.root / "run_manifest.json"
    if not path.exists():
        return None
    manifest = json.loads(path.read_text())
    stale = [p for p in [manifest.get("corpus"), manifest.get("eval_index"),
                         *manifest.get("checkpoints", {}).values()]
             if p and not Path(p).exists()]
    if stale:
        raise CliError("stale-manifest",
                       f"run manifest references missing paths: {stale[:3]}")
    return manifest


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError("missing-file", f"config file {p} not found")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CliError("invalid-config", f"{p}: {e}")


def model_config_from(config: dict) -> ModelConfig:
    section = dict(config.get("model", {}))
    preset = section.pop("preset", "full")
    if "decoder_dilations" in section:
        section["decoder_dilations"] = tuple(section["decoder_dilations"])
    if preset == "desk":
        return ModelConfig.desk(**section)
    if preset == "full":
        return ModelConfig(**section)
    raise CliError("invalid-config", f"unknown model preset {preset!r}")


def train_config_from(config: dict, section: str, seed: int, **defaults) -> TrainConfig:
    merged = {**defaults, **config.get(section, {})}
    merged.setdefault("seed", seed)
    return TrainConfig(**merged)


def speakers_from(config: dict):
    section = config.get("corpus", {})
    if "speakers" in section:
        return [corpus_mod.SpeakerSpec(**s) for s in section["speakers"]]
    return corpus_mod.default_speakers(section.get("minutes_per_table_hour", 2.0))


# -- subcommands -----------------------------------------------------------------------


def cmd_gen_corpus(ws: Workspace, config: dict, seed: int) -> int:
    speakers = speakers_from(config)
    corpus_mod.build_corpus(ws.corpus, speakers=speakers, seed=seed)
    update_run_manifest(ws, seed, corpus=ws.corpus, seeds={"gen-corpus": seed})
    records = corpus_mod.load_manifest(ws.corpus)
    training_sentences = [r.phonemes for r in records]
    n = config.get("corpus", {}).get("eval_sentences_per_domain", 75)
    sentences = corpus_mod.sample_eval_sentences(n, seed=seed, exclude=training_sentences)
    with open(ws.eval_sentences, "w") as f:
        for s in sentences:
            f.write(json.dumps(s, sort_keys=True) + "\n")
    print(f"corpus: {len(records)} utterances for {len(speakers)} speakers; "
          f"{len(sentences)} evaluation sentences")
    return 0


def read_eval_sentences(ws: Workspace, limit_per_domain: int | None = None) -> list[dict]:
    path = ws.require(ws.eval_sentences, "gen-corpus")
    sentences = [json.loads(line) for line in path.read_text().splitlines() if line]
    if limit_per_domain is not None:
        kept, counts = [], {}
        for s in sentences:
            if counts.get(s["domain"], 0) < limit_per_domain:
                kept.append(s)
                counts[s["domain"]] = counts.get(s["domain"], 0) + 1
        sentences = kept
    return sentences


def system_checkpoint_name(kind: str, target: int | None) -> str:
    return kind if target is None else f"{kind}_v{target}"


def cmd_train(ws: Workspace, config: dict, seed: int, args) -> int:
    ws.require(ws.corpus / "manifest.jsonl", "gen-corpus")
    data = TrainingData(ws.corpus)
    target = args.target_speaker
    if args.system == "single_speaker" and target is None:
        raise CliError("invalid-input", "single_speaker requires --target-speaker")
    system = SystemKind(args.system, target_speaker=target)
    cfg = train_config_from(config, "train", seed)
    if args.steps:
        cfg = dataclasses.replace(cfg, steps=args.steps)
    name = system_checkpoint_name(args.system, target)
    ws.checkpoints.mkdir(parents=True, exist_ok=True)
    cadence_dir = ws.checkpoints / "cadence"
    model, log = training.train(system, data, model_config_from(config), cfg,
                                checkpoint_dir=cadence_dir, checkpoint_name=name)
    save_model(ws.checkpoint(name), model, extra={"system": args.system, "target": target})
    write_metrics(ws, name, log)
    update_run_manifest(ws, seed, checkpoints={name: ws.checkpoint(name)},
                        seeds={f"train:{name}": seed})
    print(f"trained {name}: {cfg.steps} steps, final validation loss "
          f"{log[-1]['val']['loss']:.4f} -> {ws.checkpoint(name)}")
    return 0


def write_metrics(ws: Workspace, name: str, log: list[dict]):
    ws.logs.mkdir(parents=True, exist_ok=True)
    with open(ws.logs / f"{name}.metrics.jsonl", "w") as f:
        for entry in log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")


def cmd_pretrain_finetune(ws: Workspace, config: dict, seed: int, args) -> int:
    ws.require(ws.corpus / "manifest.jsonl", "gen-corpus")
    data = TrainingData(ws.corpus)
    pre = train_config_from(config, "pretrain", seed, steps=2000)
    ft = train_config_from(config, "finetune", seed + 1, steps=100, peak_lr=2e-4)
    if args.pre_steps:
        pre = dataclasses.replace(pre, steps=args.pre_steps)
    if args.ft_steps:
        ft = dataclasses.replace(ft, steps=args.ft_steps)
    model, log = training.pretrain_finetune(args.target_speaker, data, model_config_from(config), pre, ft)
    name = system_checkpoint_name("pretrain_finetune", args.target_speaker)
    ws.checkpoints.mkdir(parents=True, exist_ok=True)
    save_model(ws.checkpoint(name), model,
               extra={"system": "pretrain_finetune", "target": args.target_speaker})
    write_metrics(ws, name, log)
    update_run_manifest(ws, seed, checkpoints={name: ws.checkpoint(name)},
                        seeds={f"train:{name}": seed})
    print(f"trained {name}: {pre.steps}+{ft.steps} steps -> {ws.checkpoint(name)}")
    return 0


def cmd_train_vocoder(ws: Workspace, config: dict, seed: int, args) -> int:
    ws.require(ws.corpus / "manifest.jsonl", "gen-corpus")
    records = [r for r in corpus_mod.load_manifest(ws.corpus)
               if r.speaker == args.speaker and r.split == "train"]
    if not records:
        raise CliError("invalid-input", f"no training records for speaker {args.speaker}")
    if args.utterances:
        records = records[:args.utterances]
    meta = corpus_mod.load_meta(ws.corpus)
    section = config.get("vocoder", {})
    vcfg = voc.VocoderConfig(rnn_hidden=section.get("rnn_hidden", 96),
                             embed_channels=section.get("embed_channels", 64),
                             fc_hidden=section.get("fc_hidden", 256))
    model = voc.Vocoder(vcfg, seed=seed, mel_mean=meta["mel_mean"], mel_std=meta["mel_std"])
    pairs = []
    for rec in records:
        clip = dsp.read_wav(ws.corpus / rec.wav)
        mel = tc.load_checkpoint(ws.corpus / rec.features)["mel"]
        pairs.append((voc.utterance_codes(clip), mel))
    steps = args.steps or section.get("steps", 1000)
    log = voc.train_vocoder(model, pairs, steps=steps, seed=seed,
                            batch=section.get("batch", 4), segment=section.get("segment", 360),
                            lr=section.get("lr", 2e-3))
    ws.checkpoints.mkdir(parents=True, exist_ok=True)
    path = ws.checkpoint(f"vocoder_v{args.speaker}")
    voc.save_vocoder(path, model, speaker_id=args.speaker)
    update_run_manifest(ws, seed, checkpoints={f"vocoder_v{args.speaker}": path},
                        seeds={f"train-vocoder:{args.speaker}": seed})
    print(f"vocoder for voice {args.speaker}: {steps} steps, last training nll "
          f"{log[-1][1]:.3f} -> {path}")
    return 0


SYSTEM_CHOICES = ("msms_longform", "msms_tts", "multi_speaker", "single_speaker", "pretrain_finetune")


def resolve_system(ws: Workspace, name: str, voices) -> tuple[SystemKind, object]:
    if name == "msms_longform":
        return SystemKind("msms", inference_style="LongForm"), ws.checkpoint("msms")
    if name == "msms_tts":
        return SystemKind("msms", inference_style="TTS"), ws.checkpoint("msms")
    if name == "multi_speaker":
        return SystemKind("multi_speaker"), ws.checkpoint("multi_speaker")
    # per-voice checkpoints for the unconditioned regimes
    kind = SystemKind(name, target_speaker=voices[0])
    return kind, {v: ws.checkpoint(f"{name}_v{v}") for v in voices}


def cmd_synth_eval_set(ws: Workspace, config: dict, seed: int, args) -> int:
    data = TrainingData(ws.require(ws.corpus, "gen-corpus"))
    voices = [int(v) for v in args.voices.split(",")]
    sentences = read_eval_sentences(ws, args.sentences_per_domain)
    systems = {}
    for name in args.systems.split(","):
        if name not in SYSTEM_CHOICES:
            raise CliError("invalid-input", f"unknown system {name!r}; choices: {SYSTEM_CHOICES}")
        systems[name] = resolve_system(ws, name, voices)
    vocoder_paths = None
    if args.with_vocoder:
        vocoder_paths = {}
        for v in voices:
            vocoder_paths[v] = ws.require(ws.checkpoint(f"vocoder_v{v}"), f"train-vocoder --speaker {v}")
    index = training.synthesize_eval_set(
        ws.evalset, systems, voices, sentences, data, seed=seed,
        vocoder_paths=vocoder_paths,
        temperature=config.get("eval", {}).get("temperature", 0.7))
    update_run_manifest(ws, seed, eval_index=index, seeds={"synth-eval-set": seed})
    print(f"evaluation set: {sum(1 for _ in open(index))} entries -> {index}")
    return 0


def frame_tracks_for_row(row: dict):
    durations = row["durations"]
    pitch = np.repeat(np.asarray(row["pitch_hz"], dtype=np.float64), durations)
    energy = np.repeat(np.asarray(row["energy"], dtype=np.float64), durations)
    return pitch, energy


def embeddings_by_system(ws: Workspace, rows, voice: int) -> dict:
    out: dict = {}
    for row in rows:
        if row["voice"] != voice:
            continue
        mel = tc.load_checkpoint(ws.evalset / row["mel"])["mel"]
        pitch, energy = frame_tracks_for_row(row)
        n = mel.shape[0]
        emb = evaluate.embed_features(mel, pitch[:n], energy[:n])
        out.setdefault(row["system"], {})[row["sentence_id"]] = emb
    return out


def cmd_eval_speaker_sim(ws: Workspace, config: dict, seed: int, args) -> int:
    index = ws.require(ws.evalset / "index.jsonl", "synth-eval-set")
    rows = training.load_eval_index(index)
    systems = embeddings_by_system(ws, rows, args.voice)
    if args.reference not in systems:
        raise CliError("invalid-input",
                       f"reference system {args.reference!r} absent from the eval set "
                       f"(have {sorted(systems)})")
    report_rows = evaluate.similarity_report(systems, args.reference)
    paths = report_mod.render_similarity(ws.reports, report_rows)
    print(report_mod.similarity_table_text(report_rows), end="")
    print(f"written: {paths}")
    return 0


def cmd_eval_pitch(ws: Workspace, config: dict, seed: int, args) -> int:
    voices = [int(v) for v in args.voices.split(",")]
    distributions: dict = {}
    for rec in corpus_mod.load_manifest(ws.require(ws.corpus, "gen-corpus")):
        if rec.speaker not in voices:
            continue
        track = np.repeat(np.asarray(rec.pitch), rec.durations)
        distributions.setdefault(rec.speaker, {}).setdefault("natural", []).append(track)
    index_path = ws.evalset / "index.jsonl"
    if index_path.exists():
        for row in training.load_eval_index(index_path):
            if row["voice"] in voices:
                pitch, _ = frame_tracks_for_row(row)
                distributions.setdefault(row["voice"], {}).setdefault(row["system"], []).append(pitch)
    shaped = {v: {system: evaluate.pitch_distribution(tracks)
                  for system, tracks in by_system.items()}
              for v, by_system in distributions.items()}
    paths = report_mod.render_pitch(ws.reports, shaped)
    for v, by_system in sorted(shaped.items()):
        for system, dist in sorted(by_system.items()):
            median = "n/a" if dist.empty else f"{dist.median:.1f} Hz"
            print(f"voice {v} {system}: median {median} over {dist.voiced_frames} voiced frames")
    print(f"written: {paths}")
    return 0


def canonical_style(name: str) -> str:
    for style in corpus_mod.STYLES:
        if style.lower() == name.lower():
            return style
    raise CliError("invalid-input", f"unknown style {name!r}; choices: {sorted(corpus_mod.STYLES)}")


def cmd_eval_style(ws: Workspace, config: dict, seed: int, args) -> int:
    ckpt = ws.require(ws.checkpoint(args.checkpoint), "train --system msms")
    args.style = canonical_style(args.style)
    model, _ = load_model(ckpt)
    sentences = read_eval_sentences(ws, args.sentences_per_domain)
    meta = corpus_mod.load_meta(ws.corpus)
    medians = {s["id"]: s["median_pitch"] for s in meta["speakers"]}
    if args.voice not in medians:
        raise CliError("invalid-input", f"voice {args.voice} not in corpus (have {sorted(medians)})")
    score = evaluate.style_transfer_score(model, args.voice, args.style, sentences, medians[args.voice])
    paths = report_mod.render_style(ws.reports, {f"voice{args.voice}_{args.style}": score})
    print(f"voice {args.voice} style {args.style}: "
          f"pitch {score.measured_pitch_hz:.1f} Hz (target {score.target_pitch_hz:.1f}, "
          f"err {score.pitch_err:.3f}); rate {score.measured_rate_frames:.2f} frames "
          f"(target {score.target_rate_frames:.2f}, err {score.rate_err:.3f})")
    print(f"written: {paths}")
    return 0


def cmd_stats_abx(ws: Workspace, config: dict, seed: int, args) -> int:
    log = Path(args.log) if args.log else ws.ratings_log
    rows = service_mod.abx_table(service_mod.read_ratings(ws.require(log, "serve")))
    print(report_mod.abx_table_text(rows), end="")
    return 0


def cmd_stats_mos(ws: Workspace, config: dict, seed: int, args) -> int:
    log = Path(args.log) if args.log else ws.ratings_log
    ratings = [r for r in service_mod.read_ratings(ws.require(log, "serve")) if r.get("kind") == "mos"]
    table = evaluate.mos_aggregate(ratings, group_key=lambda r: r["system"])
    rows = [{"system": k, **v} for k, v in table.items()]
    print(report_mod.format_table(rows, [
        ("system", "System", "{}"), ("mean", "MOS", "{:.2f}"),
        ("ci_low", "CI low", "{:.2f}"), ("ci_high", "CI high", "{:.2f}"), ("n", "N", "{}")]), end="")
    return 0


def cmd_serve(ws: Workspace, config: dict, seed: int, args) -> int:
    import uvicorn

    index = Path(args.index) if args.index else ws.require(ws.evalset / "index.jsonl", "synth-eval-set")
    pairs = tuple(tuple(p) for p in config.get("abx_pairs", service_mod.DEFAULT_ABX_PAIRS))
    app = service_mod.create_app(index, ws.corpus, ws.root, seed=seed, abx_pairs=pairs)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_report(ws: Workspace, config: dict, seed: int, args) -> int:
    written = []
    if ws.ratings_log.exists():
        results = service_mod.aggregate_log(ws.ratings_log)
        written.append(report_mod.render_mos(ws.reports, results))
        written.append(report_mod.render_abx(ws.reports, results["abx"]))
    if ws.logs.exists():
        for metrics in sorted(ws.logs.glob("*.metrics.jsonl")):
            log = [json.loads(line) for line in metrics.read_text().splitlines() if line]
            written.append(report_mod.render_training(ws.reports, metrics.name.split(".")[0], log))
    if not written:
        print("nothing to report yet: no ratings log and no training metrics")
        return 0
    for paths in written:
        print(f"written: {paths}")
    return 0


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msmslab",
                                     description="multi-speaker multi-style TTS laboratory")
    parser.add_argument("--workspace", default="workspace", help="working directory root")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", default=None, help="JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-corpus", help="render the synthetic corpus and eval sentences")

    p = sub.add_parser("train", help="train an acoustic model regime")
    p.add_argument("--system", required=True, choices=("msms", "multi_speaker", "single_speaker"))
    p.add_argument("--target-speaker", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("pretrain-finetune", help="pretrain on all data then fine-tune on one voice")
    p.add_argument("--target-speaker", type=int, required=True)
    p.add_argument("--pre-steps", type=int, default=None)
    p.add_argument("--ft-steps", type=int, default=None)

    p = sub.add_parser("train-vocoder", help="train the per-speaker waveform vocoder")
    p.add_argument("--speaker", type=int, required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--utterances", type=int, default=None, help="limit training utterances")

    p = sub.add_parser("synth-eval-set", help="synthesize the evaluation set")
    p.add_argument("--systems", required=True, help="comma list, e.g. msms_longform,msms_tts")
    p.add_argument("--voices", required=True, help="comma list of voice ids")
    p.add_argument("--sentences-per-domain", type=int, default=None)
    p.add_argument("--with-vocoder", action="store_true")

    p = sub.add_parser("eval-speaker-sim", help="speaker-embedding similarity table")
    p.add_argument("--voice", type=int, required=True)
    p.add_argument("--reference", default="single_speaker")

    p = sub.add_parser("eval-pitch", help="pitch distributions per voice and system")
    p.add_argument("--voices", required=True)

    p = sub.add_parser("eval-style", help="style-transfer score for one (voice, style)")
    p.add_argument("--voice", type=int, required=True)
    p.add_argument("--style", required=True, help="TTS or LongForm (case-insensitive)")
    p.add_argument("--checkpoint", default="msms")
    p.add_argument("--sentences-per-domain", type=int, default=5)

    p = sub.add_parser("stats-abx", help="ABX win shares and exact p-values from the log")
    p.add_argument("--log", default=None)

    p = sub.add_parser("stats-mos", help="MOS means and confidence intervals from the log")
    p.add_argument("--log", default=None)

    p = sub.add_parser("serve", help="run the listening-test HTTP service")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--index", default=None)

    sub.add_parser("report", help="render figures and tables from everything available")
    return parser


COMMANDS = {
    "gen-corpus": lambda ws, cfg, seed, args: cmd_gen_corpus(ws, cfg, seed),
    "train": cmd_train,
    "pretrain-finetune": cmd_pretrain_finetune,
    "train-vocoder": cmd_train_vocoder,
    "synth-eval-set": cmd_synth_eval_set,
    "eval-speaker-sim": cmd_eval_speaker_sim,
    "eval-pitch": cmd_eval_pitch,
    "eval-style": cmd_eval_style,
    "stats-abx": cmd_stats_abx,
    "stats-mos": cmd_stats_mos,
    "serve": cmd_serve,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    ws = Workspace(args.workspace)
    ws.root.mkdir(parents=True, exist_ok=True)
    try:
        config = load_config(args.config)
        check_run_manifest(ws)
        return COMMANDS[args.command](ws, config, args.seed, args)
    except CliError as e:
        print(f"{e.category}: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"missing-file: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as e:
        print(f"invalid-input: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Listening-test service: serves balanced MOS/ABX trials and audio over
HTTP, appends ratings to a JSON-lines log, and reports aggregates.

State lives in the log file alone; on startup the schedule is rebuilt
deterministically from the evaluation index and the seed, and already
submitted ratings are replayed from the log.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, JSONResponse

from . import corpus as corpus_mod
from . import evaluate
from .training import load_eval_index

DEVICE_TAGS = ("headphones", "loudspeakers")
DEFAULT_ABX_PAIRS = (("msms_longform", "multi_speaker"), ("msms_longform", "msms_tts"))


def natural_reference_rows(corpus_dir) -> list[dict]:
    """Index entries for the corpus's natural renders (ABX references and
    similarity baselines). Paths are absolute."""
    corpus_dir = Path(corpus_dir)
    rows = []
    for rec in corpus_mod.load_manifest(corpus_dir):
        rows.append({
            "audio_id": f"natural/voice{rec.speaker}/{rec.utt}",
            "system": "natural",
            "voice": rec.speaker,
            "style": rec.style,
            "domain": rec.domain,
            "sentence_id": rec.utt,
            "wav": str(corpus_dir / rec.wav),
            "mel": str(corpus_dir / rec.features),
            "split": rec.split,
        })
    return rows


def assign_trials(index_rows, kind: str, seed: int, abx_pairs=DEFAULT_ABX_PAIRS) -> list[dict]:
    """Deterministic trial schedule over the evaluation index.

    MOS trials are stratified over system x voice x domain. ABX trials pair
    the two configured systems on the same voice and sentence with sides
    balanced per voice, and reference a natural long-form sample.
    """
    playable = [r for r in index_rows if r.get("wav")]
    if kind == "mos":
        strata: dict = {}
        for row in playable:
            if row["system"] == "natural":
                continue
            strata.setdefault((row["system"], row["voice"], row["domain"]), []).append(row)
        if not strata:
            raise ValueError("empty eval index: no playable system outputs for MOS trials")
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
        for key in sorted(strata):
            strata[key].sort(key=lambda r: r["audio_id"])
            rng.shuffle(strata[key])
        trials = []
        keys = sorted(strata)
        position = 0
        while any(strata[k] for k in keys):
            for key in keys:
                if strata[key]:
                    row = strata[key].pop()
                    trials.append({
                        "trial_id": f"mos-{position:05d}",
                        "kind": "mos",
                        "sample": row["audio_id"],
                        "system": row["system"],
                        "voice": row["voice"],
                        "domain": row["domain"],
                    })
                    position += 1
        return trials

    if kind == "abx":
        naturals = [r for r in playable if r["system"] == "natural" and r.get("style") == "LongForm"]
        if not naturals:
            raise ValueError("ABX trials need natural long-form reference samples in the index")
        naturals.sort(key=lambda r: r["audio_id"])
        by_key = {}
        for row in playable:
            by_key[(row["system"], row["voice"], row["sentence_id"])] = row
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2,)))
        trials = []
        position = 0
        for pair in abx_pairs:
            sys_a, sys_b = pair
            voices = sorted({r["voice"] for r in playable if r["system"] == sys_a})
            for voice in voices:
                sentences = sorted({key[2] for key in by_key
                                    if key[0] == sys_a and key[1] == voice
                                    and (sys_b, voice, key[2]) in by_key})
                side_flip = int(rng.integers(0, 2))
                for i, sentence in enumerate(sentences):
                    first = by_key[(sys_a, voice, sentence)]
                    second = by_key[(sys_b, voice, sentence)]
                    if (i + side_flip) % 2:
                        first, second = second, first
                    reference = naturals[int(rng.integers(0, len(naturals)))]
                    trials.append({
                        "trial_id": f"abx-{position:05d}",
                        "kind": "abx",
                        "a": first["audio_id"],
                        "b": second["audio_id"],
                        "x": reference["audio_id"],
                        "a_system": first["system"],
                        "b_system": second["system"],
                        "pair": f"{sys_a}|{sys_b}",
                        "voice": voice,
                    })
                    position += 1
        if not trials:
            raise ValueError("empty eval index: no overlapping system pairs for ABX trials")
        return trials

    raise ValueError(f"unknown trial kind {kind!r}")


class ListeningService:
    """Owns the schedule, the audio map, and the append-only ratings log."""

    def __init__(self, index_path, corpus_dir, workspace, seed: int = 0,
                 abx_pairs=DEFAULT_ABX_PAIRS):
        index_path = Path(index_path)
        rows = load_eval_index(index_path)
        for row in rows:  # eval-set paths are relative to the index location
            for key in ("wav", "mel"):
                if row.get(key):
                    row[key] = str(index_path.parent / row[key])
        rows += natural_reference_rows(corpus_dir)
        self.rows = rows
        self.audio_paths = {r["audio_id"]: r["wav"] for r in rows if r.get("wav")}
        self.trials = {
            "mos": assign_trials(rows, "mos", seed, abx_pairs),
            "abx": assign_trials(rows, "abx", seed, abx_pairs),
        }
        self.by_trial_id = {t["trial_id"]: t for kind in self.trials for t in self.trials[kind]}
        self.log_path = Path(workspace) / "ratings.jsonl"
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.seen: set[tuple[str, str]] = set()
        self._replay_log()

    def _replay_log(self):
        if not self.log_path.exists():
            return
        with open(self.log_path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn tail line from a crash; earlier lines stay valid
                self.seen.add((rec["trial_id"], rec["rater"]))

    def next_trial(self, rater: str, kind: str) -> dict | None:
        for trial in self.trials[kind]:
            if (trial["trial_id"], rater) not in self.seen:
                return trial
        return None

    def progress(self, rater: str, kind: str) -> dict:
        done = sum(1 for t in self.trials[kind] if (t["trial_id"], rater) in self.seen)
        return {"done": done, "total": len(self.trials[kind])}

    def submit(self, trial_id: str, rater: str, response, device: str) -> dict:
        trial = self.by_trial_id.get(trial_id)
        if trial is None:
            raise KeyError(trial_id)
        record = {
            "trial_id": trial_id,
            "kind": trial["kind"],
            "rater": rater,
            "device": device,
            "timestamp": time.time(),
        }
        if trial["kind"] == "mos":
            record.update(score=int(response), sample=trial["sample"], system=trial["system"],
                          voice=trial["voice"], domain=trial["domain"])
        else:
            record.update(choice=response, pair=trial["pair"], voice=trial["voice"],
                          chosen_system=trial["a_system"] if response == "A" else trial["b_system"])
        with self._lock:
            if (trial_id, rater) in self.seen:
                raise FileExistsError(trial_id)
            with open(self.log_path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
                f.flush()
            self.seen.add((trial_id, rater))
        return record

    def results(self) -> dict:
        return aggregate_log(self.log_path)


def read_ratings(log_path) -> list[dict]:
    out = []
    path = Path(log_path)
    if not path.exists():
        return out
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError:
                continue
    return out


def abx_table(ratings) -> list[dict]:
    """Per (pair, voice) win counts and the exact two-sided p-value."""
    grouped: dict = {}
    for r in ratings:
        if r.get("kind") != "abx":
            continue
        key = (r["pair"], r["voice"])
        wins, n = grouped.get(key, (0, 0))
        first_system = r["pair"].split("|")[0]
        grouped[key] = (wins + (r["chosen_system"] == first_system), n + 1)
    rows = []
    for (pair, voice), (wins, n) in sorted(grouped.items()):
        rows.append({
            "pair": pair,
            "voice": voice,
            "wins_first": wins,
            "n": n,
            "share_first": wins / n,
            "p_value": evaluate.abx_binomial(wins, n),
        })
    return rows


def aggregate_log(log_path) -> dict:
    ratings = read_ratings(log_path)
    mos = [r for r in ratings if r.get("kind") == "mos"]
    return {
        "count": len(ratings),
        "mos_by_system": evaluate.mos_aggregate(mos, group_key=lambda r: r["system"]) if mos else {},
        "mos_by_voice": evaluate.mos_aggregate(
            mos, group_key=lambda r: f"{r['system']}|voice{r['voice']}") if mos else {},
        "mos_by_domain": evaluate.mos_aggregate(
            mos, group_key=lambda r: f"{r['system']}|{r['domain']}") if mos else {},
        "abx": abx_table(ratings),
        "devices": {tag: sum(1 for r in ratings if r.get("device") == tag) for tag in DEVICE_TAGS},
    }


def create_app(index_path, corpus_dir, workspace, seed: int = 0,
               abx_pairs=DEFAULT_ABX_PAIRS) -> FastAPI:
    service = ListeningService(index_path, corpus_dir, workspace, seed, abx_pairs)
    app = FastAPI(title="listening-test gateway")
    app.state.service = service

    @app.get("/api/session/next")
    def next_trial(rater: str = Query(...), kind: str = Query(...)):
        if kind not in ("mos", "abx"):
            raise HTTPException(status_code=400, detail={"kind": f"unknown kind {kind!r}"})
        trial = service.next_trial(rater, kind)
        progress = service.progress(rater, kind)
        if trial is None:
            return {"done": True, "progress": progress}
        payload = {"trial_id": trial["trial_id"], "kind": kind, "progress": progress}
        if kind == "mos":
            payload["sample_url"] = f"/audio/{trial['sample']}.wav"
        else:
            payload["a_url"] = f"/audio/{trial['a']}.wav"
            payload["b_url"] = f"/audio/{trial['b']}.wav"
            payload["x_url"] = f"/audio/{trial['x']}.wav"
        return payload

    @app.post("/api/rating", status_code=204)
    def submit_rating(body: dict):
        problems = {}
        for fieldname in ("trial_id", "rater", "device"):
            if not isinstance(body.get(fieldname), str) or not body.get(fieldname):
                problems[fieldname] = "required string"
        if body.get("device") and body["device"] not in DEVICE_TAGS:
            problems["device"] = f"must be one of {DEVICE_TAGS}"
        trial = service.by_trial_id.get(body.get("trial_id", ""))
        if trial is not None and not problems:
            if trial["kind"] == "mos":
                score = body.get("score")
                if not isinstance(score, int) or not 1 <= score <= 5:
                    problems["score"] = "integer 1..5 required"
            else:
                if body.get("choice") not in ("A", "B"):
                    problems["choice"] = "must be 'A' or 'B'"
        if problems:
            raise HTTPException(status_code=400, detail=problems)
        if trial is None:
            raise HTTPException(status_code=404, detail={"trial_id": "unknown trial"})
        response = body["score"] if trial["kind"] == "mos" else body["choice"]
        try:
            service.submit(body["trial_id"], body["rater"], response, body["device"])
        except FileExistsError:
            raise HTTPException(status_code=409, detail={"trial_id": "already rated by this rater"})
        return JSONResponse(status_code=204, content=None)

    @app.get("/api/results")
    def results():
        return service.results()

    @app.get("/audio/{audio_id:path}.wav")
    def audio(audio_id: str):
        path = service.audio_paths.get(audio_id)
        if path is None or not Path(path).exists():
            raise HTTPException(status_code=404, detail={"audio_id": f"unknown audio {audio_id!r}"})
        return FileResponse(path, media_type="audio/wav")

    return app

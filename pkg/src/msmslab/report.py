"""Report rendering: aligned-column text, JSON, and matplotlib figures.

Every report lands as a trio next to each other: ``<name>.json`` with the
raw numbers, ``<name>.txt`` in a fixed-width layout, and ``<name>.png``.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluate import PITCH_HIST_EDGES


def format_table(rows: list[dict], columns: list[tuple]) -> str:
    """Aligned columns; ``columns`` is a list of (key, header, format)."""
    cells = [[fmt.format(row[key]) if row.get(key) is not None else "-"
              for key, _, fmt in columns] for row in rows]
    headers = [header for _, header, _ in columns]
    widths = [max(len(h), *(len(c[i]) for c in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def write_report(out_dir, name: str, payload: dict, text: str, figure=None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / f"{name}.json", "txt": out_dir / f"{name}.txt"}
    paths["json"].write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    paths["txt"].write_text(text)
    if figure is not None:
        paths["png"] = out_dir / f"{name}.png"
        figure.savefig(paths["png"], dpi=150, bbox_inches="tight")
        plt.close(figure)
    return {k: str(v) for k, v in paths.items()}


# -- similarity (speaker table) ----------------------------------------------------


def similarity_table_text(rows: list[dict]) -> str:
    return format_table(rows, [
        ("system", "System", "{}"),
        ("mse", "MSE v", "{:.3e}"),
        ("cosine", "Cosine sim. ^", "{:.3f}"),
    ])


def render_similarity(out_dir, rows: list[dict]) -> dict:
    fig, ax = plt.subplots(figsize=(6, 0.6 + 0.5 * len(rows)))
    names = [r["system"] for r in rows]
    ax.barh(names, [r["cosine"] for r in rows], color="#4878b0")
    ax.set_xlabel("cosine similarity to reference")
    ax.set_xlim(0, 1.05)
    ax.invert_yaxis()
    for i, r in enumerate(rows):
        ax.text(r["cosine"], i, f" {r['cosine']:.3f}", va="center")
    return write_report(out_dir, "speaker_similarity", {"rows": rows},
                        similarity_table_text(rows), fig)


# -- MOS ------------------------------------------------------------------------------


def render_mos(out_dir, results: dict) -> dict:
    by_system = results.get("mos_by_system", {})
    rows = [{"system": k, **v} for k, v in by_system.items()]
    text = format_table(rows, [
        ("system", "System", "{}"),
        ("mean", "MOS", "{:.2f}"),
        ("ci_low", "CI low", "{:.2f}"),
        ("ci_high", "CI high", "{:.2f}"),
        ("n", "N", "{}"),
    ])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    if rows:
        names = [r["system"] for r in rows]
        means = np.array([r["mean"] for r in rows])
        errs = np.array([[r["mean"] - r["ci_low"] for r in rows],
                         [r["ci_high"] - r["mean"] for r in rows]])
        ax1.bar(names, means, yerr=errs, capsize=4, color="#4878b0")
        ax1.set_ylim(1, 5)
        ax1.set_ylabel("MOS with 95% CI")
        ax1.tick_params(axis="x", rotation=30)

        bottom = np.zeros(len(rows))
        for score in range(5):
            share = np.array([r["histogram"][score] / max(1, r["n"]) for r in rows])
            ax2.bar(names, share, bottom=bottom, label=str(score + 1))
            bottom += share
        ax2.set_ylabel("score share")
        ax2.legend(title="score", fontsize=8)
        ax2.tick_params(axis="x", rotation=30)
    return write_report(out_dir, "mos", results, text, fig)


# -- ABX ------------------------------------------------------------------------------


def abx_table_text(rows: list[dict]) -> str:
    shaped = []
    for r in rows:
        shaped.append({**r, "p_text": format_p(r["p_value"])})
    return format_table(shaped, [
        ("pair", "Comparison", "{}"),
        ("voice", "Voice", "{}"),
        ("wins_first", "Wins(first)", "{}"),
        ("n", "N", "{}"),
        ("share_first", "Share", "{:.3f}"),
        ("p_text", "p-value", "{}"),
    ])


def format_p(p: float) -> str:
    text = f"{p:.4f}"
    return f"**{text}**" if p <= 0.05 else text


def render_abx(out_dir, rows: list[dict]) -> dict:
    fig, ax = plt.subplots(figsize=(7, 0.8 + 0.5 * max(1, len(rows))))
    if rows:
        labels = [f"{r['pair']} voice {r['voice']}" for r in rows]
        shares = [r["share_first"] for r in rows]
        ax.barh(labels, shares, color="#4878b0")
        ax.axvline(0.5, color="k", linestyle=":")
        ax.set_xlim(0, 1)
        ax.set_xlabel("share choosing first system")
        ax.invert_yaxis()
        for i, r in enumerate(rows):
            weight = "bold" if r["p_value"] <= 0.05 else "normal"
            ax.text(max(shares[i], 0.52), i, f" p={r['p_value']:.3g}",
                    va="center", fontweight=weight)
    return write_report(out_dir, "abx", {"rows": rows}, abx_table_text(rows), fig)


# -- pitch distributions -----------------------------------------------------------------


def render_pitch(out_dir, distributions: dict) -> dict:
    """``distributions`` maps voice -> {system: PitchDistribution}."""
    payload = {}
    rows = []
    voices = sorted(distributions)
    fig, axes = plt.subplots(len(voices), 1, figsize=(7, 2.2 * max(1, len(voices))),
                             squeeze=False, sharex=True)
    centers = (PITCH_HIST_EDGES[:-1] + PITCH_HIST_EDGES[1:]) / 2.0
    for ax, voice in zip(axes[:, 0], voices):
        for system in sorted(distributions[voice]):
            dist = distributions[voice][system]
            payload.setdefault(str(voice), {})[system] = {
                "median": None if dist.empty else dist.median,
                "voiced_frames": dist.voiced_frames,
                "histogram": [float(x) for x in dist.histogram],
            }
            rows.append({"voice": voice, "system": system,
                         "median": None if dist.empty else dist.median,
                         "voiced_frames": dist.voiced_frames})
            if not dist.empty:
                ax.plot(centers, dist.histogram, label=system)
        ax.set_ylabel(f"voice {voice}")
        ax.legend(fontsize=7)
    axes[-1, 0].set_xlabel("pitch (Hz)")
    text = format_table(rows, [
        ("voice", "Voice", "{}"),
        ("system", "System", "{}"),
        ("median", "Median Hz", "{:.1f}"),
        ("voiced_frames", "Voiced frames", "{}"),
    ])
    return write_report(out_dir, "pitch_distribution", payload, text, fig)


# -- style transfer ------------------------------------------------------------------------


def render_style(out_dir, scores: dict) -> dict:
    """``scores`` maps (voice, style) label -> StyleTransferScore."""
    rows = []
    for label, s in sorted(scores.items()):
        rows.append({
            "case": label,
            "pitch_err": s.pitch_err, "rate_err": s.rate_err,
            "measured_pitch": s.measured_pitch_hz, "target_pitch": s.target_pitch_hz,
            "measured_rate": s.measured_rate_frames, "target_rate": s.target_rate_frames,
        })
    text = format_table(rows, [
        ("case", "Case", "{}"),
        ("measured_pitch", "Pitch Hz", "{:.1f}"),
        ("target_pitch", "Target Hz", "{:.1f}"),
        ("pitch_err", "Pitch err", "{:.3f}"),
        ("measured_rate", "Rate fr", "{:.2f}"),
        ("target_rate", "Target fr", "{:.2f}"),
        ("rate_err", "Rate err", "{:.3f}"),
    ])
    fig, ax = plt.subplots(figsize=(6, 0.8 + 0.5 * max(1, len(rows))))
    if rows:
        labels = [r["case"] for r in rows]
        ax.barh(labels, [r["pitch_err"] for r in rows], height=0.35, label="pitch err", color="#4878b0")
        ax.barh([i + 0.4 for i in range(len(rows))], [r["rate_err"] for r in rows],
                height=0.35, label="rate err", color="#e1812c")
        ax.legend(fontsize=8)
        ax.set_xlabel("relative error")
        ax.invert_yaxis()
    return write_report(out_dir, "style_transfer", {"rows": rows}, text, fig)


# -- training curves -------------------------------------------------------------------------


def render_training(out_dir, name: str, log: list[dict]) -> dict:
    steps = [e["step"] for e in log]
    val = [e["val"]["loss"] for e in log]
    train_mel = [e["train"]["mel"] for e in log]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, train_mel, label="train mel L1")
    ax.plot(steps, val, label="validation loss")
    ax.set_xlabel("step")
    ax.legend(fontsize=8)
    text = format_table(
        [{"step": s, "train_mel": t, "val": v} for s, t, v in zip(steps, train_mel, val)],
        [("step", "Step", "{}"), ("train_mel", "Train mel", "{:.4f}"), ("val", "Val loss", "{:.4f}")])
    return write_report(out_dir, f"training_{name}", {"log": log}, text, fig)

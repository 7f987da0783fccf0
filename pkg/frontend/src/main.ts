import { ApiClient } from "./api.js";
import { renderDashboard } from "./dashboard.js";
import { ActiveTrial, TrialSession } from "./session.js";
import type { DeviceTag, TrialKind } from "./types.js";

const api = new ApiClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function renderTrial(trial: ActiveTrial, session: TrialSession): void {
  const host = el<HTMLDivElement>("trial");
  host.innerHTML = "";
  const progress = el<HTMLSpanElement>("progress");
  progress.textContent = `${trial.progress.done} / ${trial.progress.total}`;

  const submit = document.createElement("div");
  submit.className = "choices";

  for (const label of trial.gate.labels()) {
    const wrap = document.createElement("div");
    wrap.className = "player";
    const name = document.createElement("span");
    name.textContent = label;
    const button = document.createElement("button");
    button.textContent = `Play ${label}`;
    button.addEventListener("click", () => void trial.gate.play(label));
    wrap.append(name, button);
    host.append(wrap);
  }

  const update = () => {
    for (const b of submit.querySelectorAll("button")) {
      (b as HTMLButtonElement).disabled = !session.canSubmit;
    }
  };
  const submitChoice = async (choice: number | "A" | "B") => {
    const outcome = await session.submit(choice);
    if (outcome === "network-error") {
      el<HTMLDivElement>("status").textContent =
        "Network problem; your choice is kept. Press submit again to retry.";
      return;
    }
    el<HTMLDivElement>("status").textContent = outcome === "duplicate" ? "Already rated; skipping." : "";
    await nextTrial(session);
  };

  if (trial.kind === "mos") {
    for (let score = 1; score <= 5; score++) {
      const b = document.createElement("button");
      b.textContent = String(score);
      b.addEventListener("click", () => void submitChoice(score));
      submit.append(b);
    }
  } else {
    for (const side of ["A", "B"] as const) {
      const b = document.createElement("button");
      b.textContent = `${side} is closer to X`;
      b.addEventListener("click", () => void submitChoice(side));
      submit.append(b);
    }
  }
  host.append(submit);
  update();
  window.setInterval(update, 250); // playback completion flips the gate
}

async function nextTrial(session: TrialSession): Promise<void> {
  const event = await session.advance();
  if (event.type === "done") {
    el<HTMLDivElement>("trial").innerHTML = `<p>Session complete: ${event.completed} trials rated. Thank you.</p>`;
    return;
  }
  if (event.type === "trial") renderTrial(event.trial, session);
}

async function startSession(): Promise<void> {
  const rater = el<HTMLInputElement>("rater").value.trim();
  const kind = el<HTMLSelectElement>("kind").value as TrialKind;
  const device = el<HTMLSelectElement>("device").value as DeviceTag;
  if (!rater) {
    el<HTMLDivElement>("status").textContent = "Enter a rater id first.";
    return;
  }
  const session = new TrialSession(api, rater, kind, device, (url) => new Audio(url));
  el<HTMLDivElement>("setup").hidden = true;
  await nextTrial(session);
}

async function showResults(): Promise<void> {
  renderDashboard(el<HTMLDivElement>("dashboard"), await api.results());
}

el<HTMLButtonElement>("start").addEventListener("click", () => void startSession());
el<HTMLButtonElement>("refresh").addEventListener("click", () => void showResults());

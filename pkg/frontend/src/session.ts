import { ApiClient, SubmitOutcome } from "./api.js";
import { AudioFactory, PlaybackGate } from "./audio.js";
import { DeviceTag, NextTrialResponse, TrialKind, isDone } from "./types.js";

export interface ActiveTrial {
  trialId: string;
  kind: TrialKind;
  gate: PlaybackGate;
  progress: { done: number; total: number };
}

export type SessionEvent =
  | { type: "trial"; trial: ActiveTrial }
  | { type: "done"; completed: number }
  | { type: "retry"; pending: number | "A" | "B" };

/**
 * Drives one rater through a MOS or ABX session: fetch trial, gate
 * submission on complete playback, post the response, advance.
 *
 * A failed POST keeps the pending choice so the rater can retry without
 * re-entering it; a duplicate (409) skips forward to the next trial.
 */
export class TrialSession {
  private current: ActiveTrial | null = null;
  private pendingChoice: number | "A" | "B" | null = null;
  accepted = 0;

  constructor(
    private readonly api: ApiClient,
    private readonly rater: string,
    private readonly kind: TrialKind,
    private readonly device: DeviceTag,
    private readonly audioFactory: AudioFactory,
  ) {}

  get activeTrial(): ActiveTrial | null {
    return this.current;
  }

  get canSubmit(): boolean {
    return this.current !== null && this.current.gate.allPlayed;
  }

  async advance(): Promise<SessionEvent> {
    const next: NextTrialResponse = await this.api.nextTrial(this.rater, this.kind);
    if (isDone(next)) {
      this.current = null;
      return { type: "done", completed: next.progress.done };
    }
    const labels: Record<string, string> =
      next.kind === "mos"
        ? { sample: next.sample_url }
        : { A: next.a_url, B: next.b_url, X: next.x_url };
    this.current = {
      trialId: next.trial_id,
      kind: next.kind,
      gate: new PlaybackGate(labels, this.audioFactory),
      progress: next.progress,
    };
    this.pendingChoice = null;
    return { type: "trial", trial: this.current };
  }

  /** Submit a score (MOS) or side choice (ABX) for the active trial. */
  async submit(choice: number | "A" | "B"): Promise<SubmitOutcome> {
    if (!this.current) throw new Error("no active trial");
    if (!this.current.gate.allPlayed) {
      throw new Error("all audio must be played to completion before submitting");
    }
    if (this.kind === "mos" && (typeof choice !== "number" || choice < 1 || choice > 5)) {
      throw new Error(`MOS score must be 1..5, got ${choice}`);
    }
    if (this.kind === "abx" && choice !== "A" && choice !== "B") {
      throw new Error(`ABX choice must be A or B, got ${choice}`);
    }
    this.pendingChoice = choice;
    const body = {
      trial_id: this.current.trialId,
      rater: this.rater,
      device: this.device,
      ...(this.kind === "mos" ? { score: choice as number } : { choice: choice as "A" | "B" }),
    };
    const outcome = await this.api.submitRating(body);
    if (outcome === "accepted") {
      this.accepted += 1;
      this.pendingChoice = null;
      this.current = null;
    } else if (outcome === "duplicate") {
      // already rated (for example after a lost 204): skip forward
      this.pendingChoice = null;
      this.current = null;
    }
    // on network-error the pending choice and trial stay for a retry
    return outcome;
  }

  get pending(): number | "A" | "B" | null {
    return this.pendingChoice;
  }

  async retry(): Promise<SubmitOutcome> {
    if (this.pendingChoice === null) throw new Error("nothing to retry");
    return this.submit(this.pendingChoice);
  }
}

/** Playback tracking: a trial may be submitted only after every one of its
 * audio elements has played to completion at least once. */

export interface AudioElementLike {
  play(): Promise<void> | void;
  addEventListener(type: "ended", cb: () => void): void;
}

export type AudioFactory = (url: string) => AudioElementLike;

export class PlaybackGate {
  private readonly completed = new Set<string>();
  private readonly players = new Map<string, AudioElementLike>();

  constructor(labels: Record<string, string>, factory: AudioFactory) {
    for (const [label, url] of Object.entries(labels)) {
      const el = factory(url);
      el.addEventListener("ended", () => this.completed.add(label));
      this.players.set(label, el);
    }
  }

  labels(): string[] {
    return [...this.players.keys()];
  }

  play(label: string): Promise<void> | void {
    const el = this.players.get(label);
    if (!el) throw new Error(`no player labeled ${label}`);
    return el.play();
  }

  hasCompleted(label: string): boolean {
    return this.completed.has(label);
  }

  /** True only when every sample has been heard to the end. */
  get allPlayed(): boolean {
    return this.completed.size === this.players.size;
  }
}

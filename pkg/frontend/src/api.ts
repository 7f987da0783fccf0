import type { DeviceTag, NextTrialResponse, Results, TrialKind } from "./types.js";

export type SubmitOutcome = "accepted" | "duplicate" | "rejected" | "network-error";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin client over the rating service; all statistics stay server-side. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async nextTrial(rater: string, kind: TrialKind): Promise<NextTrialResponse> {
    const params = new URLSearchParams({ rater, kind });
    const res = await this.fetchFn(this.url(`/api/session/next?${params}`));
    if (!res.ok) {
      throw new Error(`next trial failed: HTTP ${res.status}`);
    }
    return (await res.json()) as NextTrialResponse;
  }

  async submitRating(body: {
    trial_id: string;
    rater: string;
    device: DeviceTag;
    score?: number;
    choice?: "A" | "B";
  }): Promise<SubmitOutcome> {
    let res: Response;
    try {
      res = await this.fetchFn(this.url("/api/rating"), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch {
      return "network-error";
    }
    if (res.status === 204) return "accepted";
    if (res.status === 409) return "duplicate";
    return "rejected";
  }

  async results(): Promise<Results> {
    const res = await this.fetchFn(this.url("/api/results"));
    if (!res.ok) {
      throw new Error(`results failed: HTTP ${res.status}`);
    }
    return (await res.json()) as Results;
  }
}

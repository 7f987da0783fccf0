export type TrialKind = "mos" | "abx";
export type DeviceTag = "headphones" | "loudspeakers";

export interface Progress {
  done: number;
  total: number;
}

export interface MosTrial {
  trial_id: string;
  kind: "mos";
  sample_url: string;
  progress: Progress;
}

export interface AbxTrial {
  trial_id: string;
  kind: "abx";
  a_url: string;
  b_url: string;
  x_url: string;
  progress: Progress;
}

export interface SessionDone {
  done: true;
  progress: Progress;
}

export type NextTrialResponse = MosTrial | AbxTrial | SessionDone;

export interface MosGroupStats {
  mean: number;
  ci_low: number;
  ci_high: number;
  n: number;
  histogram: number[];
}

export interface AbxRow {
  pair: string;
  voice: number;
  wins_first: number;
  n: number;
  share_first: number;
  p_value: number;
}

export interface Results {
  count: number;
  mos_by_system: Record<string, MosGroupStats>;
  mos_by_voice: Record<string, MosGroupStats>;
  mos_by_domain: Record<string, MosGroupStats>;
  abx: AbxRow[];
  devices: Record<string, number>;
}

export function isDone(r: NextTrialResponse): r is SessionDone {
  return (r as SessionDone).done === true;
}

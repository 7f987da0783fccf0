import { describe, expect, it } from "vitest";

import { abxRowsHtml, mosBarsHtml, renderDashboard } from "../src/dashboard.js";
import type { Results } from "../src/types.js";

const results: Results = {
  count: 30,
  mos_by_system: {
    msms_longform: { mean: 4.2, ci_low: 4.0, ci_high: 4.4, n: 10, histogram: [0, 0, 2, 4, 4] },
    single_speaker: { mean: 3.1, ci_low: 2.8, ci_high: 3.4, n: 10, histogram: [1, 2, 3, 3, 1] },
  },
  mos_by_voice: {},
  mos_by_domain: {},
  abx: [
    { pair: "msms_longform|multi_speaker", voice: 1, wins_first: 18, n: 20, share_first: 0.9, p_value: 0.0004 },
    { pair: "msms_longform|msms_tts", voice: 2, wins_first: 11, n: 20, share_first: 0.55, p_value: 0.8238 },
  ],
  devices: { headphones: 20, loudspeakers: 10 },
};

describe("dashboard rendering", () => {
  it("renders one bar per system", () => {
    const html = mosBarsHtml(results);
    expect(html.match(/mos-row/g)).toHaveLength(2);
    expect(html).toContain("msms_longform");
    expect(html).toContain("4.20 [4.00, 4.40]");
  });

  it("emphasizes significant p-values only", () => {
    const html = abxRowsHtml(results);
    expect(html).toContain("<b>p=0.0004</b>");
    expect(html).not.toContain("<b>p=0.8238</b>");
    expect(html).toContain("p=0.8238");
  });

  it("shows a placeholder when empty", () => {
    const empty: Results = { ...results, mos_by_system: {}, abx: [], count: 0 };
    expect(mosBarsHtml(empty)).toContain("placeholder");
    expect(abxRowsHtml(empty)).toContain("placeholder");
  });

  it("renders counts from the server only", () => {
    const host = { innerHTML: "" };
    renderDashboard(host, results);
    expect(host.innerHTML).toContain("30 ratings");
    expect(host.innerHTML).toContain("headphones 20");
  });
});

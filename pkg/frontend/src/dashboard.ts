import type { Results } from "./types.js";

/** Read-only results view. Every number comes from /api/results; the UI
 * renders and never recomputes. */

export function mosBarsHtml(results: Results): string {
  const systems = Object.keys(results.mos_by_system).sort();
  if (!systems.length) return "<p class='placeholder'>No ratings yet.</p>";
  const rows = systems.map((name) => {
    const s = results.mos_by_system[name];
    const width = ((s.mean - 1) / 4) * 100;
    const lo = ((s.ci_low - 1) / 4) * 100;
    const hi = ((s.ci_high - 1) / 4) * 100;
    return `
      <div class="mos-row" data-system="${name}">
        <span class="label">${name}</span>
        <span class="track">
          <span class="bar" style="width:${width.toFixed(1)}%"></span>
          <span class="ci" style="left:${lo.toFixed(1)}%;width:${Math.max(0, hi - lo).toFixed(1)}%"></span>
        </span>
        <span class="value">${s.mean.toFixed(2)} [${s.ci_low.toFixed(2)}, ${s.ci_high.toFixed(2)}] (n=${s.n})</span>
      </div>`;
  });
  return rows.join("\n");
}

export function abxRowsHtml(results: Results): string {
  if (!results.abx.length) return "<p class='placeholder'>No ABX ratings yet.</p>";
  const rows = results.abx.map((row) => {
    const significant = row.p_value <= 0.05;
    const p = row.p_value.toFixed(4);
    return `
      <div class="abx-row">
        <span class="label">${row.pair} / voice ${row.voice}</span>
        <span class="share">${(row.share_first * 100).toFixed(1)}% of ${row.n}</span>
        <span class="p${significant ? " significant" : ""}">${significant ? `<b>p=${p}</b>` : `p=${p}`}</span>
      </div>`;
  });
  return rows.join("\n");
}

export function renderDashboard(el: { innerHTML: string }, results: Results): void {
  el.innerHTML = `
    <section><h2>MOS by system (95% CI)</h2>${mosBarsHtml(results)}</section>
    <section><h2>ABX style similarity</h2>${abxRowsHtml(results)}</section>
    <p class="meta">${results.count} ratings; devices: ${Object.entries(results.devices)
      .map(([k, v]) => `${k} ${v}`)
      .join(", ")}</p>`;
}

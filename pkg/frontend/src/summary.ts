// Session summary formatting: timings, per-class presence rates and the
// cross-annotator consensus. Pure functions first, DOM rendering after.

import type { ConsensusReport, SessionStats } from "./types.js";

export interface SummaryNumbers {
  labels: number;
  totalSeconds: number;
  meanSecondsPerPatch: number | null;
}

export function summarize(stats: SessionStats): SummaryNumbers {
  return {
    labels: stats.labels,
    totalSeconds: stats.total_elapsed_ms / 1000,
    meanSecondsPerPatch:
      stats.mean_ms_per_patch === null ? null : stats.mean_ms_per_patch / 1000,
  };
}

/** "92.25%" for multi-annotator sessions, null when degenerate. */
export function formatConsensus(report: ConsensusReport): string | null {
  if (report.warning || report.annotators.length < 2) return null;
  return `${(report.consensus * 100).toFixed(2)}%`;
}

export function formatSeconds(seconds: number): string {
  return seconds >= 100 ? `${Math.round(seconds)} s` : `${seconds.toFixed(2)} s`;
}

export function presenceRates(
  presences: number[][],
  classes: string[],
): Record<string, number> {
  const rates: Record<string, number> = {};
  classes.forEach((name, k) => {
    const hits = presences.reduce((acc, vec) => acc + (vec[k] ?? 0), 0);
    rates[name] = presences.length === 0 ? 0 : hits / presences.length;
  });
  return rates;
}

export function renderSummary(
  container: HTMLElement,
  stats: SessionStats,
  consensus: ConsensusReport | null,
  rates: Record<string, number> | null,
): void {
  const s = summarize(stats);
  container.replaceChildren();
  container.classList.add("summary");

  const heading = document.createElement("h2");
  heading.textContent = "Session summary";
  container.append(heading);

  const list = document.createElement("dl");
  const row = (label: string, value: string) => {
    const dt = document.createElement("dt");
    dt.textContent = label;
    const dd = document.createElement("dd");
    dd.textContent = value;
    list.append(dt, dd);
  };
  row("Labels", String(s.labels));
  row("Total time", formatSeconds(s.totalSeconds));
  if (s.meanSecondsPerPatch !== null) {
    row("Mean per patch", formatSeconds(s.meanSecondsPerPatch));
  }
  if (rates) {
    for (const [name, rate] of Object.entries(rates)) {
      row(`Present: ${name}`, `${(rate * 100).toFixed(0)}%`);
    }
  }
  if (consensus) {
    const text = formatConsensus(consensus);
    if (text !== null) row("Consensus", text);
  }
  container.append(list);
}

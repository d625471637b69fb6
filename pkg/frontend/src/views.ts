/** HTML/SVG renderers for the console panels.
 *
 * Pure functions from API data to markup strings. The only arithmetic here
 * is layout; accuracy and power numbers are rendered verbatim.
 */

import { biasStrip, downsampleForRender, lineChart } from "./charts.js";
import type { ChartPoint } from "./charts.js";
import {
  escapeHtml,
  formatExponent,
  formatPercent,
  formatTimeTick,
  formatWatts,
} from "./format.js";
import type {
  CalibrationRecord,
  MapePoint,
  Recommendation,
  SeriesPoint,
  StatusResponse,
} from "./types.js";

const MAX_DRAWN_POINTS = 1000;

export type BiasDirection = "over" | "under" | "balanced";

export function renderAccuracyView(
  mapeSeries: MapePoint[],
  thresholdPercent: number,
  biasByWindow?: Map<number, BiasDirection>,
): string {
  const scored = mapeSeries.filter((p) => p.mape_percent !== null);
  if (scored.length === 0) {
    return `<div class="panel" id="accuracy"><h2>Accuracy</h2><p class="placeholder">No scored windows yet.</p></div>`;
  }

  const toPoint = (p: MapePoint): ChartPoint => {
    const value = p.mape_percent as number;
    const classes = [p.calibrated ? "calibrated" : "uncalibrated"];
    if (value > thresholdPercent) classes.push("breach");
    return {
      x: p.window,
      y: value,
      classes,
      label: `window ${p.window}: ${value.toFixed(2)}%`,
    };
  };

  const calibrated = scored.filter((p) => p.calibrated).map(toPoint);
  const uncalibrated = scored.filter((p) => !p.calibrated).map(toPoint);
  const all = scored.map(toPoint);

  const chart = lineChart({
    series: [
      { name: "mape", className: "mape-line", points: all },
      { name: "uncalibrated", className: "uncalibrated", points: uncalibrated, drawMarkers: true },
      { name: "calibrated", className: "calibrated", points: calibrated, drawMarkers: true },
    ],
    rule: {
      y: thresholdPercent,
      className: "threshold",
      label: `${thresholdPercent.toFixed(0)}% threshold`,
    },
    yLabel: "MAPE %",
    xSpanSeconds: 0,
    yMin: 0,
  });

  const strip = biasByWindow
    ? biasStrip(
        scored.map((p) => ({
          window: p.window,
          direction: biasByWindow.get(p.window) ?? "balanced",
        })),
      )
    : "";

  const breaches = all.filter((p) => p.classes?.includes("breach")).length;
  const note =
    breaches > 0
      ? `<p class="breach-note">${breaches} window${breaches === 1 ? "" : "s"} above threshold</p>`
      : "";

  return `<div class="panel" id="accuracy"><h2>Accuracy</h2>${chart}${strip}${note}</div>`;
}

export function renderPowerView(predicted: SeriesPoint[], actual: SeriesPoint[]): string {
  if (predicted.length === 0 && actual.length === 0) {
    return `<div class="panel" id="power"><h2>Power draw</h2><p class="placeholder">No samples yet.</p></div>`;
  }

  const lastActual = actual.length > 0 ? (actual[actual.length - 1] as SeriesPoint).ts : -Infinity;
  const lastPredicted =
    predicted.length > 0 ? (predicted[predicted.length - 1] as SeriesPoint).ts : -Infinity;
  const awaitingTruth = lastPredicted > lastActual;

  const toPoints = (series: SeriesPoint[]): ChartPoint[] =>
    downsampleForRender(series, MAX_DRAWN_POINTS).map((p) => ({ x: p.ts, y: p.value }));

  const chart = lineChart({
    series: [
      { name: "actual", className: "actual", points: toPoints(actual) },
      { name: "predicted", className: "predicted", points: toPoints(predicted) },
    ],
    yLabel: "W",
    yMin: 0,
  });

  const badge = awaitingTruth ? `<span class="badge awaiting">awaiting ground truth</span>` : "";
  const legend = `<span class="legend predicted">predicted</span><span class="legend actual">actual</span>`;
  return `<div class="panel" id="power"><h2>Power draw ${badge}</h2>${chart}<div class="legend-row">${legend}</div></div>`;
}

export function renderEfficiencyView(tflops: SeriesPoint[], efficiency: SeriesPoint[]): string {
  if (tflops.length === 0 && efficiency.length === 0) {
    return `<div class="panel" id="efficiency"><h2>Performance and efficiency</h2><p class="placeholder">No samples yet.</p></div>`;
  }
  const perf = lineChart({
    series: [
      {
        name: "tflops",
        className: "tflops",
        points: downsampleForRender(tflops, MAX_DRAWN_POINTS).map((p) => ({ x: p.ts, y: p.value })),
      },
    ],
    yLabel: "TFLOPs",
    height: 160,
    yMin: 0,
  });
  const eff = lineChart({
    series: [
      {
        name: "efficiency",
        className: "efficiency",
        points: downsampleForRender(efficiency, MAX_DRAWN_POINTS).map((p) => ({
          x: p.ts,
          y: p.value,
        })),
      },
    ],
    yLabel: "TFLOPs/kWh",
    height: 160,
    yMin: 0,
  });
  return `<div class="panel" id="efficiency"><h2>Performance and efficiency</h2>${perf}${eff}</div>`;
}

export function renderCalibrationHistory(records: CalibrationRecord[]): string {
  if (records.length === 0) {
    return `<div class="panel" id="calibration"><h2>Calibration history</h2><p class="placeholder">No calibrations yet.</p></div>`;
  }
  const rows = records
    .map(
      (c) =>
        `<tr><td>${c.produced_in_window}</td><td>${c.applies_from_window}</td><td>${formatExponent(
          c.selected_r,
        )}</td><td>${formatTimeTick(c.history_start, 0)}&ndash;${formatTimeTick(
          c.history_end,
          0,
        )}</td><td>${c.evaluated.length}</td></tr>`,
    )
    .join("");
  return (
    `<div class="panel" id="calibration"><h2>Calibration history</h2>` +
    `<table><thead><tr><th>produced in</th><th>applies from</th><th>selected r</th><th>history</th><th>candidates</th></tr></thead>` +
    `<tbody>${rows}</tbody></table></div>`
  );
}

export interface DecisionDraft {
  decision: "approve" | "reject";
  state: "inflight" | "failed";
}

export function renderRecommendationCard(
  rec: Recommendation,
  draft: DecisionDraft | undefined,
): string {
  const id = escapeHtml(rec.id);
  let footer: string;
  if (draft && draft.state === "inflight") {
    // optimistic but not final: the API has not confirmed yet
    footer = `<span class="confirming">confirming ${draft.decision}&hellip;</span>`;
  } else if (draft) {
    footer =
      `<span class="draft-failed">${draft.decision} not sent</span>` +
      `<button data-action="retry" data-id="${id}">Retry</button>` +
      `<button data-action="cancel-draft" data-id="${id}">Cancel</button>`;
  } else if (rec.status === "pending") {
    footer =
      `<button data-action="approve" data-id="${id}">Approve</button>` +
      `<button data-action="reject" data-id="${id}">Reject</button>`;
  } else {
    const who = rec.decided_by ? ` by ${escapeHtml(rec.decided_by)}` : "";
    footer = `<span class="decided ${rec.status}">${rec.status}${who}</span>`;
  }
  return (
    `<div class="card rec ${rec.status}" data-rec="${id}">` +
    `<div class="card-head"><span class="kind">${escapeHtml(rec.kind)}</span>` +
    `<span class="window-ref">window ${rec.created_in_window}</span></div>` +
    `<p>${escapeHtml(rec.summary)}</p>` +
    `<div class="card-foot">${footer}</div></div>`
  );
}

export function renderRecommendations(
  recs: Recommendation[],
  drafts: Map<string, DecisionDraft>,
): string {
  const body =
    recs.length === 0
      ? `<p class="placeholder">No recommendations.</p>`
      : recs.map((r) => renderRecommendationCard(r, drafts.get(r.id))).join("");
  return `<div class="panel" id="recommendations"><h2>Recommendations</h2>${body}</div>`;
}

export function renderStatusBar(status: StatusResponse): string {
  const compliance = formatPercent(
    status.threshold_compliance === null ? null : status.threshold_compliance * 100,
    1,
  );
  const target = `${(status.accuracy_required_fraction * 100).toFixed(0)}% under ${status.accuracy_threshold_percent.toFixed(0)}%`;
  const r =
    status.current_params === null
      ? "n/a"
      : `${formatExponent(status.current_params.r)} ${status.calibrated ? "(calibrated)" : "(initial)"}`;
  const latest = status.latest_report;
  const latestMape = latest ? formatPercent(latest.mape_percent) : "n/a";
  const bias = status.bias_summary;
  const biasText = bias
    ? `${bias.overestimated} over / ${bias.underestimated} under of ${bias.samples}`
    : "n/a";
  return (
    `<div id="statusbar">` +
    `<span class="stat"><b>${status.windows_scored}</b>/${status.windows_total} windows scored</span>` +
    `<span class="stat">compliance <b>${compliance}</b> (target ${target})</span>` +
    `<span class="stat">exponent <b>${r}</b></span>` +
    `<span class="stat">latest MAPE <b>${latestMape}</b></span>` +
    `<span class="stat">bias ${biasText}</span>` +
    `<span class="stat">${status.pending_recommendations} pending rec${status.pending_recommendations === 1 ? "" : "s"}</span>` +
    `</div>`
  );
}

export function renderErrorToast(message: string | null): string {
  if (!message) return "";
  return `<div class="toast error">${escapeHtml(message)}</div>`;
}

/** Classify a window's samples for the bias strip. Comparison only. */
export function biasDirection(
  pairs: { predicted: number; actual: number }[],
): BiasDirection {
  let over = 0;
  let under = 0;
  for (const { predicted, actual } of pairs) {
    if (predicted > actual) over++;
    else if (predicted < actual) under++;
  }
  if (over > under) return "over";
  if (under > over) return "under";
  return "balanced";
}

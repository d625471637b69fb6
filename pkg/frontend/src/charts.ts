/** Dependency-free SVG chart builders.
 *
 * Every function returns an SVG string; nothing here touches the DOM or
 * recomputes domain metrics. Values are plotted exactly as the API returned
 * them; only the number of drawn points is reduced for wide series.
 */

import { formatTimeTick } from "./format.js";

export interface ChartPoint {
  x: number;
  y: number;
  classes?: string[];
  label?: string;
}

export interface ChartSeries {
  name: string;
  className: string;
  points: ChartPoint[];
  drawMarkers?: boolean;
}

export interface ChartSpec {
  width?: number;
  height?: number;
  series: ChartSeries[];
  /** Horizontal rule, e.g. an accuracy threshold. */
  rule?: { y: number; className: string; label: string };
  yLabel?: string;
  /** Span used to choose hour vs day tick labels; defaults to the x extent. */
  xSpanSeconds?: number;
  yMin?: number;
}

const MARGIN = { top: 14, right: 16, bottom: 24, left: 52 };

/** Keep at most maxPoints points, always retaining the first and last. */
export function downsampleForRender<T>(points: readonly T[], maxPoints: number): T[] {
  if (maxPoints < 2) throw new Error("maxPoints must be at least 2");
  if (points.length <= maxPoints) return [...points];
  const step = (points.length - 1) / (maxPoints - 1);
  const kept: T[] = [];
  for (let i = 0; i < maxPoints; i++) {
    kept.push(points[Math.round(i * step)] as T);
  }
  return kept;
}

function extent(values: number[], fallback: [number, number]): [number, number] {
  if (values.length === 0) return fallback;
  let lo = values[0] as number;
  let hi = values[0] as number;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (lo === hi) {
    lo -= 1;
    hi += 1;
  }
  return [lo, hi];
}

function fmt(n: number): string {
  return Number.isInteger(n) ? String(n) : n.toFixed(2);
}

export function lineChart(spec: ChartSpec): string {
  const width = spec.width ?? 720;
  const height = spec.height ?? 220;
  const plotW = width - MARGIN.left - MARGIN.right;
  const plotH = height - MARGIN.top - MARGIN.bottom;

  const xs = spec.series.flatMap((s) => s.points.map((p) => p.x));
  const ys = spec.series.flatMap((s) => s.points.map((p) => p.y));
  if (spec.rule) ys.push(spec.rule.y);
  const [x0, x1] = extent(xs, [0, 1]);
  let [y0, y1] = extent(ys, [0, 1]);
  if (spec.yMin !== undefined) y0 = Math.min(spec.yMin, y0);
  const pad = (y1 - y0) * 0.08;
  y1 += pad;

  const sx = (x: number) => MARGIN.left + ((x - x0) / (x1 - x0)) * plotW;
  const sy = (y: number) => MARGIN.top + plotH - ((y - y0) / (y1 - y0)) * plotH;

  const parts: string[] = [];
  parts.push(
    `<svg viewBox="0 0 ${width} ${height}" class="chart" role="img" preserveAspectRatio="xMidYMid meet">`,
  );

  // axes
  parts.push(
    `<line class="axis" x1="${MARGIN.left}" y1="${MARGIN.top + plotH}" x2="${MARGIN.left + plotW}" y2="${MARGIN.top + plotH}"/>`,
    `<line class="axis" x1="${MARGIN.left}" y1="${MARGIN.top}" x2="${MARGIN.left}" y2="${MARGIN.top + plotH}"/>`,
  );

  // x ticks
  const span = spec.xSpanSeconds ?? x1 - x0;
  const tickCount = 6;
  for (let i = 0; i <= tickCount; i++) {
    const x = x0 + ((x1 - x0) * i) / tickCount;
    parts.push(
      `<text class="tick" x="${fmt(sx(x))}" y="${height - 6}" text-anchor="middle">${formatTimeTick(x, span)}</text>`,
    );
  }

  // y ticks
  for (let i = 0; i <= 4; i++) {
    const y = y0 + ((y1 - y0) * i) / 4;
    parts.push(
      `<text class="tick" x="${MARGIN.left - 6}" y="${fmt(sy(y) + 3)}" text-anchor="end">${fmt(y)}</text>`,
    );
  }
  if (spec.yLabel) {
    parts.push(`<text class="axis-label" x="${MARGIN.left}" y="${MARGIN.top - 3}">${spec.yLabel}</text>`);
  }

  if (spec.rule) {
    const ry = sy(spec.rule.y);
    parts.push(
      `<line class="${spec.rule.className}" data-rule-y="${fmt(spec.rule.y)}" x1="${MARGIN.left}" y1="${fmt(ry)}" x2="${MARGIN.left + plotW}" y2="${fmt(ry)}"/>`,
      `<text class="${spec.rule.className}-label" x="${MARGIN.left + plotW}" y="${fmt(ry - 4)}" text-anchor="end">${spec.rule.label}</text>`,
    );
  }

  for (const series of spec.series) {
    if (series.points.length === 0) continue;
    const d = series.points
      .map((p, i) => `${i === 0 ? "M" : "L"}${fmt(sx(p.x))} ${fmt(sy(p.y))}`)
      .join(" ");
    parts.push(`<path class="series ${series.className}" data-name="${series.name}" d="${d}"/>`);
    if (series.drawMarkers) {
      for (const p of series.points) {
        const classes = ["marker", series.className, ...(p.classes ?? [])].join(" ");
        const title = p.label ? `<title>${p.label}</title>` : "";
        parts.push(
          `<circle class="${classes}" cx="${fmt(sx(p.x))}" cy="${fmt(sy(p.y))}" r="3.5">${title}</circle>`,
        );
      }
    }
  }

  parts.push("</svg>");
  return parts.join("");
}

/** One cell per window, classed by estimation direction. */
export function biasStrip(
  cells: { window: number; direction: "over" | "under" | "balanced" }[],
  width = 720,
): string {
  if (cells.length === 0) return "";
  const h = 14;
  const cellW = (width - MARGIN.left - MARGIN.right) / cells.length;
  const parts = [`<svg viewBox="0 0 ${width} ${h}" class="bias-strip" role="img">`];
  cells.forEach((cell, i) => {
    parts.push(
      `<rect class="bias-${cell.direction}" data-window="${cell.window}" x="${fmt(
        MARGIN.left + i * cellW,
      )}" y="1" width="${fmt(Math.max(cellW - 1, 0.5))}" height="${h - 2}"><title>window ${cell.window}: ${cell.direction}</title></rect>`,
    );
  });
  parts.push("</svg>");
  return parts.join("");
}

/** Small display formatters shared by the chart and card renderers. */

const DAY = 86400;
const HOUR = 3600;

/** Time tick label: hours within a day, day-based once the span passes one. */
export function formatTimeTick(ts: number, spanSeconds: number): string {
  if (spanSeconds > DAY) {
    const days = Math.floor(ts / DAY);
    const hours = Math.floor((ts % DAY) / HOUR);
    return hours === 0 ? `${days}d` : `${days}d ${hours}h`;
  }
  const h = Math.floor(ts / HOUR);
  const m = Math.floor((ts % HOUR) / 60);
  return `${h}:${String(m).padStart(2, "0")}`;
}

export function formatWatts(w: number): string {
  if (Math.abs(w) >= 1000) return `${(w / 1000).toFixed(2)} kW`;
  return `${w.toFixed(0)} W`;
}

export function formatPercent(p: number | null, digits = 2): string {
  return p === null ? "n/a" : `${p.toFixed(digits)}%`;
}

export function formatExponent(r: number): string {
  return r.toFixed(2);
}

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

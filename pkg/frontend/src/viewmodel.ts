/** Console view model: snapshot mirror, series cache, decision drafts.
 *
 * All twin numbers come from the API; the model only caches and classifies.
 * Decisions follow the confirm-before-final rule: a card shows a draft state
 * until the API acknowledges, and 409/404 roll the card back to server truth.
 */

import { ApiClient, ApiError } from "./client.js";
import type { BiasDirection, DecisionDraft } from "./views.js";
import type {
  CalibrationRecord,
  Decision,
  MapePoint,
  Recommendation,
  SeriesPoint,
  StatusResponse,
  WindowReport,
} from "./types.js";

const MIN_POLL_MS = 2000;

export class ConsoleViewModel {
  snapshot: StatusResponse | null = null;
  series = new Map<string, SeriesPoint[]>();
  recommendations: Recommendation[] = [];
  drafts = new Map<string, DecisionDraft>();
  lastError: string | null = null;
  private reportCache = new Map<number, WindowReport>();

  /** One tenth of the window cadence, never faster than 2 s. */
  pollIntervalMs(): number {
    const latest = this.snapshot?.latest_report;
    if (!latest) return MIN_POLL_MS;
    const windowSeconds = latest.end - latest.start;
    return Math.max(MIN_POLL_MS, (windowSeconds / 10) * 1000);
  }

  mapeSeries(): MapePoint[] {
    return this.snapshot?.mape_series ?? [];
  }

  thresholdPercent(): number {
    return this.snapshot?.accuracy_threshold_percent ?? 10.0;
  }

  seriesPoints(metric: string): SeriesPoint[] {
    return this.series.get(metric) ?? [];
  }

  calibrationRecords(): CalibrationRecord[] {
    const records: CalibrationRecord[] = [];
    for (const index of [...this.reportCache.keys()].sort((a, b) => a - b)) {
      const calibration = this.reportCache.get(index)?.calibration;
      if (calibration) records.push(calibration);
    }
    return records;
  }

  /** Per-window over/under classification from the report sample pairs. */
  biasByWindow(): Map<number, BiasDirection> {
    const out = new Map<number, BiasDirection>();
    for (const [index, report] of this.reportCache) {
      const actualByTs = new Map(report.ground_truth.map((s) => [s.ts, s.power_w]));
      let over = 0;
      let under = 0;
      for (const p of report.predictions) {
        const actual = actualByTs.get(p.ts);
        if (actual === undefined) continue;
        if (p.power_w > actual) over++;
        else if (p.power_w < actual) under++;
      }
      out.set(index, over > under ? "over" : under > over ? "under" : "balanced");
    }
    return out;
  }

  async refresh(client: ApiClient): Promise<void> {
    try {
      const [status, predicted, actual, tflops, efficiency, recs] = await Promise.all([
        client.status(),
        client.series("power_predicted"),
        client.series("power_actual"),
        client.series("tflops"),
        client.series("efficiency"),
        client.recommendations(),
      ]);
      this.snapshot = status;
      this.series.set("power_predicted", predicted.points);
      this.series.set("power_actual", actual.points);
      this.series.set("tflops", tflops.points);
      this.series.set("efficiency", efficiency.points);
      this.recommendations = recs.recommendations;
      await this.fillReportCache(client, status.windows_total);
      this.lastError = null;
    } catch (err) {
      // keep the stale snapshot; a blank console helps nobody
      this.lastError = describeError(err);
    }
  }

  /** Completed windows never change, so fetch each report once. */
  private async fillReportCache(client: ApiClient, windowsTotal: number): Promise<void> {
    const missing: number[] = [];
    for (let i = 0; i < windowsTotal; i++) {
      if (!this.reportCache.has(i)) missing.push(i);
    }
    const fetched = await Promise.all(missing.map((i) => client.report(i)));
    missing.forEach((index, at) => {
      const report = fetched[at];
      if (report) this.reportCache.set(index, report);
    });
  }

  async decide(
    client: ApiClient,
    id: string,
    decision: Decision,
    operator: string,
  ): Promise<void> {
    this.drafts.set(id, { decision, state: "inflight" });
    try {
      const confirmed = await client.decide(id, decision, operator);
      this.recommendations = this.recommendations.map((r) => (r.id === id ? confirmed : r));
      this.drafts.delete(id);
      this.lastError = null;
    } catch (err) {
      if (err instanceof ApiError && (err.status === 409 || err.status === 404)) {
        // someone else decided, or the item vanished: roll back to server state
        this.drafts.delete(id);
        this.lastError = err.detail;
        try {
          const recs = await client.recommendations();
          this.recommendations = recs.recommendations;
        } catch {
          /* next poll will converge */
        }
      } else if (err instanceof ApiError) {
        this.drafts.delete(id);
        this.lastError = err.detail;
      } else {
        // network failure: keep the draft so the operator can retry
        const draft = this.drafts.get(id);
        if (draft) draft.state = "failed";
        this.lastError = describeError(err);
      }
    }
  }

  async retryDraft(client: ApiClient, id: string, operator: string): Promise<void> {
    const draft = this.drafts.get(id);
    if (!draft) return;
    await this.decide(client, id, draft.decision, operator);
  }

  cancelDraft(id: string): void {
    this.drafts.delete(id);
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return err.detail;
  if (err instanceof Error) return `cannot reach api: ${err.message}`;
  return String(err);
}

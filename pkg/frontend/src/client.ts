/** Thin typed wrapper over the twin API. Issues only documented calls. */

import type {
  Decision,
  Recommendation,
  RecommendationList,
  ReportList,
  SeriesResponse,
  StatusResponse,
  WindowReport,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`api error ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorDetail(res: Response): Promise<string> {
  // error bodies are {"detail": ...} but never trust that blindly
  try {
    const body: unknown = await res.json();
    if (body && typeof body === "object" && "detail" in body) {
      const detail = (body as { detail: unknown }).detail;
      if (typeof detail === "string") return detail;
      return JSON.stringify(detail);
    }
  } catch {
    /* non-JSON body */
  }
  return res.statusText || `http ${res.status}`;
}

export class ApiClient {
  private readonly base: string;

  constructor(
    baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {
    this.base = baseUrl.replace(/\/+$/, "");
  }

  private async get<T>(path: string): Promise<T> {
    const res = await this.fetchFn(`${this.base}${path}`);
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as T;
  }

  status(): Promise<StatusResponse> {
    return this.get<StatusResponse>("/api/v1/status");
  }

  reports(start?: number, stop?: number): Promise<ReportList> {
    const params = new URLSearchParams();
    if (start !== undefined) params.set("start", String(start));
    if (stop !== undefined) params.set("stop", String(stop));
    const qs = params.toString();
    return this.get<ReportList>(`/api/v1/reports${qs ? `?${qs}` : ""}`);
  }

  report(index: number): Promise<WindowReport> {
    return this.get<WindowReport>(`/api/v1/reports/${index}`);
  }

  series(metric: string, fromTs?: number, toTs?: number): Promise<SeriesResponse> {
    const params = new URLSearchParams();
    if (fromTs !== undefined) params.set("from_ts", String(fromTs));
    if (toTs !== undefined) params.set("to_ts", String(toTs));
    const qs = params.toString();
    return this.get<SeriesResponse>(`/api/v1/series/${metric}${qs ? `?${qs}` : ""}`);
  }

  recommendations(status?: string): Promise<RecommendationList> {
    const qs = status ? `?status=${encodeURIComponent(status)}` : "";
    return this.get<RecommendationList>(`/api/v1/recommendations${qs}`);
  }

  async decide(id: string, decision: Decision, operator: string): Promise<Recommendation> {
    const res = await this.fetchFn(
      `${this.base}/api/v1/recommendations/${encodeURIComponent(id)}/decision`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ decision, operator }),
      },
    );
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as Recommendation;
  }
}

/** Resolve the API base URL: explicit global, ?api= query, else same origin. */
export function resolveBaseUrl(
  globals: { DCTWIN_API_BASE?: string },
  search: string,
  origin: string,
): string {
  if (globals.DCTWIN_API_BASE) return globals.DCTWIN_API_BASE;
  const fromQuery = new URLSearchParams(search).get("api");
  if (fromQuery) return fromQuery;
  return origin;
}

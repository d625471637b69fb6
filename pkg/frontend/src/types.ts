/** Wire types for the twin API. Field names match the JSON exactly. */

export interface PowerParams {
  p_idle_w: number;
  p_max_w: number;
  r: number;
}

export interface ReportSummary {
  window_index: number;
  start: number;
  end: number;
  mape_percent: number | null;
  calibrated: boolean;
  r_used: number;
  correlation_id: string;
  prediction_samples: number;
  ground_truth_samples: number;
}

export interface MapePoint {
  window: number;
  mape_percent: number | null;
  calibrated: boolean;
}

export interface BiasSummary {
  overestimated: number;
  underestimated: number;
  samples: number;
}

export interface StatusResponse {
  workspace: string;
  current_window: number;
  windows_total: number;
  windows_scored: number;
  latest_report: ReportSummary | null;
  current_params: PowerParams | null;
  calibrated: boolean | null;
  threshold_compliance: number | null;
  accuracy_threshold_percent: number;
  accuracy_required_fraction: number;
  mape_series: MapePoint[];
  bias_summary: BiasSummary | null;
  acceleration: string | null;
  pending_recommendations: number;
  calibrations_applied: number;
}

export interface SeriesPoint {
  ts: number;
  value: number;
}

export interface SeriesResponse {
  metric: string;
  points: SeriesPoint[];
}

export interface Sample {
  ts: number;
  power_w: number;
  cpu_util: number;
  source: string;
}

export interface WindowRef {
  index: number;
  start: number;
  end: number;
}

export interface CalibrationRecord {
  produced_in_window: number;
  applies_from_window: number;
  selected_r: number;
  history_start: number;
  history_end: number;
  evaluated: [number, number][];
}

export interface WindowReport {
  window: WindowRef;
  predictions: Sample[];
  ground_truth: Sample[];
  mape_percent: number | null;
  params_used: PowerParams;
  calibrated: boolean;
  calibration: CalibrationRecord | null;
  performance_tflops: [number, number][];
  efficiency_tflops_per_kwh: [number, number][];
  correlation_id: string;
}

export interface ReportList {
  reports: ReportSummary[];
}

export type RecommendationStatus = "pending" | "approved" | "rejected";

export interface Recommendation {
  id: string;
  created_in_window: number;
  kind: string;
  summary: string;
  evidence: Record<string, number>;
  status: RecommendationStatus;
  decided_by: string | null;
  decided_at: number | null;
}

export interface RecommendationList {
  recommendations: Recommendation[];
}

export type Decision = "approve" | "reject";

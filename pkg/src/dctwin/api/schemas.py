"""Wire models for the HTTP surface.

These mirror the persisted report vocabulary but stay independent of the
core dataclasses so the wire format can only change deliberately.
"""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class PowerParamsModel(BaseModel):
    p_idle_w: float
    p_max_w: float
    r: float


class ReportSummary(BaseModel):
    window_index: int
    start: int
    end: int
    mape_percent: float | None = None
    calibrated: bool
    r_used: float
    correlation_id: str
    prediction_samples: int
    ground_truth_samples: int


class MapePoint(BaseModel):
    window: int
    mape_percent: float | None = None
    calibrated: bool


class BiasSummary(BaseModel):
    """Directional split of prediction error across all scored samples."""

    overestimated: float = Field(description="fraction of samples with predicted > actual")
    underestimated: float = Field(description="fraction of samples with predicted < actual")
    samples: int


class StatusResponse(BaseModel):
    workspace: str
    # Next window the loop will commit; equals the number already persisted.
    current_window: int
    windows_total: int = Field(description="reports persisted so far")
    windows_scored: int = Field(description="reports with a defined MAPE")
    latest_report: ReportSummary | None = None
    current_params: PowerParamsModel | None = None
    calibrated: bool | None = None
    # Fraction of scored trailing windows whose MAPE beat the configured
    # threshold; the headline accuracy figure.
    threshold_compliance: float | None = None
    accuracy_threshold_percent: float
    accuracy_required_fraction: float
    mape_series: list[MapePoint]
    bias_summary: BiasSummary | None = None
    acceleration: str | None = None
    pending_recommendations: int
    calibrations_applied: int


class SeriesPoint(BaseModel):
    ts: int
    value: float


class SeriesResponse(BaseModel):
    metric: str
    points: list[SeriesPoint]


class ReportListResponse(BaseModel):
    reports: list[ReportSummary]


class CalibrationModel(BaseModel):
    produced_in_window: int
    applies_from_window: int
    selected_r: float
    evaluated: list[tuple[float, float]]
    history_start: int
    history_end: int


class RecommendationModel(BaseModel):
    id: str
    created_in_window: int
    kind: str
    summary: str
    evidence: dict[str, float]
    status: str
    decided_by: str | None = None
    decided_at: float | None = None


class RecommendationListResponse(BaseModel):
    recommendations: list[RecommendationModel]


class DecisionRequest(BaseModel):
    # Kept as plain text so a bad value turns into a 400, not a 422.
    decision: str
    operator: str


class ControlRequest(BaseModel):
    acceleration: str | None = None
    paused: bool | None = None


class ControlResponse(BaseModel):
    acceleration: str | None = None
    paused: bool = False


class ErrorResponse(BaseModel):
    detail: str


def recommendation_wire(rec: Any) -> RecommendationModel:
    return RecommendationModel(
        id=rec.id,
        created_in_window=rec.created_in_window,
        kind=rec.kind.value,
        summary=rec.summary,
        evidence=dict(rec.evidence),
        status=rec.status.value,
        decided_by=rec.decided_by,
        decided_at=rec.decided_at,
    )


def report_summary(data: dict[str, Any]) -> ReportSummary:
    return ReportSummary(
        window_index=data["window"]["index"],
        start=data["window"]["start"],
        end=data["window"]["end"],
        mape_percent=data.get("mape_percent"),
        calibrated=data["calibrated"],
        r_used=data["params_used"]["r"],
        correlation_id=data["correlation_id"],
        prediction_samples=len(data["predictions"]),
        ground_truth_samples=len(data["ground_truth"]),
    )

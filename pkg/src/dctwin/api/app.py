"""HTTP surface over a twin workspace.

The service is a read layer plus two narrow write paths (recommendation
decisions and the operator control mailbox). It never touches simulation
state directly: everything goes through the files the run loop maintains,
so the API can serve a live run, a finished one, or a workspace copied from
another machine.
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path
from typing import Any, Iterator

from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.middleware.cors import CORSMiddleware

from ..model import Acceleration, RecommendationStatus
from ..workspace import (
    RecommendationAlreadyDecided,
    UnknownRecommendation,
    Workspace,
)
from .schemas import (
    BiasSummary,
    ControlRequest,
    ControlResponse,
    DecisionRequest,
    MapePoint,
    PowerParamsModel,
    RecommendationListResponse,
    RecommendationModel,
    ReportListResponse,
    SeriesPoint,
    SeriesResponse,
    StatusResponse,
    recommendation_wire,
    report_summary,
)

SERIES_METRICS = (
    "power_predicted",
    "power_actual",
    "mape",
    "tflops",
    "efficiency",
    "utilization",
)

DEFAULT_ADDR = "127.0.0.1:8800"
ADDR_ENV_VAR = "DCTWIN_API_ADDR"


def _accuracy_settings(config: dict[str, Any] | None) -> tuple[float, float]:
    accuracy = (config or {}).get("accuracy", {})
    return (
        float(accuracy.get("threshold_percent", 10.0)),
        float(accuracy.get("required_fraction", 0.90)),
    )


def _trailing_windows(config: dict[str, Any] | None) -> int:
    rec = (config or {}).get("recommendations", {})
    return int(rec.get("trailing_windows", 24))


def create_app(
    workspace: str | Path | Workspace,
    *,
    control_enabled: bool | None = None,
    cors_origins: tuple[str, ...] | None = None,
) -> FastAPI:
    ws = workspace if isinstance(workspace, Workspace) else Workspace(workspace)
    stored = ws.read_config() if ws.is_readable() else None
    if control_enabled is None:
        control_enabled = bool((stored or {}).get("control_enabled", False))
    if cors_origins is None:
        cors_origins = tuple((stored or {}).get("cors_origins", ["*"]))

    app = FastAPI(title="dctwin", version="0.1.0", docs_url="/api/docs")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["GET", "POST", "OPTIONS"],
        allow_headers=["*"],
    )

    def require_workspace() -> None:
        if not ws.is_readable():
            raise HTTPException(
                status_code=503, detail=f"workspace {ws.root} is not readable"
            )

    def iter_report_dicts(start: int | None = None, stop: int | None = None) -> Iterator[dict]:
        for index in ws.report_indices():
            if start is not None and index < start:
                continue
            if stop is not None and index > stop:
                continue
            data = ws.read_report_dict(index)
            if data is not None:
                yield data

    @app.get("/api/v1/status", response_model=StatusResponse)
    def status() -> StatusResponse:
        require_workspace()
        config = ws.read_config()
        threshold, required = _accuracy_settings(config)
        trailing = _trailing_windows(config)

        indices = ws.report_indices()
        latest: dict | None = ws.read_report_dict(indices[-1]) if indices else None

        mape_series: list[MapePoint] = []
        over = under = matched = 0
        for data in iter_report_dicts():
            mape_series.append(
                MapePoint(
                    window=data["window"]["index"],
                    mape_percent=data.get("mape_percent"),
                    calibrated=data["calibrated"],
                )
            )
            actual = {s["ts"]: s["power_w"] for s in data["ground_truth"]}
            for s in data["predictions"]:
                real = actual.get(s["ts"])
                if real is None:
                    continue
                matched += 1
                if s["power_w"] > real:
                    over += 1
                elif s["power_w"] < real:
                    under += 1

        scored = [
            p.mape_percent
            for p in mape_series[-trailing:]
            if p.mape_percent is not None
        ]
        compliance = None
        if scored:
            compliance = sum(1 for m in scored if m < threshold) / len(scored)

        acceleration: str | None = None
        try:
            if ws.runmeta_path.exists():
                last_line = None
                with open(ws.runmeta_path) as fh:
                    for line in fh:
                        if line.strip():
                            last_line = line
                if last_line:
                    acceleration = json.loads(last_line).get("acceleration_mode")
        except (OSError, json.JSONDecodeError):
            acceleration = None

        pending = sum(
            1 for r in ws.recommendations() if r.status is RecommendationStatus.PENDING
        )
        return StatusResponse(
            workspace=str(ws.root),
            current_window=len(indices),
            windows_total=len(indices),
            windows_scored=sum(1 for p in mape_series if p.mape_percent is not None),
            latest_report=None if latest is None else report_summary(latest),
            current_params=None
            if latest is None
            else PowerParamsModel(**latest["params_used"]),
            calibrated=None if latest is None else latest.get("calibrated"),
            threshold_compliance=compliance,
            accuracy_threshold_percent=threshold,
            accuracy_required_fraction=required,
            mape_series=mape_series,
            bias_summary=None
            if matched == 0
            else BiasSummary(
                overestimated=over / matched,
                underestimated=under / matched,
                samples=matched,
            ),
            acceleration=acceleration,
            pending_recommendations=pending,
            calibrations_applied=len(ws.read_calibrations()),
        )

    @app.get("/api/v1/reports/{index}")
    def report(index: int) -> Response:
        require_workspace()
        raw = ws.read_report_bytes(index)
        if raw is None:
            raise HTTPException(status_code=404, detail=f"no report for window {index}")
        # Raw persisted bytes, so a client sees exactly what determinism
        # checks compare.
        return Response(content=raw, media_type="application/json")

    @app.get("/api/v1/reports", response_model=ReportListResponse)
    def reports(
        from_index: int | None = Query(default=None, alias="from", ge=0),
        to_index: int | None = Query(default=None, alias="to", ge=0),
    ) -> ReportListResponse:
        require_workspace()
        return ReportListResponse(
            reports=[report_summary(d) for d in iter_report_dicts(from_index, to_index)]
        )

    @app.get("/api/v1/series/{metric}", response_model=SeriesResponse)
    def series(
        metric: str,
        from_ts: int | None = Query(default=None),
        to_ts: int | None = Query(default=None),
    ) -> SeriesResponse:
        require_workspace()
        if metric not in SERIES_METRICS:
            raise HTTPException(
                status_code=400,
                detail=f"unknown metric {metric!r}; one of {', '.join(SERIES_METRICS)}",
            )
        points: list[SeriesPoint] = []

        def keep(ts: int) -> bool:
            if from_ts is not None and ts < from_ts:
                return False
            if to_ts is not None and ts >= to_ts:
                return False
            return True

        for data in iter_report_dicts():
            if metric == "power_predicted":
                rows = ((s["ts"], s["power_w"]) for s in data["predictions"])
            elif metric == "power_actual":
                rows = ((s["ts"], s["power_w"]) for s in data["ground_truth"])
            elif metric == "utilization":
                rows = ((s["ts"], s["cpu_util"]) for s in data["predictions"])
            elif metric == "tflops":
                rows = ((ts, v) for ts, v in data["performance_tflops"])
            elif metric == "efficiency":
                rows = ((ts, v) for ts, v in data["efficiency_tflops_per_kwh"])
            else:  # mape: one point per scored window, at the window start
                m = data.get("mape_percent")
                rows = [] if m is None else [(data["window"]["start"], m)]
            points.extend(SeriesPoint(ts=ts, value=v) for ts, v in rows if keep(ts))
        return SeriesResponse(metric=metric, points=points)

    @app.get("/api/v1/recommendations", response_model=RecommendationListResponse)
    def recommendations(status: str | None = Query(default=None)) -> RecommendationListResponse:
        require_workspace()
        if status is not None and status not in {s.value for s in RecommendationStatus}:
            raise HTTPException(status_code=400, detail=f"unknown status {status!r}")
        items = ws.recommendations()
        if status is not None:
            items = [r for r in items if r.status.value == status]
        return RecommendationListResponse(
            recommendations=[recommendation_wire(r) for r in items]
        )

    DECISION_STATUS = {
        "approve": RecommendationStatus.APPROVED,
        "reject": RecommendationStatus.REJECTED,
    }

    @app.post("/api/v1/recommendations/{rec_id}/decision", response_model=RecommendationModel)
    def decide(rec_id: str, body: DecisionRequest) -> RecommendationModel:
        require_workspace()
        resolved = DECISION_STATUS.get(body.decision)
        if resolved is None:
            raise HTTPException(
                status_code=400,
                detail=f"decision must be approve or reject, got {body.decision!r}",
            )
        if not body.operator.strip():
            raise HTTPException(status_code=400, detail="operator must be non-empty")
        try:
            updated = ws.decide_recommendation(
                rec_id,
                resolved,
                operator=body.operator,
                decided_at=time.time(),
            )
        except UnknownRecommendation as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except RecommendationAlreadyDecided as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return recommendation_wire(updated)

    @app.post("/api/v1/control", response_model=ControlResponse)
    def control(body: ControlRequest) -> ControlResponse:
        if not control_enabled:
            raise HTTPException(status_code=403, detail="runtime control is disabled")
        require_workspace()
        current = ws.read_control()
        if body.acceleration is not None:
            try:
                Acceleration.parse(body.acceleration)
            except Exception as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
            current["acceleration"] = body.acceleration
        if body.paused is not None:
            current["paused"] = body.paused
        ws.write_control(current)
        return ControlResponse(
            acceleration=current.get("acceleration"), paused=bool(current.get("paused"))
        )

    return app


def resolve_addr(addr: str | None = None) -> tuple[str, int]:
    """Bind address from the explicit value or DCTWIN_API_ADDR, as (host, port)."""
    text = addr or os.environ.get(ADDR_ENV_VAR) or DEFAULT_ADDR
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad api address {text!r}, expected host:port")
    return host, int(port)


def serve(workspace: str | Path, addr: str | None = None, **create_kwargs: Any) -> None:
    """Run the API in the foreground (blocking)."""
    import uvicorn

    host, port = resolve_addr(addr)
    uvicorn.run(create_app(workspace, **create_kwargs), host=host, port=port, log_level="warning")

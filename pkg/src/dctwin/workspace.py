"""On-disk twin workspace.

Layout under the workspace root:

    config.json              effective run configuration
    reports/window-<k>.json  one deterministic report per completed window
    calibrations.jsonl       every consumed calibration result
    recommendations.jsonl    event log: created / decided
    telemetry.jsonl          ingested ground truth
    runmeta.jsonl            wall-clock run metadata (volatile, per window)
    control.json             operator control mailbox (optional)

Reports are written atomically (temp file + rename) so a concurrently
reading API process never observes a torn window. Recommendations are an
append-only event log folded into current state on read; decisions take an
exclusive file lock so two operators cannot decide the same item twice.
"""

from __future__ import annotations

import fcntl
import json
import os
import re
from dataclasses import replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from .model import (
    CalibrationResult,
    DCTwinError,
    Recommendation,
    RecommendationStatus,
    RunMetadata,
    WindowReport,
    calibration_from_dict,
    calibration_to_dict,
    canonical_json,
    metadata_to_dict,
    recommendation_from_dict,
    recommendation_to_dict,
    report_to_dict,
)


class WorkspaceUnwritable(DCTwinError):
    """The workspace directory cannot be created or written."""


class UnknownRecommendation(DCTwinError):
    pass


class RecommendationAlreadyDecided(DCTwinError):
    pass


_REPORT_NAME = re.compile(r"^window-(\d+)\.json$")


def _atomic_write(path: Path, content: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(content)
    os.replace(tmp, path)


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    @property
    def config_path(self) -> Path:
        return self.root / "config.json"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    @property
    def calibrations_path(self) -> Path:
        return self.root / "calibrations.jsonl"

    @property
    def recommendations_path(self) -> Path:
        return self.root / "recommendations.jsonl"

    @property
    def telemetry_path(self) -> Path:
        return self.root / "telemetry.jsonl"

    @property
    def runmeta_path(self) -> Path:
        return self.root / "runmeta.jsonl"

    @property
    def control_path(self) -> Path:
        return self.root / "control.json"

    def initialize(self, config: Mapping[str, Any]) -> None:
        try:
            self.reports_dir.mkdir(parents=True, exist_ok=True)
            _atomic_write(self.config_path, json.dumps(config, indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise WorkspaceUnwritable(str(exc)) from exc

    def is_readable(self) -> bool:
        return self.root.is_dir() and self.reports_dir.is_dir()

    def read_config(self) -> dict[str, Any] | None:
        if not self.config_path.exists():
            return None
        return json.loads(self.config_path.read_text())

    # -- reports -----------------------------------------------------------

    def report_path(self, index: int) -> Path:
        return self.reports_dir / f"window-{index}.json"

    def write_report(self, report: WindowReport) -> None:
        try:
            _atomic_write(
                self.report_path(report.window.index),
                canonical_json(report_to_dict(report)) + "\n",
            )
        except OSError as exc:
            raise WorkspaceUnwritable(str(exc)) from exc

    def report_indices(self) -> list[int]:
        if not self.reports_dir.is_dir():
            return []
        indices = []
        for entry in self.reports_dir.iterdir():
            m = _REPORT_NAME.match(entry.name)
            if m:
                indices.append(int(m.group(1)))
        return sorted(indices)

    def read_report_bytes(self, index: int) -> bytes | None:
        path = self.report_path(index)
        if not path.exists():
            return None
        return path.read_bytes()

    def read_report_dict(self, index: int) -> dict[str, Any] | None:
        raw = self.read_report_bytes(index)
        if raw is None:
            return None
        return json.loads(raw)

    # -- append-only logs ----------------------------------------------------

    def _append_line(self, path: Path, payload: Mapping[str, Any]) -> None:
        try:
            with open(path, "a") as fh:
                fh.write(canonical_json(payload) + "\n")
        except OSError as exc:
            raise WorkspaceUnwritable(str(exc)) from exc

    def append_calibration(self, result: CalibrationResult) -> None:
        self._append_line(self.calibrations_path, calibration_to_dict(result))

    def read_calibrations(self) -> list[CalibrationResult]:
        if not self.calibrations_path.exists():
            return []
        out = []
        with open(self.calibrations_path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(calibration_from_dict(json.loads(line)))
        return out

    def append_runmeta(self, meta: RunMetadata) -> None:
        self._append_line(self.runmeta_path, metadata_to_dict(meta))

    # -- recommendations ----------------------------------------------------

    def _fold_recommendations(self) -> dict[str, Recommendation]:
        folded: dict[str, Recommendation] = {}
        if not self.recommendations_path.exists():
            return folded
        with open(self.recommendations_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                if event.get("event") == "created":
                    rec = recommendation_from_dict(event["recommendation"])
                    # replayed runs re-emit created events; the first one is
                    # canonical so a later replay cannot reopen a decided item
                    if rec.id not in folded:
                        folded[rec.id] = rec
                elif event.get("event") == "decided":
                    rec = folded.get(event["id"])
                    if rec is not None:
                        folded[rec.id] = replace(
                            rec,
                            status=RecommendationStatus(event["status"]),
                            decided_by=event["decided_by"],
                            decided_at=float(event["decided_at"]),
                        )
        return folded

    def recommendations(self) -> list[Recommendation]:
        """Current state of every recommendation, in creation order."""
        return list(self._fold_recommendations().values())

    def pending_kinds(self) -> set[str]:
        return {
            rec.kind.value
            for rec in self._fold_recommendations().values()
            if rec.status is RecommendationStatus.PENDING
        }

    def append_recommendation(self, rec: Recommendation) -> None:
        with self._locked():
            self._append_line(
                self.recommendations_path,
                {"event": "created", "recommendation": recommendation_to_dict(rec)},
            )

    def decide_recommendation(
        self, rec_id: str, status: RecommendationStatus, operator: str, decided_at: float
    ) -> Recommendation:
        """Apply exactly one operator decision. Double decisions are refused."""
        if status not in (RecommendationStatus.APPROVED, RecommendationStatus.REJECTED):
            raise DCTwinError(f"decision must approve or reject, got {status}")
        with self._locked():
            folded = self._fold_recommendations()
            rec = folded.get(rec_id)
            if rec is None:
                raise UnknownRecommendation(rec_id)
            if rec.status is not RecommendationStatus.PENDING:
                raise RecommendationAlreadyDecided(
                    f"{rec_id} already {rec.status.value} by {rec.decided_by}"
                )
            self._append_line(
                self.recommendations_path,
                {
                    "event": "decided",
                    "id": rec_id,
                    "status": status.value,
                    "decided_by": operator,
                    "decided_at": decided_at,
                },
            )
            return replace(rec, status=status, decided_by=operator, decided_at=decided_at)

    def _locked(self):
        return _FileLock(self.root / ".lock")

    # -- control mailbox ------------------------------------------------------

    def write_control(self, control: Mapping[str, Any]) -> None:
        try:
            _atomic_write(self.control_path, canonical_json(control) + "\n")
        except OSError as exc:
            raise WorkspaceUnwritable(str(exc)) from exc

    def read_control(self) -> dict[str, Any]:
        if not self.control_path.exists():
            return {}
        try:
            return json.loads(self.control_path.read_text())
        except (OSError, json.JSONDecodeError):
            return {}


class _FileLock:
    """Exclusive advisory lock; serializes recommendation mutations across
    the loop process and any API processes sharing the workspace."""

    def __init__(self, path: Path):
        self._path = path
        self._fh = None

    def __enter__(self):
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self._path, "a+")
        fcntl.flock(self._fh.fileno(), fcntl.LOCK_EX)
        return self

    def __exit__(self, *exc):
        assert self._fh is not None
        fcntl.flock(self._fh.fileno(), fcntl.LOCK_UN)
        self._fh.close()
        self._fh = None
        return False

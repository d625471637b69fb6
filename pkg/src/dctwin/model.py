"""Shared domain model for the datacenter twin.

Immutable value types plus the file formats every other part of the system
speaks: topology JSON, workload CSV, and newline-delimited telemetry records.
Validation is explicit (``validate_*`` functions and parser checks) so that
callers get a precise first-violation report instead of a generic exception
from deep inside the pipeline.

Time is discrete integer seconds since the trace epoch. Power is watts,
demand and frequency are MHz, memory is MiB.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

# Domain of the power-curve exponent. The calibration grid must stay inside
# these bounds; values outside make the curve degenerate (r <= 0) or absurdly
# convex, and nothing in a real fleet calibrates there.
R_MIN = 0.5
R_MAX = 4.0

DEFAULT_SAMPLING_GRANULARITY_S = 300
DEFAULT_WINDOW_DURATION_S = 3600
DEFAULT_FLOPS_PER_CYCLE = 16.0
DEFAULT_INITIAL_R = 2.0


class DCTwinError(Exception):
    """Base class for every error this package raises on purpose."""


class InvalidTopology(DCTwinError):
    """A topology violated a structural invariant.

    ``invariant`` names the first violated rule (for example ``core_count``
    or ``duplicate_id``); ``host_id`` identifies the offending host when the
    rule is per-host.
    """

    def __init__(self, invariant: str, host_id: str | None = None, detail: str = ""):
        self.invariant = invariant
        self.host_id = host_id
        msg = invariant if host_id is None else f"{invariant} (host {host_id!r})"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)


class InvalidWorkload(DCTwinError):
    """A workload trace violated a structural invariant."""

    def __init__(self, invariant: str, task_id: str | None = None, detail: str = ""):
        self.invariant = invariant
        self.task_id = task_id
        msg = invariant if task_id is None else f"{invariant} (task {task_id!r})"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)


class DomainError(DCTwinError):
    """An argument fell outside the mathematical domain of a function."""


class ConfigError(DCTwinError):
    """A run configuration is unusable (missing file, bad value, bad units)."""


class SampleSource(str, Enum):
    """Where a telemetry sample came from."""

    GROUND_TRUTH = "ground_truth"
    PREDICTION = "prediction"


class RecommendationKind(str, Enum):
    UNDERUTILIZATION = "underutilization"
    ACCURACY_DEGRADED = "accuracy_degraded"


class RecommendationStatus(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"


@dataclass(frozen=True, slots=True)
class PowerModelParams:
    """Parameters of the host power curve.

    ``r`` is the calibration exponent the feedback loop tunes. ``p_idle`` and
    ``p_max`` are the measured wall-power endpoints of the host in watts.
    """

    p_idle: float
    p_max: float
    r: float


def validate_power_params(params: PowerModelParams) -> None:
    if not params.p_idle >= 0.0:
        raise DomainError(f"p_idle must be >= 0, got {params.p_idle}")
    if not params.p_max >= params.p_idle:
        raise DomainError(f"p_max must be >= p_idle, got {params.p_max} < {params.p_idle}")
    if not (R_MIN <= params.r <= R_MAX):
        raise DomainError(f"r must lie in [{R_MIN}, {R_MAX}], got {params.r}")


@dataclass(frozen=True, slots=True)
class HostSpec:
    """One physical host: compute capacity plus its power curve."""

    id: str
    core_count: int
    core_frequency: float  # MHz per core
    memory: int  # MiB
    power: PowerModelParams

    @property
    def capacity_mhz(self) -> float:
        """Total CPU capacity of the host in MHz."""
        return self.core_count * self.core_frequency


@dataclass(frozen=True, slots=True)
class Topology:
    """A named cluster of hosts. Host order is the placement order."""

    name: str
    hosts: tuple[HostSpec, ...]

    def host_by_id(self, host_id: str) -> HostSpec:
        for h in self.hosts:
            if h.id == host_id:
                return h
        raise KeyError(host_id)

    @property
    def total_capacity_mhz(self) -> float:
        return sum(h.capacity_mhz for h in self.hosts)


def validate_topology(topology: Topology) -> None:
    """Check every topology invariant, raising on the first violation."""
    if not topology.hosts:
        raise InvalidTopology("no_hosts")
    seen: set[str] = set()
    for host in topology.hosts:
        if not host.id:
            raise InvalidTopology("empty_id")
        if host.id in seen:
            raise InvalidTopology("duplicate_id", host.id)
        seen.add(host.id)
        if host.core_count <= 0:
            raise InvalidTopology("core_count", host.id)
        if not host.core_frequency > 0.0:
            raise InvalidTopology("core_frequency", host.id)
        if host.memory <= 0:
            raise InvalidTopology("memory", host.id)
        if not host.power.p_idle >= 0.0:
            raise InvalidTopology("p_idle", host.id)
        if not host.power.p_max >= host.power.p_idle:
            raise InvalidTopology("p_max_below_p_idle", host.id)
        if not (R_MIN <= host.power.r <= R_MAX):
            raise InvalidTopology("r_bounds", host.id)


@dataclass(frozen=True, slots=True)
class Fragment:
    """One sequential phase of a task: run for ``duration`` seconds while
    demanding ``cpu_demand`` MHz in aggregate across the task's cores."""

    duration: int  # seconds at nominal speed
    cpu_demand: float  # MHz


@dataclass(frozen=True, slots=True)
class WorkloadTask:
    """A job from the trace: arrives at ``submit_time``, needs
    ``core_request`` cores for its whole life, executes fragments in order."""

    id: str
    submit_time: int
    core_request: int
    fragments: tuple[Fragment, ...]

    @property
    def total_duration(self) -> int:
        return sum(f.duration for f in self.fragments)


def validate_workload(tasks: Sequence[WorkloadTask]) -> list[WorkloadTask]:
    """Check workload invariants and return tasks sorted by (submit, id)."""
    seen: set[str] = set()
    for task in tasks:
        if not task.id:
            raise InvalidWorkload("empty_id")
        if task.id in seen:
            raise InvalidWorkload("duplicate_id", task.id)
        seen.add(task.id)
        if task.submit_time < 0:
            raise InvalidWorkload("submit_time", task.id)
        if task.core_request <= 0:
            raise InvalidWorkload("core_request", task.id)
        if not task.fragments:
            raise InvalidWorkload("no_fragments", task.id)
        for frag in task.fragments:
            if frag.duration <= 0:
                raise InvalidWorkload("fragment_duration", task.id)
            if frag.cpu_demand < 0.0:
                raise InvalidWorkload("fragment_demand", task.id)
    return sorted(tasks, key=lambda t: (t.submit_time, t.id))


@dataclass(frozen=True, slots=True)
class TelemetrySample:
    """One observation of the cluster: wall power plus mean utilization."""

    timestamp: int
    power_draw: float  # watts
    cpu_utilization: float  # [0, 1], fraction of total capacity in use
    source: SampleSource

    def __post_init__(self) -> None:
        if self.power_draw < 0.0:
            raise DomainError(f"power_draw must be >= 0, got {self.power_draw}")
        if not (0.0 <= self.cpu_utilization <= 1.0):
            raise DomainError(f"cpu_utilization must be in [0, 1], got {self.cpu_utilization}")


@dataclass(frozen=True, slots=True)
class Window:
    """Half-open interval [start, end) of one lock-step cycle."""

    index: int
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise DomainError(f"window end must exceed start, got [{self.start}, {self.end})")

    @property
    def duration(self) -> int:
        return self.end - self.start

    def contains(self, ts: int) -> bool:
        return self.start <= ts < self.end


def windows_spanning(window_duration: int, horizon: int) -> tuple[Window, ...]:
    """Partition [0, horizon) into contiguous windows.

    The horizon must be a positive multiple of the window duration; anything
    else would leave a ragged final window that the lock-step loop cannot
    complete.
    """
    if window_duration <= 0:
        raise DomainError("window_duration must be positive")
    if horizon <= 0 or horizon % window_duration != 0:
        raise DomainError(
            f"horizon must be a positive multiple of window_duration, got {horizon} / {window_duration}"
        )
    return tuple(
        Window(index=k, start=k * window_duration, end=(k + 1) * window_duration)
        for k in range(horizon // window_duration)
    )


@dataclass(frozen=True, slots=True)
class Acceleration:
    """How simulated time maps onto wall time.

    ``realtime`` paces one simulated second per wall second, ``fixed`` divides
    by a constant factor, ``max`` removes pacing entirely (trace-only mode).
    """

    kind: str  # "realtime" | "fixed" | "max"
    factor: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("realtime", "fixed", "max"):
            raise DomainError(f"unknown acceleration kind {self.kind!r}")
        if self.kind == "fixed":
            if self.factor is None or not self.factor > 0.0:
                raise DomainError("fixed acceleration needs a factor > 0")
        elif self.factor is not None:
            raise DomainError(f"{self.kind} acceleration takes no factor")

    @classmethod
    def realtime(cls) -> "Acceleration":
        return cls("realtime")

    @classmethod
    def fixed(cls, factor: float) -> "Acceleration":
        return cls("fixed", factor)

    @classmethod
    def maximum(cls) -> "Acceleration":
        return cls("max")

    @classmethod
    def parse(cls, text: str) -> "Acceleration":
        """Parse the CLI/config syntax: realtime | fixed:<factor> | max."""
        if text == "realtime":
            return cls.realtime()
        if text in ("max", "maximum"):
            return cls.maximum()
        if text.startswith("fixed:"):
            try:
                factor = float(text.split(":", 1)[1])
                return cls.fixed(factor)
            except (ValueError, DomainError):
                raise ConfigError(f"bad acceleration factor in {text!r}") from None
        raise ConfigError(f"unknown acceleration {text!r}")

    def __str__(self) -> str:
        if self.kind == "fixed":
            factor = self.factor
            assert factor is not None
            text = f"{factor:g}"
            return f"fixed:{text}"
        return self.kind

    @property
    def is_paced(self) -> bool:
        return self.kind != "max"

    def wall_seconds_for(self, sim_seconds: int) -> float:
        """Wall-clock budget for a span of simulated time. None-pacing maps to 0."""
        if self.kind == "realtime":
            return float(sim_seconds)
        if self.kind == "fixed":
            assert self.factor is not None
            return sim_seconds / self.factor
        return 0.0


@dataclass(frozen=True, slots=True)
class RunMetadata:
    """Bookkeeping about one simulated window, kept for performance analysis.

    Wall-clock fields are volatile and live in a sidecar log, not in the
    report file, so that repeated runs stay byte-identical.
    """

    correlation_id: str
    window_index: int
    simulation_started_at: float  # unix seconds
    simulation_finished_at: float
    acceleration_mode: Acceleration

    def __post_init__(self) -> None:
        if self.simulation_finished_at < self.simulation_started_at:
            raise DomainError("simulation finished before it started")


@dataclass(frozen=True, slots=True)
class CalibrationResult:
    """Outcome of one grid search over the exponent.

    ``produced_in_window`` is the window during which the search ran;
    its selection steers the window after that, never the current one.
    """

    produced_in_window: int
    applies_from_window: int
    selected_r: float
    evaluated: tuple[tuple[float, float], ...]  # (candidate r, MAPE percent)
    history_window: tuple[int, int]  # [start, end) of the replayed span

    def __post_init__(self) -> None:
        if self.applies_from_window != self.produced_in_window + 1:
            raise DomainError("calibration must apply from the next window")
        if not self.evaluated:
            raise DomainError("calibration evaluated no candidates")
        best = min(self.evaluated, key=lambda e: (e[1], e[0]))
        if best[0] != self.selected_r:
            raise DomainError(
                f"selected_r {self.selected_r} does not minimize MAPE (expected {best[0]})"
            )


@dataclass(frozen=True, slots=True)
class Recommendation:
    """An operator-facing suggestion produced by the feedback loop."""

    id: str
    created_in_window: int
    kind: RecommendationKind
    summary: str
    evidence: Mapping[str, float]
    status: RecommendationStatus = RecommendationStatus.PENDING
    decided_by: str | None = None
    decided_at: float | None = None


@dataclass(frozen=True, slots=True)
class WindowReport:
    """Everything the twin learned about one window."""

    window: Window
    params_used: PowerModelParams
    calibrated: bool  # params came from a consumed calibration, not the initial guess
    predictions: tuple[TelemetrySample, ...]
    ground_truth: tuple[TelemetrySample, ...]
    mape_percent: float | None
    calibration: CalibrationResult | None
    performance_tflops: tuple[tuple[int, float], ...]
    efficiency_tflops_per_kwh: tuple[tuple[int, float], ...]
    correlation_id: str
    metadata: RunMetadata | None = None


# ---------------------------------------------------------------------------
# Serialization. One canonical JSON form per type; files are written with
# sorted keys and no whitespace so identical runs produce identical bytes.
# ---------------------------------------------------------------------------


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def params_to_dict(params: PowerModelParams) -> dict[str, float]:
    return {"p_idle_w": params.p_idle, "p_max_w": params.p_max, "r": params.r}


def params_from_dict(data: Mapping[str, Any]) -> PowerModelParams:
    return PowerModelParams(
        p_idle=float(data["p_idle_w"]),
        p_max=float(data["p_max_w"]),
        r=float(data["r"]),
    )


def topology_to_dict(topology: Topology) -> dict[str, Any]:
    return {
        "name": topology.name,
        "hosts": [
            {
                "id": h.id,
                "core_count": h.core_count,
                "core_frequency_mhz": h.core_frequency,
                "memory_mib": h.memory,
                "p_idle_w": h.power.p_idle,
                "p_max_w": h.power.p_max,
            }
            for h in topology.hosts
        ],
    }


def topology_from_dict(data: Mapping[str, Any], r: float = DEFAULT_INITIAL_R) -> Topology:
    """Build a topology from its JSON form.

    The file carries measured endpoints only; the exponent ``r`` is run state
    owned by the calibration loop, so the caller supplies it. Missing power
    endpoints are an error, never defaulted: a host without measured idle/max
    power cannot be simulated honestly.
    """
    try:
        name = data["name"]
        raw_hosts = data["hosts"]
    except KeyError as exc:
        raise InvalidTopology("missing_field", detail=str(exc)) from None
    hosts = []
    for raw in raw_hosts:
        try:
            hosts.append(
                HostSpec(
                    id=str(raw["id"]),
                    core_count=int(raw["core_count"]),
                    core_frequency=float(raw["core_frequency_mhz"]),
                    memory=int(raw["memory_mib"]),
                    power=PowerModelParams(
                        p_idle=float(raw["p_idle_w"]),
                        p_max=float(raw["p_max_w"]),
                        r=r,
                    ),
                )
            )
        except KeyError as exc:
            raise InvalidTopology(
                "missing_field", host_id=str(raw.get("id", "?")), detail=str(exc)
            ) from None
    topology = Topology(name=str(name), hosts=tuple(hosts))
    validate_topology(topology)
    return topology


def read_topology_file(path: str | Path, r: float = DEFAULT_INITIAL_R) -> Topology:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidTopology("unreadable", detail=str(exc)) from exc
    return topology_from_dict(data, r=r)


def write_topology_file(topology: Topology, path: str | Path) -> None:
    Path(path).write_text(json.dumps(topology_to_dict(topology), indent=2) + "\n")


WORKLOAD_CSV_HEADER = (
    "task_id",
    "submit_time_s",
    "core_request",
    "fragment_index",
    "duration_s",
    "cpu_demand_mhz",
)


def write_workload_csv(tasks: Iterable[WorkloadTask], path: str | Path) -> None:
    """One row per fragment, fragments contiguous per task."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WORKLOAD_CSV_HEADER)
        for task in tasks:
            for idx, frag in enumerate(task.fragments):
                writer.writerow(
                    [task.id, task.submit_time, task.core_request, idx, frag.duration, frag.cpu_demand]
                )


def read_workload_csv(path: str | Path) -> list[WorkloadTask]:
    """Parse and validate a workload trace. Returns tasks sorted by (submit, id)."""
    rows_by_task: dict[str, dict[str, Any]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != WORKLOAD_CSV_HEADER:
            raise InvalidWorkload("header", detail=f"expected {','.join(WORKLOAD_CSV_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(WORKLOAD_CSV_HEADER):
                raise InvalidWorkload("row_shape", detail=f"line {line_no}")
            try:
                task_id = row[0]
                submit = int(row[1])
                cores = int(row[2])
                frag_idx = int(row[3])
                duration = int(row[4])
                demand = float(row[5])
            except ValueError as exc:
                raise InvalidWorkload("row_value", task_id=row[0], detail=f"line {line_no}: {exc}") from None
            entry = rows_by_task.setdefault(
                task_id, {"submit": submit, "cores": cores, "fragments": {}}
            )
            if entry["submit"] != submit or entry["cores"] != cores:
                raise InvalidWorkload("inconsistent_task_rows", task_id)
            if frag_idx in entry["fragments"]:
                raise InvalidWorkload("duplicate_fragment_index", task_id)
            entry["fragments"][frag_idx] = Fragment(duration=duration, cpu_demand=demand)
    tasks = []
    for task_id, entry in rows_by_task.items():
        frag_map: dict[int, Fragment] = entry["fragments"]
        if sorted(frag_map) != list(range(len(frag_map))):
            raise InvalidWorkload("fragment_index_gap", task_id)
        tasks.append(
            WorkloadTask(
                id=task_id,
                submit_time=entry["submit"],
                core_request=entry["cores"],
                fragments=tuple(frag_map[i] for i in range(len(frag_map))),
            )
        )
    return validate_workload(tasks)


def sample_to_dict(sample: TelemetrySample) -> dict[str, Any]:
    return {
        "ts": sample.timestamp,
        "power_w": sample.power_draw,
        "cpu_util": sample.cpu_utilization,
        "source": sample.source.value,
    }


def sample_from_dict(data: Mapping[str, Any]) -> TelemetrySample:
    return TelemetrySample(
        timestamp=int(data["ts"]),
        power_draw=float(data["power_w"]),
        cpu_utilization=float(data["cpu_util"]),
        source=SampleSource(data["source"]),
    )


def format_telemetry_line(sample: TelemetrySample) -> str:
    return canonical_json(sample_to_dict(sample))


def calibration_to_dict(result: CalibrationResult) -> dict[str, Any]:
    return {
        "produced_in_window": result.produced_in_window,
        "applies_from_window": result.applies_from_window,
        "selected_r": result.selected_r,
        "evaluated": [[r, m] for r, m in result.evaluated],
        "history_start": result.history_window[0],
        "history_end": result.history_window[1],
    }


def calibration_from_dict(data: Mapping[str, Any]) -> CalibrationResult:
    return CalibrationResult(
        produced_in_window=int(data["produced_in_window"]),
        applies_from_window=int(data["applies_from_window"]),
        selected_r=float(data["selected_r"]),
        evaluated=tuple((float(r), float(m)) for r, m in data["evaluated"]),
        history_window=(int(data["history_start"]), int(data["history_end"])),
    )


def recommendation_to_dict(rec: Recommendation) -> dict[str, Any]:
    return {
        "id": rec.id,
        "created_in_window": rec.created_in_window,
        "kind": rec.kind.value,
        "summary": rec.summary,
        "evidence": dict(rec.evidence),
        "status": rec.status.value,
        "decided_by": rec.decided_by,
        "decided_at": rec.decided_at,
    }


def recommendation_from_dict(data: Mapping[str, Any]) -> Recommendation:
    return Recommendation(
        id=str(data["id"]),
        created_in_window=int(data["created_in_window"]),
        kind=RecommendationKind(data["kind"]),
        summary=str(data["summary"]),
        evidence={str(k): float(v) for k, v in data["evidence"].items()},
        status=RecommendationStatus(data["status"]),
        decided_by=data.get("decided_by"),
        decided_at=data.get("decided_at"),
    )


def metadata_to_dict(meta: RunMetadata) -> dict[str, Any]:
    return {
        "correlation_id": meta.correlation_id,
        "window_index": meta.window_index,
        "simulation_started_at": meta.simulation_started_at,
        "simulation_finished_at": meta.simulation_finished_at,
        "acceleration_mode": str(meta.acceleration_mode),
    }


def metadata_from_dict(data: Mapping[str, Any]) -> RunMetadata:
    return RunMetadata(
        correlation_id=str(data["correlation_id"]),
        window_index=int(data["window_index"]),
        simulation_started_at=float(data["simulation_started_at"]),
        simulation_finished_at=float(data["simulation_finished_at"]),
        acceleration_mode=Acceleration.parse(str(data["acceleration_mode"])),
    )


def window_to_dict(window: Window) -> dict[str, int]:
    return {"index": window.index, "start": window.start, "end": window.end}


def window_from_dict(data: Mapping[str, Any]) -> Window:
    return Window(index=int(data["index"]), start=int(data["start"]), end=int(data["end"]))


def report_to_dict(report: WindowReport, include_metadata: bool = False) -> dict[str, Any]:
    """JSON form of a report.

    Volatile run metadata is excluded by default: the persisted report must
    be a pure function of (config, seed) so determinism can be checked by
    byte comparison.
    """
    data: dict[str, Any] = {
        "window": window_to_dict(report.window),
        "correlation_id": report.correlation_id,
        "params_used": params_to_dict(report.params_used),
        "calibrated": report.calibrated,
        "predictions": [sample_to_dict(s) for s in report.predictions],
        "ground_truth": [sample_to_dict(s) for s in report.ground_truth],
        "mape_percent": report.mape_percent,
        "calibration": None if report.calibration is None else calibration_to_dict(report.calibration),
        "performance_tflops": [[ts, v] for ts, v in report.performance_tflops],
        "efficiency_tflops_per_kwh": [[ts, v] for ts, v in report.efficiency_tflops_per_kwh],
    }
    if include_metadata and report.metadata is not None:
        data["metadata"] = metadata_to_dict(report.metadata)
    return data


def report_from_dict(data: Mapping[str, Any]) -> WindowReport:
    calibration = data.get("calibration")
    meta = data.get("metadata")
    return WindowReport(
        window=window_from_dict(data["window"]),
        params_used=params_from_dict(data["params_used"]),
        calibrated=bool(data["calibrated"]),
        predictions=tuple(sample_from_dict(s) for s in data["predictions"]),
        ground_truth=tuple(sample_from_dict(s) for s in data["ground_truth"]),
        mape_percent=None if data["mape_percent"] is None else float(data["mape_percent"]),
        calibration=None if calibration is None else calibration_from_dict(calibration),
        performance_tflops=tuple((int(ts), float(v)) for ts, v in data["performance_tflops"]),
        efficiency_tflops_per_kwh=tuple(
            (int(ts), float(v)) for ts, v in data["efficiency_tflops_per_kwh"]
        ),
        correlation_id=str(data["correlation_id"]),
        metadata=None if meta is None else metadata_from_dict(meta),
    )

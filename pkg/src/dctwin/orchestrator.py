"""Lock-step twin loop.

Each cycle simulates one window of operation, collects the matching ground
truth, scores the prediction, and persists a report before the next window
starts. Calibration runs concurrently with the following window's simulation
and its selection is consumed at that window's end, so a search launched
after window k steers window k+2; the first two windows always run on the
configured initial exponent.

Reports are a pure function of (config, inputs, seed): correlation ids
derive from a digest of the semantic configuration, wall-clock metadata goes
to a sidecar log, and calibration joins happen at fixed boundaries rather
than whenever a thread happens to finish.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from .calibrator import (
    AllCandidatesFailed,
    CalibrationSkipped,
    DEFAULT_HISTORY_WINDOWS,
    DEFAULT_MIN_HISTORY_SAMPLES,
    NoOverlap,
    RecordedHistory,
    calibrate,
    default_grid,
    mape,
    validate_grid,
)
from .model import (
    Acceleration,
    ConfigError,
    DEFAULT_FLOPS_PER_CYCLE,
    DEFAULT_INITIAL_R,
    DEFAULT_SAMPLING_GRANULARITY_S,
    DEFAULT_WINDOW_DURATION_S,
    Recommendation,
    RecommendationKind,
    RunMetadata,
    SampleSource,
    TelemetrySample,
    Topology,
    Window,
    WindowReport,
    WorkloadTask,
    canonical_json,
    read_topology_file,
    read_workload_csv,
    windows_spanning,
)
from .power import cluster_params, hourly_efficiency
from .simengine import SimConfig, SimState, TaskUnschedulable, simulate_window
from .telemetry import (
    FileReplaySource,
    LiveSourceWithMaxAcceleration,
    PaceController,
    SampleFeed,
    StreamSource,
    TelemetryLog,
    TelemetryStreamServer,
    read_telemetry_file,
    start_replay_producer,
)
from .workspace import Workspace

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class CalibrationSettings:
    enabled: bool = True
    grid: tuple[float, ...] = field(default_factory=default_grid)
    history_windows: int = DEFAULT_HISTORY_WINDOWS
    min_history_samples: int = DEFAULT_MIN_HISTORY_SAMPLES

    def __post_init__(self) -> None:
        validate_grid(self.grid)
        if self.history_windows <= 0:
            raise ConfigError("history_windows must be positive")
        if self.min_history_samples <= 0:
            raise ConfigError("min_history_samples must be positive")


@dataclass(frozen=True, slots=True)
class AccuracyTarget:
    """Accuracy objective: MAPE below the threshold in enough windows."""

    threshold_percent: float = 10.0
    required_fraction: float = 0.90


@dataclass(frozen=True, slots=True)
class RecommendationSettings:
    trailing_windows: int = 24
    underutilization_threshold: float = 0.30


@dataclass(frozen=True, slots=True)
class TwinConfig:
    topology_path: Path
    workload_path: Path
    telemetry: FileReplaySource | StreamSource
    workspace: Path
    window_duration: int = DEFAULT_WINDOW_DURATION_S
    sampling_granularity: int = DEFAULT_SAMPLING_GRANULARITY_S
    horizon: int | None = None
    acceleration: Acceleration = field(default_factory=Acceleration.realtime)
    initial_r: float = DEFAULT_INITIAL_R
    flops_per_cycle: float = DEFAULT_FLOPS_PER_CYCLE
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    accuracy: AccuracyTarget = field(default_factory=AccuracyTarget)
    recommendations: RecommendationSettings = field(default_factory=RecommendationSettings)
    control_enabled: bool = False
    api_addr: str = "127.0.0.1:8800"
    cors_origins: tuple[str, ...] = ("*",)
    seed: int = 0
    debug_event_trace: bool = False

    def __post_init__(self) -> None:
        if self.window_duration <= 0 or self.sampling_granularity <= 0:
            raise ConfigError("window_duration and sampling_granularity must be positive")
        if self.window_duration % self.sampling_granularity != 0:
            raise ConfigError(
                f"window_duration {self.window_duration} must be a multiple of "
                f"sampling_granularity {self.sampling_granularity}"
            )
        if self.horizon is not None and (
            self.horizon <= 0 or self.horizon % self.window_duration != 0
        ):
            raise ConfigError("horizon must be a positive multiple of window_duration")

    def public_dict(self) -> dict[str, Any]:
        """JSON form written to the workspace and hashed into the run id."""
        telemetry: dict[str, Any]
        if isinstance(self.telemetry, FileReplaySource):
            telemetry = {"kind": "file", "path": str(self.telemetry.path)}
        else:
            telemetry = {"kind": "stream", "endpoint": self.telemetry.endpoint}
        return {
            "topology": str(self.topology_path),
            "workload": str(self.workload_path),
            "telemetry": telemetry,
            "workspace": str(self.workspace),
            "window_duration_s": self.window_duration,
            "sampling_granularity_s": self.sampling_granularity,
            "horizon_s": self.horizon,
            "acceleration": str(self.acceleration),
            "initial_r": self.initial_r,
            "flops_per_cycle": self.flops_per_cycle,
            "calibration": {
                "enabled": self.calibration.enabled,
                "grid": list(self.calibration.grid),
                "history_windows": self.calibration.history_windows,
                "min_history_samples": self.calibration.min_history_samples,
            },
            "accuracy": {
                "threshold_percent": self.accuracy.threshold_percent,
                "required_fraction": self.accuracy.required_fraction,
            },
            "recommendations": {
                "trailing_windows": self.recommendations.trailing_windows,
                "underutilization_threshold": self.recommendations.underutilization_threshold,
            },
            "control_enabled": self.control_enabled,
            "api_addr": self.api_addr,
            "cors_origins": list(self.cors_origins),
            "seed": self.seed,
            "debug_event_trace": self.debug_event_trace,
        }


def load_config(path: str | Path, **overrides: Any) -> TwinConfig:
    """Read a config file, resolving relative paths against its directory.

    ``overrides`` replace top-level values (CLI flags). Raises ConfigError
    for anything unusable.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    base = path.parent

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else (base / q)

    try:
        telemetry_raw = data["telemetry"]
        if isinstance(telemetry_raw, str):
            telemetry: FileReplaySource | StreamSource = FileReplaySource(resolve(telemetry_raw))
        elif isinstance(telemetry_raw, dict) and "stream" in telemetry_raw:
            telemetry = StreamSource(str(telemetry_raw["stream"]))
        elif isinstance(telemetry_raw, dict) and "path" in telemetry_raw:
            telemetry = FileReplaySource(resolve(str(telemetry_raw["path"])))
        else:
            raise ConfigError(f"unusable telemetry source {telemetry_raw!r}")

        calib_raw = data.get("calibration", {})
        if "grid" in calib_raw:
            grid = tuple(float(r) for r in calib_raw["grid"])
        else:
            grid = default_grid(
                float(calib_raw.get("grid_start", 0.5)),
                float(calib_raw.get("grid_stop", 4.0)),
                float(calib_raw.get("grid_step", 0.25)),
            )
        calibration = CalibrationSettings(
            enabled=bool(calib_raw.get("enabled", True)),
            grid=grid,
            history_windows=int(calib_raw.get("history_windows", DEFAULT_HISTORY_WINDOWS)),
            min_history_samples=int(
                calib_raw.get("min_history_samples", DEFAULT_MIN_HISTORY_SAMPLES)
            ),
        )
        accuracy_raw = data.get("accuracy", {})
        accuracy = AccuracyTarget(
            threshold_percent=float(accuracy_raw.get("threshold_percent", 10.0)),
            required_fraction=float(accuracy_raw.get("required_fraction", 0.90)),
        )
        rec_raw = data.get("recommendations", {})
        recommendations = RecommendationSettings(
            trailing_windows=int(rec_raw.get("trailing_windows", 24)),
            underutilization_threshold=float(rec_raw.get("underutilization_threshold", 0.30)),
        )
        api_raw = data.get("api", {})
        horizon = data.get("horizon_s")
        config = TwinConfig(
            topology_path=resolve(str(data["topology"])),
            workload_path=resolve(str(data["workload"])),
            telemetry=telemetry,
            workspace=resolve(str(data.get("workspace", "workspace"))),
            window_duration=int(data.get("window_duration_s", DEFAULT_WINDOW_DURATION_S)),
            sampling_granularity=int(
                data.get("sampling_granularity_s", DEFAULT_SAMPLING_GRANULARITY_S)
            ),
            horizon=None if horizon is None else int(horizon),
            acceleration=Acceleration.parse(str(data.get("acceleration", "realtime"))),
            initial_r=float(data.get("initial_r", DEFAULT_INITIAL_R)),
            flops_per_cycle=float(data.get("flops_per_cycle", DEFAULT_FLOPS_PER_CYCLE)),
            calibration=calibration,
            accuracy=accuracy,
            recommendations=recommendations,
            control_enabled=bool(api_raw.get("control_enabled", False)),
            api_addr=str(api_raw.get("addr", "127.0.0.1:8800")),
            cors_origins=tuple(api_raw.get("cors_origins", ["*"])),
            seed=int(data.get("seed", 0)),
            debug_event_trace=bool(data.get("debug_event_trace", False)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return _apply_overrides(config, overrides)


def _apply_overrides(config: TwinConfig, overrides: Mapping[str, Any]) -> TwinConfig:
    from dataclasses import replace as dc_replace

    clean = {k: v for k, v in overrides.items() if v is not None}
    if not clean:
        return config
    if "calibration_enabled" in clean:
        enabled = clean.pop("calibration_enabled")
        clean["calibration"] = CalibrationSettings(
            enabled=enabled,
            grid=config.calibration.grid,
            history_windows=config.calibration.history_windows,
            min_history_samples=config.calibration.min_history_samples,
        )
    return dc_replace(config, **clean)


def run_id_for(config: TwinConfig) -> str:
    """Digest of everything that determines report content.

    Input files are hashed by content, not path, so the same scenario run
    from two directories yields identical correlation ids and, therefore,
    byte-identical reports.
    """
    h = hashlib.sha256()
    core = config.public_dict()
    for volatile in ("workspace", "topology", "workload", "telemetry", "api_addr",
                     "cors_origins", "control_enabled", "acceleration"):
        core.pop(volatile, None)
    h.update(canonical_json(core).encode())
    for p in (config.topology_path, config.workload_path):
        h.update(Path(p).read_bytes())
    if isinstance(config.telemetry, FileReplaySource):
        h.update(Path(config.telemetry.path).read_bytes())
    return h.hexdigest()[:12]


def acceleration_deadline(acceleration: Acceleration, window: Window) -> float | None:
    """Wall-clock budget for one window; None means unpaced."""
    if not acceleration.is_paced:
        return None
    return acceleration.wall_seconds_for(window.duration)


class Recommender:
    """Turns trailing-window evidence into operator recommendations.

    Never creates a second Pending item of a kind that already has one; a
    persisting condition re-fires only after the operator decides.
    """

    def __init__(self, settings: RecommendationSettings, accuracy: AccuracyTarget):
        self.settings = settings
        self.accuracy = accuracy
        self._trail: deque[tuple[int, float, int, float | None]] = deque(
            maxlen=settings.trailing_windows
        )  # (window index, sum of utilization, sample count, window MAPE)

    def observe(
        self,
        window_index: int,
        predictions: Sequence[TelemetrySample],
        mape_percent: float | None,
        pending_kinds: set[str],
    ) -> list[Recommendation]:
        util_sum = sum(s.cpu_utilization for s in predictions)
        self._trail.append((window_index, util_sum, len(predictions), mape_percent))

        out: list[Recommendation] = []
        total_samples = sum(n for _, _, n, _ in self._trail)
        if total_samples > 0 and RecommendationKind.UNDERUTILIZATION.value not in pending_kinds:
            mean_util = sum(u for _, u, _, _ in self._trail) / total_samples
            if mean_util < self.settings.underutilization_threshold:
                out.append(
                    Recommendation(
                        id=f"underutilization-w{window_index:05d}",
                        created_in_window=window_index,
                        kind=RecommendationKind.UNDERUTILIZATION,
                        summary=(
                            f"Mean utilization {mean_util:.1%} over the last "
                            f"{len(self._trail)} windows is below "
                            f"{self.settings.underutilization_threshold:.0%}; consider "
                            "consolidating load or powering down spare hosts."
                        ),
                        evidence={
                            "mean_utilization": mean_util,
                            "threshold": self.settings.underutilization_threshold,
                            "span_windows": float(len(self._trail)),
                        },
                    )
                )

        mapes = [m for _, _, _, m in self._trail if m is not None]
        if mapes and RecommendationKind.ACCURACY_DEGRADED.value not in pending_kinds:
            below = sum(1 for m in mapes if m < self.accuracy.threshold_percent)
            compliance = below / len(mapes)
            if compliance < self.accuracy.required_fraction:
                out.append(
                    Recommendation(
                        id=f"accuracy_degraded-w{window_index:05d}",
                        created_in_window=window_index,
                        kind=RecommendationKind.ACCURACY_DEGRADED,
                        summary=(
                            f"Prediction error stayed under "
                            f"{self.accuracy.threshold_percent:g}% in only "
                            f"{compliance:.0%} of the last {len(mapes)} scored windows "
                            f"(target {self.accuracy.required_fraction:.0%}); the power "
                            "model may need recalibration or remeasured host endpoints."
                        ),
                        evidence={
                            "compliance": compliance,
                            "threshold_percent": self.accuracy.threshold_percent,
                            "required_fraction": self.accuracy.required_fraction,
                            "span_windows": float(len(mapes)),
                        },
                    )
                )
        return out


def _plan_windows(config: TwinConfig, samples: Sequence[TelemetrySample] | None) -> tuple[Window, ...]:
    if config.horizon is not None:
        return windows_spanning(config.window_duration, config.horizon)
    if samples is None:
        raise ConfigError("a live telemetry stream requires an explicit horizon")
    if not samples:
        raise ConfigError("telemetry file is empty and no horizon was given")
    last_ts = samples[-1].timestamp
    n_windows = (last_ts + config.sampling_granularity) // config.window_duration
    if n_windows <= 0:
        raise ConfigError("telemetry file does not cover one full window")
    return windows_spanning(config.window_duration, n_windows * config.window_duration)


class _TruthCollector:
    """Drains the sample feed window by window, holding back the first
    sample that belongs to a later window."""

    def __init__(self, feed: SampleFeed):
        self.feed = feed
        self.pushback: TelemetrySample | None = None
        self.exhausted = False
        self.late_drops = 0
        self.stalled_windows = 0

    def collect(
        self, window: Window, granularity: int, deadline_wall: float | None
    ) -> list[TelemetrySample]:
        expected = frozenset(range(window.start, window.end, granularity))
        by_ts: dict[int, TelemetrySample] = {}
        if self.pushback is not None:
            if self.pushback.timestamp >= window.end:
                return []
            if window.contains(self.pushback.timestamp):
                by_ts[self.pushback.timestamp] = self.pushback
            self.pushback = None
        while not self.exhausted and not expected <= by_ts.keys():
            timeout = None
            if deadline_wall is not None:
                timeout = max(0.0, deadline_wall - time.monotonic())
            try:
                sample = self.feed.get(timeout=timeout)
            except TimeoutError:
                self.stalled_windows += 1
                logger.warning(
                    "telemetry stalled: window %d incomplete at its deadline", window.index
                )
                break
            if sample is None:
                self.exhausted = True
                break
            if sample.timestamp < window.start:
                self.late_drops += 1
                continue
            if sample.timestamp >= window.end:
                self.pushback = sample
                break
            by_ts.setdefault(sample.timestamp, sample)
        return [by_ts[ts] for ts in sorted(by_ts)]


def run_loop(config: TwinConfig) -> Iterator[WindowReport]:
    """Execute the twin over its horizon, yielding one report per window.

    Reports are persisted to the workspace before being yielded; the loop
    never starts window k+1 before window k's report is on disk.
    """
    if isinstance(config.telemetry, StreamSource) and not config.acceleration.is_paced:
        raise LiveSourceWithMaxAcceleration(
            "maximum acceleration would outrun the live stream; replay a file instead"
        )

    topology = read_topology_file(config.topology_path, r=config.initial_r)
    tasks = read_workload_csv(config.workload_path)
    max_cores = max(h.core_count for h in topology.hosts)
    for task in tasks:
        if task.core_request > max_cores:
            raise TaskUnschedulable(
                f"task {task.id!r} requests {task.core_request} cores, "
                f"largest host has {max_cores}"
            )

    file_samples: list[TelemetrySample] | None = None
    if isinstance(config.telemetry, FileReplaySource):
        file_samples = read_telemetry_file(config.telemetry.path, config.sampling_granularity)
    windows = _plan_windows(config, file_samples)

    ws = Workspace(config.workspace)
    ws.initialize(config.public_dict())
    run_id = run_id_for(config)

    trace = None
    trace_fh = None
    if config.debug_event_trace:
        trace_fh = open(ws.root / "events.jsonl", "w")
        trace = lambda event: trace_fh.write(canonical_json(event) + "\n")
    sim_config = SimConfig(
        topology=topology,
        sampling_granularity=config.sampling_granularity,
        flops_per_cycle=config.flops_per_cycle,
        trace=trace,
    )

    pace = PaceController(config.acceleration)
    pace.start(epoch_ts=windows[0].start)
    feed = SampleFeed()
    stream_server: TelemetryStreamServer | None = None
    if file_samples is not None:
        horizon_end = windows[-1].end
        start_replay_producer(
            [s for s in file_samples if s.timestamp < horizon_end], feed, pace
        )
    else:
        assert isinstance(config.telemetry, StreamSource)
        stream_server = TelemetryStreamServer(config.telemetry.endpoint, feed).start()

    telemetry_log = TelemetryLog(ws.telemetry_path)
    collector = _TruthCollector(feed)
    recommender = Recommender(config.recommendations, config.accuracy)
    executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="calibration")

    state = SimState.initial(topology)
    current_r = config.initial_r
    current_calibrated = False
    current_acceleration = config.acceleration
    pending: Future | None = None
    history: deque[tuple[Window, tuple[TelemetrySample, ...], tuple]] = deque(
        maxlen=config.calibration.history_windows
    )
    task_cursor = 0

    try:
        for window in windows:
            current_acceleration = _apply_control(
                ws, config, pace, window, current_acceleration
            )

            batch: list[WorkloadTask] = []
            while task_cursor < len(tasks) and tasks[task_cursor].submit_time < window.end:
                if tasks[task_cursor].submit_time >= window.start:
                    batch.append(tasks[task_cursor])
                task_cursor += 1

            params_used = cluster_params(topology, current_r)
            window_calibrated = current_calibrated
            started_at = time.time()
            result = simulate_window(sim_config, window, state, batch, params_used)
            state = result.state
            finished_at = time.time()
            correlation_id = f"{run_id}-w{window.index:05d}"
            meta = RunMetadata(
                correlation_id=correlation_id,
                window_index=window.index,
                simulation_started_at=started_at,
                simulation_finished_at=finished_at,
                acceleration_mode=current_acceleration,
            )

            truth = collector.collect(
                window, config.sampling_granularity, pace.target_wall(window.end)
            )
            telemetry_log.append(truth)

            mape_percent: float | None = None
            truth_ts = {s.timestamp for s in truth}
            if truth and all(p.timestamp in truth_ts for p in result.predictions):
                try:
                    mape_percent = mape(truth, result.predictions)
                except NoOverlap:
                    logger.warning("window %d: MAPE undefined over this truth", window.index)

            # The search launched at the previous boundary ran alongside this
            # window; adopt its selection for the next one.
            calibration_result = None
            if pending is not None:
                try:
                    calibration_result = pending.result()
                    current_r = calibration_result.selected_r
                    current_calibrated = True
                    ws.append_calibration(calibration_result)
                except CalibrationSkipped as exc:
                    logger.info("window %d: calibration skipped (%s)", window.index, exc)
                except AllCandidatesFailed as exc:
                    logger.warning("window %d: calibration failed (%s)", window.index, exc)
                pending = None

            rows = tuple(
                (ts, u_by_host, sample.cpu_utilization)
                for (ts, u_by_host), sample in zip(result.host_utilization, result.predictions)
            )
            history.append((window, tuple(truth), rows))
            is_last = window.index == windows[-1].index
            if config.calibration.enabled and not is_last:
                span = (history[0][0].start, history[-1][0].end)
                recorded = RecordedHistory(
                    sim_config=sim_config,
                    rows=tuple(r for _, _, win_rows in history for r in win_rows),
                    span=span,
                )
                truth_all = [s for _, win_truth, _ in history for s in win_truth]
                pending = executor.submit(
                    calibrate,
                    truth_all,
                    recorded.probe,
                    config.calibration.grid,
                    produced_in_window=window.index + 1,
                    history_window=span,
                    min_history_samples=config.calibration.min_history_samples,
                )

            efficiency = hourly_efficiency(
                result.performance_tflops, result.predictions, config.sampling_granularity
            )
            report = WindowReport(
                window=window,
                params_used=params_used,
                calibrated=window_calibrated,
                predictions=result.predictions,
                ground_truth=tuple(truth),
                mape_percent=mape_percent,
                calibration=calibration_result,
                performance_tflops=result.performance_tflops,
                efficiency_tflops_per_kwh=tuple(efficiency),
                correlation_id=correlation_id,
                metadata=meta,
            )
            ws.write_report(report)
            ws.append_runmeta(meta)

            for rec in recommender.observe(
                window.index, result.predictions, mape_percent, ws.pending_kinds()
            ):
                ws.append_recommendation(rec)

            yield report

            if collector.exhausted and collector.pushback is None and not truth:
                logger.info("telemetry source exhausted; stopping after window %d", window.index)
                break
    finally:
        executor.shutdown(wait=False, cancel_futures=True)
        if stream_server is not None:
            stream_server.close()
        if trace_fh is not None:
            trace_fh.close()


def _apply_control(
    ws: Workspace,
    config: TwinConfig,
    pace: PaceController,
    window: Window,
    current: Acceleration,
) -> Acceleration:
    """Honor the operator mailbox at a window boundary."""
    if not config.control_enabled:
        return current
    control = ws.read_control()
    while control.get("paused"):
        time.sleep(0.1)
        control = ws.read_control()
    accel_text = control.get("acceleration")
    if accel_text:
        try:
            requested = Acceleration.parse(str(accel_text))
        except Exception:
            logger.warning("ignoring bad acceleration in control mailbox: %r", accel_text)
            return current
        if requested != current:
            if isinstance(config.telemetry, StreamSource) and not requested.is_paced:
                logger.warning("refusing max acceleration with a live stream")
                return current
            pace.set_acceleration(requested, at_ts=window.start)
            logger.info("window %d: acceleration now %s", window.index, requested)
            return requested
    return current


def run_to_completion(config: TwinConfig) -> list[WindowReport]:
    """Convenience wrapper: drive the loop and return every report."""
    return list(run_loop(config))

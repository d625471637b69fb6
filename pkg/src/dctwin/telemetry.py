"""Telemetry sources: file replay, live stream ingestion, and synthesis.

A telemetry source produces ground-truth samples in timestamp order. File
replay paces delivery according to the run's acceleration mode; the stream
transport is a newline-delimited TCP listener carrying the same record
format. Synthesis builds a workload plus matching ground-truth telemetry by
running the reference engine under a configured true exponent schedule and
adding optional Gaussian meter noise, which gives the acceptance scenarios a
known answer to recover.
"""

from __future__ import annotations

import json
import math
import queue
import random
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .model import (
    Acceleration,
    ConfigError,
    DCTwinError,
    DEFAULT_SAMPLING_GRANULARITY_S,
    DEFAULT_WINDOW_DURATION_S,
    DomainError,
    Fragment,
    PowerModelParams,
    SampleSource,
    TelemetrySample,
    Topology,
    Window,
    WorkloadTask,
    format_telemetry_line,
    sample_from_dict,
    validate_workload,
    windows_spanning,
)
from .power import host_power
from .simengine import SimConfig, SimState, simulate_window


class ParseError(DCTwinError):
    """A telemetry line could not be decoded."""

    def __init__(self, line_no: int, detail: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {detail}")


class GranularityMismatch(DCTwinError):
    """A sample timestamp is not on the sampling grid."""


class SourceStalled(DCTwinError):
    """A live-paced source missed its delivery deadline."""


class LiveSourceWithMaxAcceleration(ConfigError):
    """Maximum acceleration outruns any live source; the combination is banned."""


class InvalidProfile(DCTwinError):
    """Unknown synthesis profile name."""


def parse_telemetry_line(line: str, line_no: int = 0) -> TelemetrySample:
    try:
        data = json.loads(line)
        return sample_from_dict(data)
    except (json.JSONDecodeError, KeyError, ValueError, TypeError, DomainError) as exc:
        raise ParseError(line_no, str(exc)) from exc


def read_telemetry_file(path: str | Path, granularity: int | None = None) -> list[TelemetrySample]:
    """Parse a telemetry log, returning samples sorted by timestamp."""
    samples: list[TelemetrySample] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            sample = parse_telemetry_line(line, line_no)
            if granularity is not None and sample.timestamp % granularity != 0:
                raise GranularityMismatch(
                    f"ts {sample.timestamp} not a multiple of {granularity}s (line {line_no})"
                )
            samples.append(sample)
    samples.sort(key=lambda s: s.timestamp)
    return samples


def write_telemetry_file(samples: Iterable[TelemetrySample], path: str | Path) -> None:
    with open(path, "w") as fh:
        for sample in samples:
            fh.write(format_telemetry_line(sample) + "\n")


def clip_to_window(samples: Iterable[TelemetrySample], window: Window) -> list[TelemetrySample]:
    """Samples with window.start <= ts < window.end. Boundary ts belongs to
    the window it opens, never the one it closes."""
    return [s for s in samples if window.contains(s.timestamp)]


# ---------------------------------------------------------------------------
# Delivery: pacing and the producer/consumer feed between source and loop.
# ---------------------------------------------------------------------------


class PaceController:
    """Maps simulated time onto wall time for one run.

    Anchored once at run start; ``wait_for(ts)`` sleeps until the wall
    instant corresponding to simulated ``ts`` under the current acceleration.
    Changing acceleration re-anchors at the supplied simulated position so
    already-elapsed time is never replayed. Clock and sleep are injectable
    for tests.
    """

    def __init__(
        self,
        acceleration: Acceleration,
        *,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._acceleration = acceleration
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._anchor_wall: float | None = None
        self._anchor_ts: int = 0

    @property
    def acceleration(self) -> Acceleration:
        with self._lock:
            return self._acceleration

    def start(self, epoch_ts: int) -> None:
        with self._lock:
            if self._anchor_wall is None:
                self._anchor_wall = self._clock()
                self._anchor_ts = epoch_ts

    def set_acceleration(self, acceleration: Acceleration, at_ts: int) -> None:
        with self._lock:
            self._acceleration = acceleration
            self._anchor_wall = self._clock()
            self._anchor_ts = at_ts

    def target_wall(self, ts: int) -> float | None:
        """Wall deadline for simulated ``ts``, or None when unpaced."""
        with self._lock:
            if self._anchor_wall is None or not self._acceleration.is_paced:
                return None
            span = self._acceleration.wall_seconds_for(ts - self._anchor_ts)
            return self._anchor_wall + span

    def wait_for(self, ts: int) -> None:
        target = self.target_wall(ts)
        if target is None:
            return
        delay = target - self._clock()
        if delay > 0:
            self._sleep(delay)


class _FeedClosed:
    pass


_CLOSED = _FeedClosed()


class SampleFeed:
    """Bounded single-producer single-consumer buffer of telemetry samples.

    The producer blocks when the buffer is full (backpressure, no drops).
    ``get`` returns None once the feed is closed and drained.
    """

    def __init__(self, maxsize: int = 4096):
        self._queue: queue.Queue = queue.Queue(maxsize)

    def put(self, sample: TelemetrySample) -> None:
        self._queue.put(sample)

    def close(self) -> None:
        self._queue.put(_CLOSED)

    def get(self, timeout: float | None = None) -> TelemetrySample | None:
        """Next sample; None when closed. Raises TimeoutError on deadline."""
        try:
            item = self._queue.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("telemetry feed delivery deadline passed") from None
        if isinstance(item, _FeedClosed):
            self._queue.put(item)  # keep the feed observably closed
            return None
        return item


@dataclass(frozen=True, slots=True)
class FileReplaySource:
    """Ground truth replayed from a recorded telemetry log."""

    path: Path
    is_live = False


@dataclass(frozen=True, slots=True)
class StreamSource:
    """Ground truth arriving live over the line-delimited TCP transport."""

    endpoint: str  # host:port
    is_live = True


def start_replay_producer(
    samples: Sequence[TelemetrySample],
    feed: SampleFeed,
    pace: PaceController,
) -> threading.Thread:
    """Feed recorded samples, sleeping each one onto the pacing schedule."""

    def run() -> None:
        try:
            for sample in samples:
                pace.wait_for(sample.timestamp)
                feed.put(sample)
        finally:
            feed.close()

    thread = threading.Thread(target=run, name="telemetry-replay", daemon=True)
    thread.start()
    return thread


class TelemetryStreamServer:
    """Line-delimited TCP listener feeding a SampleFeed.

    One record per line, same JSON schema as the telemetry file. Malformed
    lines are counted and skipped; a disconnect leaves the listener open for
    the next producer. close() shuts the listener down and closes the feed.
    """

    def __init__(self, endpoint: str, feed: SampleFeed):
        host, _, port_text = endpoint.removeprefix("tcp://").partition(":")
        if not port_text:
            raise ConfigError(f"stream endpoint {endpoint!r} must be host:port")
        self._feed = feed
        self.parse_failures = 0
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                for raw in self.rfile:
                    line = raw.decode("utf-8", errors="replace").strip()
                    if not line:
                        continue
                    try:
                        outer._feed.put(parse_telemetry_line(line))
                    except ParseError:
                        outer.parse_failures += 1

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host or "127.0.0.1", int(port_text)), Handler)
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="telemetry-stream", daemon=True
        )

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> "TelemetryStreamServer":
        self._thread.start()
        return self

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._feed.close()


class TelemetryLog:
    """Append-only persistence of ingested ground truth with deduplication.

    Duplicate timestamps are a producer bug worth surfacing but not worth
    killing the loop over: they are counted and dropped.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.duplicates = 0
        self._seen: set[int] = set()
        if self.path.exists():
            for sample in read_telemetry_file(self.path):
                self._seen.add(sample.timestamp)

    def append(self, samples: Iterable[TelemetrySample]) -> int:
        appended = 0
        with open(self.path, "a") as fh:
            for sample in samples:
                if sample.timestamp in self._seen:
                    self.duplicates += 1
                    continue
                self._seen.add(sample.timestamp)
                fh.write(format_telemetry_line(sample) + "\n")
                appended += 1
        return appended


def ingest_and_persist(samples: Iterable[TelemetrySample], path: str | Path) -> tuple[int, int]:
    """One-shot ingest: returns (appended, duplicates_dropped)."""
    log = TelemetryLog(path)
    appended = log.append(samples)
    return appended, log.duplicates


# ---------------------------------------------------------------------------
# Synthetic ground truth.
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class TaskArrivalModel:
    """Poisson arrivals with uniform marginals for the job shape."""

    rate_per_hour: float
    duration_range_s: tuple[int, int]
    core_request_range: tuple[int, int]
    per_core_demand_range_mhz: tuple[float, float]
    fragments_range: tuple[int, int] = (1, 3)


@dataclass(frozen=True, slots=True)
class GroundTruthProfile:
    """Recipe for a synthetic cluster with a known true power curve.

    ``true_r`` is either a constant or a step schedule of (from_ts, r) pairs
    sorted by from_ts with the first at 0. Noise is Gaussian per sample on
    power only, clamped at zero watts; ``noise_frac_of_mean`` resolves the
    stddev against the noiseless mean power when set.
    """

    name: str
    topology: Topology
    true_r: float | tuple[tuple[int, float], ...]
    noise_stddev: float = 0.0
    noise_frac_of_mean: float | None = None
    arrivals: TaskArrivalModel | None = None

    def r_at(self, ts: int) -> float:
        if isinstance(self.true_r, (int, float)):
            return float(self.true_r)
        current: float | None = None
        for from_ts, r in self.true_r:
            if ts >= from_ts:
                current = r
            else:
                break
        if current is None:
            raise DomainError(f"true_r schedule does not cover ts {ts}")
        return current


@dataclass(frozen=True, slots=True)
class SynthesisResult:
    workload: tuple[WorkloadTask, ...]
    truth: tuple[TelemetrySample, ...]
    noise_stddev: float
    mean_power: float
    mean_utilization: float


def generate_workload(
    model: TaskArrivalModel, horizon: int, seed: int | str
) -> list[WorkloadTask]:
    """Draw a Poisson workload over [0, horizon). Deterministic per seed."""
    rng = random.Random(f"{seed}:workload")
    tasks: list[WorkloadTask] = []
    mean_gap = 3600.0 / model.rate_per_hour
    t = 0.0
    index = 0
    while True:
        t += rng.expovariate(1.0 / mean_gap)
        submit = int(t)
        if submit >= horizon:
            break
        cores = rng.randint(*model.core_request_range)
        duration = rng.randint(*model.duration_range_s)
        max_fragments = max(1, min(model.fragments_range[1], duration // 300))
        n_fragments = rng.randint(min(model.fragments_range[0], max_fragments), max_fragments)
        cuts = sorted(rng.sample(range(1, duration), n_fragments - 1)) if n_fragments > 1 else []
        bounds = [0, *cuts, duration]
        fragments = tuple(
            Fragment(
                duration=bounds[i + 1] - bounds[i],
                cpu_demand=cores * rng.uniform(*model.per_core_demand_range_mhz),
            )
            for i in range(n_fragments)
        )
        tasks.append(
            WorkloadTask(
                id=f"task-{index:06d}",
                submit_time=submit,
                core_request=cores,
                fragments=fragments,
            )
        )
        index += 1
    return validate_workload(tasks)


def synthesize_ground_truth(
    profile: GroundTruthProfile,
    horizon: int,
    seed: int | str,
    *,
    workload: Sequence[WorkloadTask] | None = None,
    sampling_granularity: int = DEFAULT_SAMPLING_GRANULARITY_S,
    window_duration: int = DEFAULT_WINDOW_DURATION_S,
) -> SynthesisResult:
    """Run the reference engine under the profile's true exponent schedule.

    The emitted telemetry is exactly what the engine would predict with the
    true exponent at each tick (utilization does not depend on the exponent),
    plus optional noise. Zero-noise output is therefore bit-identical to a
    candidate replay at the true exponent, which is what makes exact recovery
    testable.
    """
    if workload is None:
        if profile.arrivals is None:
            raise InvalidProfile(f"profile {profile.name!r} has no arrival model and no workload")
        workload = generate_workload(profile.arrivals, horizon, seed)
    sim_config = SimConfig(topology=profile.topology, sampling_granularity=sampling_granularity)
    state = SimState.initial(profile.topology)
    rows: list[tuple[int, Mapping[str, float], float]] = []
    remaining = sorted(workload, key=lambda t: (t.submit_time, t.id))
    cursor = 0
    for window in windows_spanning(window_duration, horizon):
        batch = []
        while cursor < len(remaining) and remaining[cursor].submit_time < window.end:
            batch.append(remaining[cursor])
            cursor += 1
        result = simulate_window(
            sim_config, window, state, batch,
            PowerModelParams(p_idle=0.0, p_max=0.0, r=profile.r_at(window.start)),
        )
        state = result.state
        for (ts, u_by_host), sample in zip(result.host_utilization, result.predictions):
            rows.append((ts, u_by_host, sample.cpu_utilization))

    hosts = profile.topology.hosts
    noiseless: list[float] = []
    for ts, u_by_host, _ in rows:
        params_by_host = sim_config.effective_params(profile.r_at(ts))
        noiseless.append(
            math.fsum(host_power(params_by_host[h.id], u_by_host.get(h.id, 0.0)) for h in hosts)
        )
    mean_power = math.fsum(noiseless) / len(noiseless) if noiseless else 0.0
    stddev = profile.noise_stddev
    if profile.noise_frac_of_mean is not None:
        stddev = profile.noise_frac_of_mean * mean_power

    noise_rng = random.Random(f"{seed}:noise")
    truth: list[TelemetrySample] = []
    for (ts, _, cluster_util), watts in zip(rows, noiseless):
        observed = watts if stddev == 0.0 else max(0.0, watts + noise_rng.gauss(0.0, stddev))
        truth.append(
            TelemetrySample(
                timestamp=ts,
                power_draw=observed,
                cpu_utilization=cluster_util,
                source=SampleSource.GROUND_TRUTH,
            )
        )
    mean_util = (
        math.fsum(s.cpu_utilization for s in truth) / len(truth) if truth else 0.0
    )
    return SynthesisResult(
        workload=tuple(remaining),
        truth=tuple(truth),
        noise_stddev=stddev,
        mean_power=mean_power,
        mean_utilization=mean_util,
    )


# ---------------------------------------------------------------------------
# Built-in synthesis profiles for the CLI and the acceptance scenarios.
# ---------------------------------------------------------------------------


def _preset_topology(hosts: int = 20) -> Topology:
    from .model import HostSpec  # local import keeps the module header honest

    return Topology(
        name=f"synth-{hosts}x16",
        hosts=tuple(
            HostSpec(
                id=f"host-{i:03d}",
                core_count=16,
                core_frequency=2100.0,
                memory=65536,
                power=PowerModelParams(p_idle=60.0, p_max=480.0, r=2.0),
            )
            for i in range(hosts)
        ),
    )


def _steady_arrivals(hosts: int, rate_per_hour_at_20: float = 13.2) -> TaskArrivalModel:
    # arrival rate tracks cluster size so the utilization level a profile
    # promises holds for any host count
    return TaskArrivalModel(
        rate_per_hour=rate_per_hour_at_20 * hosts / 20.0,
        duration_range_s=(7200, 21600),
        core_request_range=(2, 8),
        per_core_demand_range_mhz=(900.0, 1900.0),
        fragments_range=(1, 4),
    )


def builtin_profile(name: str, days: int, hosts: int = 20) -> GroundTruthProfile:
    """Named synthesis presets.

    steady        stationary load around 55% utilization, constant exponent
    drift-step    same load, true exponent steps 2.0 -> 3.0 at day 3
    underutilized sparse load around 15-20% utilization
    constant-load no randomness: every host pinned at 50% for the horizon
    """
    if days <= 0:
        raise InvalidProfile("days must be positive")
    topology = _preset_topology(hosts)
    if name == "steady":
        return GroundTruthProfile(
            name=name, topology=topology, true_r=2.5,
            noise_frac_of_mean=0.02, arrivals=_steady_arrivals(hosts),
        )
    if name == "drift-step":
        step_at = min(3, max(1, days - 1)) * 86400
        return GroundTruthProfile(
            name=name, topology=topology,
            true_r=((0, 2.0), (step_at, 3.0)),
            noise_frac_of_mean=0.02, arrivals=_steady_arrivals(hosts),
        )
    if name == "underutilized":
        return GroundTruthProfile(
            name=name, topology=topology, true_r=2.5,
            noise_frac_of_mean=0.02,
            arrivals=_steady_arrivals(hosts, rate_per_hour_at_20=4.0),
        )
    if name == "constant-load":
        return GroundTruthProfile(name=name, topology=topology, true_r=2.0)
    raise InvalidProfile(f"unknown profile {name!r}")


def constant_load_workload(topology: Topology, horizon: int, utilization: float = 0.5) -> list[WorkloadTask]:
    """One full-horizon task per host pinning it at a fixed utilization."""
    if not (0.0 < utilization <= 1.0):
        raise DomainError("utilization must be in (0, 1]")
    tasks = [
        WorkloadTask(
            id=f"pin-{host.id}",
            submit_time=0,
            core_request=host.core_count,
            fragments=(Fragment(duration=horizon, cpu_demand=host.capacity_mhz * utilization),),
        )
        for host in topology.hosts
    ]
    return validate_workload(tasks)

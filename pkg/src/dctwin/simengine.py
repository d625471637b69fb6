"""Discrete-event cluster simulator.

The engine replays a workload trace against a topology one window at a time
and emits the cluster's predicted telemetry at every sampling tick. Events
occurring at the same instant are processed in a fixed rank order, fragment
completions first, then task arrivals, then the sampling tick, then the
window boundary, with ties inside a rank broken by task id. That ordering,
plus exact rational bookkeeping of fragment progress, makes every run
bit-reproducible and lets a brute-force one-second-stepper reproduce the
engine's output exactly.

Scheduling model:

* A task occupies ``core_request`` cores on exactly one host from placement
  until its last fragment completes (all-or-nothing, no migration).
* Placement is first-fit in topology order. Tasks that do not fit wait in a
  FIFO queue; every queued task gets a placement attempt whenever some task
  completes.
* A host's utilization is total fragment demand over capacity, clamped to 1.
  When demand exceeds capacity every fragment on the host slows by the same
  processor-sharing factor; fragments needing zero CPU advance in wall time.
* Progress is tracked in exact fractions of nominal seconds and a fragment
  finishes at the first whole second its cumulative progress covers its
  duration, which is what a per-second interpreter observes.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Sequence

from .model import (
    DCTwinError,
    DEFAULT_FLOPS_PER_CYCLE,
    DEFAULT_SAMPLING_GRANULARITY_S,
    DomainError,
    PowerModelParams,
    SampleSource,
    TelemetrySample,
    Topology,
    Window,
    WorkloadTask,
)
from .power import host_power

_ONE = Fraction(1)


class TaskUnschedulable(DCTwinError):
    """A task requests more cores than any host in the topology has."""


class ClockRegression(DCTwinError):
    """An event time fell behind the simulation clock. Internal corruption."""


@dataclass(frozen=True, slots=True, eq=False)
class SimConfig:
    """Engine knobs that stay fixed for a whole run."""

    topology: Topology
    sampling_granularity: int = DEFAULT_SAMPLING_GRANULARITY_S
    flops_per_cycle: float = DEFAULT_FLOPS_PER_CYCLE
    # Per-host replacement of the measured power endpoints, e.g. for what-if
    # experiments. The calibrated exponent still comes from the window params.
    power_params_override: Mapping[str, PowerModelParams] | None = None
    # Optional per-event callback for debug traces.
    trace: Callable[[dict[str, Any]], None] | None = None

    def __post_init__(self) -> None:
        if self.sampling_granularity <= 0:
            raise DomainError("sampling_granularity must be positive")
        if not self.flops_per_cycle > 0.0:
            raise DomainError("flops_per_cycle must be positive")

    def effective_params(self, r: float) -> dict[str, PowerModelParams]:
        out: dict[str, PowerModelParams] = {}
        override = self.power_params_override or {}
        for h in self.topology.hosts:
            base = override.get(h.id, h.power)
            out[h.id] = PowerModelParams(p_idle=base.p_idle, p_max=base.p_max, r=r)
        return out


class _Running:
    """A placed task: which host, which fragment, how far into it."""

    __slots__ = ("task", "host_index", "fragment_index", "progress", "demand")

    def __init__(self, task: WorkloadTask, host_index: int):
        self.task = task
        self.host_index = host_index
        self.fragment_index = 0
        self.progress = Fraction(0)  # nominal seconds completed of the current fragment
        self.demand = Fraction(task.fragments[0].cpu_demand)

    @property
    def fragment_duration(self) -> int:
        return self.task.fragments[self.fragment_index].duration

    def clone(self) -> "_Running":
        other = _Running.__new__(_Running)
        other.task = self.task
        other.host_index = self.host_index
        other.fragment_index = self.fragment_index
        other.progress = self.progress
        other.demand = self.demand
        return other


class _HostState:
    __slots__ = ("spec", "capacity", "free_cores", "running")

    def __init__(self, spec):
        self.spec = spec
        self.capacity = Fraction(spec.capacity_mhz)
        self.free_cores = spec.core_count
        self.running: list[_Running] = []

    def speed_factor(self) -> Fraction:
        """Processor-sharing slowdown applied to every demanding fragment."""
        total = sum((rt.demand for rt in self.running), Fraction(0))
        if total <= self.capacity:
            return _ONE
        return self.capacity / total

    def demand_mhz(self) -> float:
        return math.fsum(float(rt.demand) for rt in self.running)

    def clone(self) -> "_HostState":
        other = _HostState.__new__(_HostState)
        other.spec = self.spec
        other.capacity = self.capacity
        other.free_cores = self.free_cores
        other.running = [rt.clone() for rt in self.running]
        return other


class SimState:
    """Mutable cross-window carryover: the clock, every placed task's exact
    progress, and the FIFO queue of admitted-but-unplaced tasks.

    simulate_window consumes the state it is given and returns it advanced;
    callers that need the pre-window state must clone() first.
    """

    __slots__ = ("clock", "hosts", "pending")

    def __init__(self, clock: int, hosts: list[_HostState], pending: deque[WorkloadTask]):
        self.clock = clock
        self.hosts = hosts
        self.pending = pending

    @classmethod
    def initial(cls, topology: Topology, clock: int = 0) -> "SimState":
        return cls(clock=clock, hosts=[_HostState(h) for h in topology.hosts], pending=deque())

    def clone(self) -> "SimState":
        return SimState(
            clock=self.clock,
            hosts=[h.clone() for h in self.hosts],
            pending=deque(self.pending),
        )

    @property
    def pending_queue(self) -> tuple[WorkloadTask, ...]:
        return tuple(self.pending)

    @property
    def running_tasks(self) -> dict[str, tuple[str, ...]]:
        """host id -> ids of tasks currently placed there."""
        return {h.spec.id: tuple(rt.task.id for rt in h.running) for h in self.hosts}

    # -- scheduling primitives -------------------------------------------

    def _try_place(self, task: WorkloadTask) -> bool:
        for idx, host in enumerate(self.hosts):
            if host.free_cores >= task.core_request:
                host.free_cores -= task.core_request
                host.running.append(_Running(task, idx))
                return True
        return False

    def _rescan_pending(self) -> list[WorkloadTask]:
        """Give every queued task one placement attempt, in FIFO order."""
        placed: list[WorkloadTask] = []
        still_waiting: deque[WorkloadTask] = deque()
        while self.pending:
            task = self.pending.popleft()
            if self._try_place(task):
                placed.append(task)
            else:
                still_waiting.append(task)
        self.pending = still_waiting
        return placed


@dataclass(frozen=True, slots=True)
class SimWindowResult:
    """Predicted telemetry for one window plus the advanced carryover."""

    window: Window
    predictions: tuple[TelemetrySample, ...]
    performance_tflops: tuple[tuple[int, float], ...]
    # Per-tick per-host utilization snapshots; the calibrator's candidate
    # probes recompute power from these without rerunning the schedule.
    host_utilization: tuple[tuple[int, dict[str, float]], ...]
    completed: tuple[tuple[str, int], ...]  # (task id, completion ts)
    state: SimState


def cluster_tflops(
    topology: Topology,
    utilization_by_host: Mapping[str, float],
    flops_per_cycle: float = DEFAULT_FLOPS_PER_CYCLE,
) -> float:
    """Delivered floating-point throughput at one instant.

    Each host contributes utilization x cores x frequency(MHz) x 1e6 cycles
    x flops per cycle, reported in TFLOPs.
    """
    if not flops_per_cycle > 0.0:
        raise DomainError("flops_per_cycle must be positive")
    terms = []
    for h in topology.hosts:
        u = utilization_by_host.get(h.id, 0.0)
        if not (0.0 <= u <= 1.0):
            raise DomainError(f"utilization must be in [0, 1], got {u} for host {h.id}")
        terms.append(u * h.core_count * h.core_frequency * flops_per_cycle)
    return math.fsum(terms) * 1e6 / 1e12


def simulate_window(
    config: SimConfig,
    window: Window,
    state: SimState,
    tasks: Sequence[WorkloadTask],
    params: PowerModelParams,
) -> SimWindowResult:
    """Advance the cluster through one window.

    ``tasks`` are the arrivals of this window (submit_time inside it);
    earlier arrivals are already part of ``state``. Only the exponent of
    ``params`` steers the power curve; each host keeps its own measured
    endpoints. Emits exactly duration/granularity samples, timestamps at
    window.start + i * granularity.
    """
    if state.clock != window.start:
        raise ClockRegression(
            f"carryover clock {state.clock} does not match window start {window.start}"
        )
    granularity = config.sampling_granularity
    if window.duration % granularity != 0:
        raise DomainError(
            f"window duration {window.duration} not a multiple of granularity {granularity}"
        )
    if len(state.hosts) != len(config.topology.hosts):
        raise DomainError("carryover state does not match the configured topology")

    max_cores = max(h.core_count for h in config.topology.hosts)
    arrivals = sorted(tasks, key=lambda t: (t.submit_time, t.id))
    for task in arrivals:
        if task.core_request > max_cores:
            raise TaskUnschedulable(
                f"task {task.id!r} requests {task.core_request} cores, largest host has {max_cores}"
            )
        if not window.contains(task.submit_time):
            raise DomainError(
                f"task {task.id!r} submit_time {task.submit_time} outside window [{window.start}, {window.end})"
            )

    params_by_host = config.effective_params(params.r)
    trace = config.trace

    predictions: list[TelemetrySample] = []
    performance: list[tuple[int, float]] = []
    host_utilization: list[tuple[int, dict[str, float]]] = []
    completed: list[tuple[str, int]] = []

    arrival_idx = 0
    next_tick: int | None = window.start

    def advance_to(target: int) -> None:
        dt = target - state.clock
        if dt < 0:
            raise ClockRegression(f"event time {target} behind clock {state.clock}")
        if dt == 0:
            return
        for host in state.hosts:
            if not host.running:
                continue
            factor = host.speed_factor()
            for rt in host.running:
                rate = _ONE if rt.demand == 0 else factor
                rt.progress += rate * dt
        state.clock = target

    def process_completions() -> None:
        due: list[_Running] = []
        for host in state.hosts:
            for rt in host.running:
                if rt.progress >= rt.fragment_duration:
                    due.append(rt)
        due.sort(key=lambda rt: rt.task.id)
        for rt in due:
            task = rt.task
            rt.fragment_index += 1
            if rt.fragment_index < len(task.fragments):
                # Next phase starts fresh; overshoot inside the completion
                # second is discarded, matching the per-second interpreter.
                rt.progress = Fraction(0)
                rt.demand = Fraction(task.fragments[rt.fragment_index].cpu_demand)
                if trace:
                    trace({"ts": state.clock, "event": "fragment_complete", "task": task.id,
                           "next_fragment": rt.fragment_index})
                continue
            host = state.hosts[rt.host_index]
            host.running.remove(rt)
            host.free_cores += task.core_request
            completed.append((task.id, state.clock))
            if trace:
                trace({"ts": state.clock, "event": "task_complete", "task": task.id,
                       "host": host.spec.id})
            for placed in state._rescan_pending():
                if trace:
                    trace({"ts": state.clock, "event": "task_placed", "task": placed.id})

    def next_completion_time() -> int | None:
        best: int | None = None
        for host in state.hosts:
            if not host.running:
                continue
            factor = host.speed_factor()
            for rt in host.running:
                rate = _ONE if rt.demand == 0 else factor
                remaining = rt.fragment_duration - rt.progress
                if remaining <= 0:
                    return state.clock
                when = state.clock + math.ceil(remaining / rate)
                if best is None or when < best:
                    best = when
        return best

    def emit_sample() -> None:
        ts = state.clock
        u_by_host: dict[str, float] = {}
        used_terms: list[float] = []
        for host in state.hosts:
            cap = host.spec.capacity_mhz
            demand = host.demand_mhz()
            u_by_host[host.spec.id] = min(1.0, demand / cap)
            used_terms.append(min(demand, cap))
        total_cap = math.fsum(h.spec.capacity_mhz for h in state.hosts)
        cluster_util = min(1.0, math.fsum(used_terms) / total_cap)
        watts = math.fsum(
            host_power(params_by_host[h.spec.id], u_by_host[h.spec.id]) for h in state.hosts
        )
        predictions.append(
            TelemetrySample(
                timestamp=ts,
                power_draw=watts,
                cpu_utilization=cluster_util,
                source=SampleSource.PREDICTION,
            )
        )
        performance.append((ts, cluster_tflops(config.topology, u_by_host, config.flops_per_cycle)))
        host_utilization.append((ts, u_by_host))
        if trace:
            trace({"ts": ts, "event": "sample", "power_w": watts, "cpu_util": cluster_util})

    while True:
        horizon = window.end
        candidates = [horizon]
        if arrival_idx < len(arrivals):
            candidates.append(arrivals[arrival_idx].submit_time)
        if next_tick is not None:
            candidates.append(next_tick)
        tc = next_completion_time()
        if tc is not None:
            candidates.append(tc)
        target = min(candidates)
        advance_to(target)

        process_completions()

        while arrival_idx < len(arrivals) and arrivals[arrival_idx].submit_time == state.clock:
            task = arrivals[arrival_idx]
            arrival_idx += 1
            if state._try_place(task):
                if trace:
                    trace({"ts": state.clock, "event": "task_placed", "task": task.id})
            else:
                state.pending.append(task)
                if trace:
                    trace({"ts": state.clock, "event": "task_queued", "task": task.id})

        if next_tick is not None and state.clock == next_tick:
            emit_sample()
            next_tick += granularity
            if next_tick >= window.end:
                next_tick = None

        if state.clock == window.end:
            break

    return SimWindowResult(
        window=window,
        predictions=tuple(predictions),
        performance_tflops=tuple(performance),
        host_utilization=tuple(host_utilization),
        completed=tuple(completed),
        state=state,
    )

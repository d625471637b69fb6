"""Shared fixtures and scenario builders."""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Any, Sequence

import pytest

# Verdict lines queued by the acceptance suite; re-emitted after the run so
# they stay visible even though test stdout is captured.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from dctwin.model import (
    Fragment,
    HostSpec,
    PowerModelParams,
    TelemetrySample,
    Topology,
    WorkloadTask,
    write_topology_file,
    write_workload_csv,
)
from dctwin.telemetry import write_telemetry_file


def make_host(
    host_id: str = "h0",
    cores: int = 4,
    freq: float = 2000.0,
    p_idle: float = 100.0,
    p_max: float = 400.0,
    r: float = 2.0,
    memory: int = 4096,
) -> HostSpec:
    return HostSpec(
        id=host_id,
        core_count=cores,
        core_frequency=freq,
        memory=memory,
        power=PowerModelParams(p_idle=p_idle, p_max=p_max, r=r),
    )


def make_topology(*hosts: HostSpec, name: str = "test") -> Topology:
    if not hosts:
        hosts = (make_host(),)
    return Topology(name=name, hosts=tuple(hosts))


@pytest.fixture
def single_host_topology() -> Topology:
    return make_topology(make_host())


@pytest.fixture
def two_host_topology() -> Topology:
    return make_topology(
        make_host("h0", cores=4, freq=2000.0),
        make_host("h1", cores=2, freq=1500.0, p_idle=80.0, p_max=250.0),
    )


def random_oracle_scenario(rng: random.Random, max_tasks: int = 3, max_hosts: int = 1):
    """A small random cluster + workload for engine-vs-interpreter checks.

    Returns (topology, window_duration, granularity, tasks, params). Demands
    may be zero or overcommit the host; submit times span the first window.
    """
    n_hosts = rng.randint(1, max_hosts)
    hosts = tuple(
        make_host(
            host_id=f"h{i}",
            cores=rng.randint(1, 4),
            freq=rng.choice([500.0, 1000.0, 1700.0, 2400.0]),
            p_idle=rng.uniform(20.0, 150.0),
            p_max=rng.uniform(200.0, 500.0),
        )
        for i in range(n_hosts)
    )
    topology = make_topology(*hosts)
    granularity = rng.choice([5, 20, 60])
    window_duration = granularity * rng.randint(2, 8)
    max_cores = max(h.core_count for h in hosts)

    tasks = []
    for index in range(rng.randint(0, max_tasks)):
        fragments = tuple(
            Fragment(
                duration=rng.randint(1, window_duration * 2),
                # zero demand and overcommit both legal; both paths matter
                cpu_demand=rng.choice([0.0, rng.uniform(1.0, 6000.0)]),
            )
            for _ in range(rng.randint(1, 3))
        )
        tasks.append(
            WorkloadTask(
                id=f"t{index:02d}",
                submit_time=rng.randint(0, window_duration - 1),
                core_request=rng.randint(1, max_cores),
                fragments=fragments,
            )
        )
    params = PowerModelParams(
        p_idle=0.0, p_max=0.0, r=rng.choice([0.5, 1.0, 1.75, 2.0, 3.0, 4.0])
    )
    return topology, window_duration, granularity, tasks, params


def write_scenario(
    root: Path,
    topology: Topology,
    workload: Sequence[WorkloadTask],
    truth: Sequence[TelemetrySample],
    *,
    window_duration: int = 3600,
    granularity: int = 300,
    horizon: int | None = None,
    acceleration: str = "max",
    initial_r: float = 2.0,
    seed: int = 0,
    extra: dict[str, Any] | None = None,
) -> Path:
    """Write a complete runnable scenario directory; returns the config path."""
    root.mkdir(parents=True, exist_ok=True)
    write_topology_file(topology, root / "topology.json")
    write_workload_csv(workload, root / "workload.csv")
    write_telemetry_file(truth, root / "telemetry.jsonl")
    config: dict[str, Any] = {
        "topology": "topology.json",
        "workload": "workload.csv",
        "telemetry": "telemetry.jsonl",
        "workspace": "workspace",
        "window_duration_s": window_duration,
        "sampling_granularity_s": granularity,
        "acceleration": acceleration,
        "initial_r": initial_r,
        "seed": seed,
    }
    if horizon is not None:
        config["horizon_s"] = horizon
    if extra:
        config.update(extra)
    path = root / "config.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return path

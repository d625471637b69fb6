"""Host power curve and the energy/efficiency arithmetic built on it.

The curve interpolates between the host's measured idle and max draw with a
superlinear correction term:

    P(u) = P_idle + (P_max - P_idle) * (2u - u^r)

It is exact at both endpoints by construction and tunable through the single
exponent ``r``. Note the curve is not monotone for every admissible ``r``
and overshoots P_max in the interior for r > 2; both are properties of the
fitted model, not bugs, and the tests pin them down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .model import (
    DomainError,
    PowerModelParams,
    SampleSource,
    TelemetrySample,
    Topology,
    Window,
    validate_power_params,
)


class IrregularSeries(DomainError):
    """Sample timestamps were not equally spaced by the stated granularity."""


class MisalignedSeries(DomainError):
    """Two series that must share timestamps did not."""


def host_power(params: PowerModelParams, utilization: float) -> float:
    """Wall power of one host at the given utilization.

    Written as a convex-style blend rather than ``p_idle + span * frac`` so
    that u=0 returns exactly p_idle and u=1 exactly p_max, with no floating
    point residue.
    """
    validate_power_params(params)
    if not (0.0 <= utilization <= 1.0):
        raise DomainError(f"utilization must be in [0, 1], got {utilization}")
    frac = 2.0 * utilization - utilization**params.r
    return params.p_idle * (1.0 - frac) + params.p_max * frac


def predict_cluster_power(
    topology: Topology,
    utilization_by_host: Mapping[str, float],
    params_by_host: Mapping[str, PowerModelParams],
) -> float:
    """Sum of host powers. Hosts absent from the utilization map idle.

    ``params_by_host`` must cover every host; the caller owns the decision
    of which exponent each host runs with. math.fsum keeps the total
    independent of summation order.
    """
    terms = []
    for host in topology.hosts:
        params = params_by_host[host.id]
        u = utilization_by_host.get(host.id, 0.0)
        terms.append(host_power(params, u))
    return math.fsum(terms)


def uniform_params(topology: Topology, r: float) -> dict[str, PowerModelParams]:
    """Per-host params with each host's own endpoints and a shared exponent."""
    return {
        h.id: PowerModelParams(p_idle=h.power.p_idle, p_max=h.power.p_max, r=r)
        for h in topology.hosts
    }


def cluster_params(topology: Topology, r: float) -> PowerModelParams:
    """Aggregate endpoints for reporting: cluster idle/max are host sums."""
    return PowerModelParams(
        p_idle=math.fsum(h.power.p_idle for h in topology.hosts),
        p_max=math.fsum(h.power.p_max for h in topology.hosts),
        r=r,
    )


def _check_spacing(timestamps: Sequence[int], granularity: int) -> None:
    if granularity <= 0:
        raise DomainError("granularity must be positive")
    for prev, cur in zip(timestamps, timestamps[1:]):
        if cur - prev != granularity:
            raise IrregularSeries(
                f"expected spacing {granularity}s, got {cur - prev}s at ts {cur}"
            )


def energy_kwh(samples: Sequence[TelemetrySample], granularity: int) -> float:
    """Left-Riemann energy of a power series in kWh.

    Each sample's wattage is held for one granularity interval. The division
    happens once at the end, so twelve 1000 W samples at 300 s granularity
    come out as exactly 1.0 kWh.
    """
    _check_spacing([s.timestamp for s in samples], granularity)
    return math.fsum(s.power_draw for s in samples) * granularity / 3.6e6


@dataclass(frozen=True, slots=True)
class EnergyAccumulator:
    """Energy integrated over one window of samples."""

    window: Window
    samples: tuple[TelemetrySample, ...]
    kwh: float

    @classmethod
    def over_window(
        cls, window: Window, samples: Sequence[TelemetrySample], granularity: int
    ) -> "EnergyAccumulator":
        inside = tuple(s for s in samples if window.contains(s.timestamp))
        return cls(window=window, samples=inside, kwh=energy_kwh(inside, granularity))


def hourly_efficiency(
    tflops_series: Sequence[tuple[int, float]],
    power_series: Sequence[TelemetrySample],
    granularity: int,
) -> list[tuple[int, float]]:
    """TFLOPs per kWh, bucketed by wall-clock hour.

    Both series must be aligned on identical timestamps. A bucket's value is
    the mean TFLOPs of its samples divided by the energy integrated over the
    same samples. Buckets whose energy is zero are omitted: the ratio is
    undefined there, and reporting a fake zero would poison averages.
    """
    if [ts for ts, _ in tflops_series] != [s.timestamp for s in power_series]:
        raise MisalignedSeries("tflops and power series must share timestamps")
    buckets: dict[int, tuple[list[float], list[float]]] = {}
    for (ts, tflops), sample in zip(tflops_series, power_series):
        hour = ts - ts % 3600
        tf, pw = buckets.setdefault(hour, ([], []))
        tf.append(tflops)
        pw.append(sample.power_draw)
    out: list[tuple[int, float]] = []
    for hour in sorted(buckets):
        tf, pw = buckets[hour]
        kwh = math.fsum(pw) * granularity / 3.6e6
        if kwh == 0.0:
            continue
        mean_tflops = math.fsum(tf) / len(tf)
        out.append((hour, mean_tflops / kwh))
    return out

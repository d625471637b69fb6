"""Accuracy metrics and the self-calibration grid search.

The calibrator compares predicted and observed cluster power over a trailing
history span, evaluates a grid of candidate exponents by replaying that
history, and hands the best candidate to the orchestrator for the next
window. Scheduling inside the engine does not depend on the exponent, so a
candidate replay only has to recompute power over the recorded per-tick host
utilizations; ``make_resim_probe`` provides the full re-simulation variant
and the tests pin both to identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

from .model import (
    CalibrationResult,
    DCTwinError,
    DomainError,
    PowerModelParams,
    R_MAX,
    R_MIN,
    SampleSource,
    TelemetrySample,
    Window,
    WorkloadTask,
)
from .power import cluster_params, host_power
from .simengine import SimConfig, SimState, simulate_window

# Ground-truth watt readings below this are meter noise around zero; a
# relative error against them is meaningless and a single such sample can
# blow MAPE up unboundedly.
MIN_TRUTH_POWER_W = 1.0

DEFAULT_GRID_START = R_MIN
DEFAULT_GRID_STOP = R_MAX
DEFAULT_GRID_STEP = 0.25
DEFAULT_MIN_HISTORY_SAMPLES = 6
DEFAULT_HISTORY_WINDOWS = 4


class NoOverlap(DCTwinError):
    """No usable timestamp pairs remained after matching and filtering."""


class CalibrationSkipped(DCTwinError):
    """The search refused to run; the caller keeps its current params."""


class InsufficientHistory(CalibrationSkipped):
    """Fewer usable ground-truth samples than the configured minimum."""


class DegenerateHistory(CalibrationSkipped):
    """Utilization never left {0, 1}; the exponent is unidentifiable there."""


class AllCandidatesFailed(DCTwinError):
    """Every grid candidate errored; nothing to select."""


class BiasDirection(str, Enum):
    OVER = "over"
    UNDER = "under"
    EXACT = "exact"


def default_grid(
    start: float = DEFAULT_GRID_START,
    stop: float = DEFAULT_GRID_STOP,
    step: float = DEFAULT_GRID_STEP,
) -> tuple[float, ...]:
    """Inclusive arithmetic grid of candidate exponents."""
    if step <= 0:
        raise DomainError("grid step must be positive")
    values = []
    k = 0
    while True:
        value = start + k * step
        if value > stop + 1e-12:
            break
        values.append(value)
        k += 1
    grid = tuple(values)
    validate_grid(grid)
    return grid


def validate_grid(grid: Sequence[float]) -> None:
    if not grid:
        raise DomainError("candidate grid is empty")
    for r in grid:
        if not (R_MIN <= r <= R_MAX):
            raise DomainError(f"candidate r={r} outside [{R_MIN}, {R_MAX}]")


def match_series(
    real: Sequence[TelemetrySample],
    sim: Sequence[TelemetrySample],
    min_power: float = MIN_TRUTH_POWER_W,
) -> list[tuple[int, float, float]]:
    """Pair samples by timestamp, dropping ground truth below ``min_power``.

    Returns (ts, real watts, sim watts) sorted by timestamp.
    """
    sim_by_ts = {s.timestamp: s.power_draw for s in sim}
    pairs = []
    for r in real:
        if r.power_draw < min_power:
            continue
        s = sim_by_ts.get(r.timestamp)
        if s is not None:
            pairs.append((r.timestamp, r.power_draw, s))
    pairs.sort(key=lambda p: p[0])
    return pairs


def mape(
    real: Sequence[TelemetrySample],
    sim: Sequence[TelemetrySample],
    min_power: float = MIN_TRUTH_POWER_W,
) -> float:
    """Mean absolute percentage error of predicted vs observed power.

    Average of |real - sim| / real over matched timestamps, in percent.
    """
    pairs = match_series(real, sim, min_power)
    if not pairs:
        raise NoOverlap("no matched samples at or above the power floor")
    return math.fsum(abs(r - s) / r for _, r, s in pairs) / len(pairs) * 100.0


@dataclass(frozen=True, slots=True)
class BiasReport:
    """Per-timestamp direction of the prediction error plus the headline
    fraction of samples where the model underestimated real power."""

    points: tuple[tuple[int, BiasDirection], ...]
    over: int
    under: int
    exact: int

    @property
    def total(self) -> int:
        return self.over + self.under + self.exact

    @property
    def fraction_underestimated(self) -> float:
        if self.total == 0:
            raise DomainError("bias undefined over zero samples")
        return self.under / self.total

    @property
    def fraction_overestimated(self) -> float:
        if self.total == 0:
            raise DomainError("bias undefined over zero samples")
        return self.over / self.total


def estimation_bias(
    real: Sequence[TelemetrySample], sim: Sequence[TelemetrySample]
) -> BiasReport:
    """Classify each matched timestamp: did the model over- or undershoot?"""
    pairs = match_series(real, sim, min_power=0.0)
    if not pairs:
        raise NoOverlap("no matched samples")
    points: list[tuple[int, BiasDirection]] = []
    over = under = exact = 0
    for ts, r, s in pairs:
        if s > r:
            direction = BiasDirection.OVER
            over += 1
        elif s < r:
            direction = BiasDirection.UNDER
            under += 1
        else:
            direction = BiasDirection.EXACT
            exact += 1
        points.append((ts, direction))
    return BiasReport(points=tuple(points), over=over, under=under, exact=exact)


def threshold_compliance(mape_values: Iterable[float], threshold: float = 10.0) -> float:
    """Fraction of windows whose MAPE stayed below the threshold."""
    values = list(mape_values)
    if not values:
        raise DomainError("compliance undefined over zero windows")
    if threshold <= 0:
        raise DomainError("threshold must be positive")
    return sum(1 for v in values if v < threshold) / len(values)


# ---------------------------------------------------------------------------
# Candidate probes: ways of answering "what would the twin have predicted
# over the history span with exponent r?"
# ---------------------------------------------------------------------------

Probe = Callable[[float], Sequence[TelemetrySample]]


@dataclass(frozen=True, slots=True)
class RecordedHistory:
    """Replayable history captured from live windows.

    Stores per-tick per-host utilization, which fully determines predicted
    power for any exponent because scheduling never depends on it. Probing a
    candidate is then a pure power recomputation over identical utilization.
    """

    sim_config: SimConfig
    rows: tuple[tuple[int, Mapping[str, float], float], ...]  # (ts, u by host, cluster util)
    span: tuple[int, int]  # [start, end)

    def probe(self, r: float) -> list[TelemetrySample]:
        params_by_host = self.sim_config.effective_params(r)
        hosts = self.sim_config.topology.hosts
        out = []
        for ts, u_by_host, cluster_util in self.rows:
            watts = math.fsum(
                host_power(params_by_host[h.id], u_by_host.get(h.id, 0.0)) for h in hosts
            )
            out.append(
                TelemetrySample(
                    timestamp=ts,
                    power_draw=watts,
                    cpu_utilization=cluster_util,
                    source=SampleSource.PREDICTION,
                )
            )
        return out


def make_resim_probe(
    sim_config: SimConfig,
    base_state: SimState,
    plan: Sequence[tuple[Window, Sequence[WorkloadTask]]],
) -> Probe:
    """Full re-simulation probe: replays every history window per candidate,
    starting from a clone of the recorded carryover at the history start."""

    def probe(r: float) -> list[TelemetrySample]:
        state = base_state.clone()
        samples: list[TelemetrySample] = []
        for window, tasks in plan:
            result = simulate_window(
                sim_config, window, state, tasks, cluster_params(sim_config.topology, r)
            )
            state = result.state
            samples.extend(result.predictions)
        return samples

    return probe


def calibrate(
    truth: Sequence[TelemetrySample],
    probe: Probe,
    grid: Sequence[float],
    *,
    produced_in_window: int,
    history_window: tuple[int, int],
    min_history_samples: int = DEFAULT_MIN_HISTORY_SAMPLES,
    min_power: float = MIN_TRUTH_POWER_W,
) -> CalibrationResult:
    """Grid-search the exponent against trailing ground truth.

    Ties in MAPE resolve to the smallest candidate. Candidates that error
    are dropped from the ranking; if all of them error the search fails
    loudly. Histories too thin to rank (few usable samples) or with
    utilization pinned to 0/1 everywhere (exponent unidentifiable) raise a
    CalibrationSkipped subclass so the caller keeps its current params.
    """
    validate_grid(grid)
    usable = [s for s in truth if s.power_draw >= min_power]
    if len(usable) < min_history_samples:
        raise InsufficientHistory(
            f"{len(usable)} usable samples, need {min_history_samples}"
        )
    if not any(0.0 < s.cpu_utilization < 1.0 for s in truth):
        raise DegenerateHistory("utilization never strictly between 0 and 1")

    evaluated: list[tuple[float, float]] = []
    failures: list[tuple[float, str]] = []
    for r in sorted(set(grid)):
        try:
            predicted = probe(r)
            evaluated.append((r, mape(truth, predicted, min_power)))
        except DCTwinError as exc:
            failures.append((r, str(exc)))
    if not evaluated:
        raise AllCandidatesFailed(
            "; ".join(f"r={r}: {msg}" for r, msg in failures) or "empty grid"
        )
    selected_r, _ = min(evaluated, key=lambda e: (e[1], e[0]))
    return CalibrationResult(
        produced_in_window=produced_in_window,
        applies_from_window=produced_in_window + 1,
        selected_r=selected_r,
        evaluated=tuple(evaluated),
        history_window=history_window,
    )

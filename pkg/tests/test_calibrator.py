"""Error metrics, grid search, and the two candidate probes."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, strategies as st

from dctwin.calibrator import (
    AllCandidatesFailed,
    BiasDirection,
    DegenerateHistory,
    InsufficientHistory,
    NoOverlap,
    RecordedHistory,
    calibrate,
    default_grid,
    estimation_bias,
    make_resim_probe,
    mape,
    match_series,
    threshold_compliance,
    validate_grid,
)
from dctwin.model import (
    DomainError,
    Fragment,
    PowerModelParams,
    SampleSource,
    TelemetrySample,
    Window,
    WorkloadTask,
    windows_spanning,
)
from dctwin.simengine import SimConfig, SimState, simulate_window
from dctwin.power import cluster_params

from .conftest import make_host, make_topology


def truth(ts: int, watts: float, util: float = 0.5) -> TelemetrySample:
    return TelemetrySample(ts, watts, util, SampleSource.GROUND_TRUTH)


def sim(ts: int, watts: float, util: float = 0.5) -> TelemetrySample:
    return TelemetrySample(ts, watts, util, SampleSource.PREDICTION)


class TestMape:
    def test_documented_value(self):
        # |100-110|/100 and |200-180|/200 both 10%
        real = [truth(0, 100.0), truth(300, 200.0)]
        predicted = [sim(0, 110.0), sim(300, 180.0)]
        assert mape(real, predicted) == pytest.approx(10.0, abs=1e-9)

    def test_twenty_percent(self):
        real = [truth(0, 100.0)]
        predicted = [sim(0, 120.0)]
        assert mape(real, predicted) == pytest.approx(20.0, abs=1e-9)

    def test_perfect_prediction_is_zero(self):
        real = [truth(i * 300, 500.0) for i in range(5)]
        predicted = [sim(i * 300, 500.0) for i in range(5)]
        assert mape(real, predicted) == 0.0

    @pytest.mark.parametrize("c", [0.5, 3.0, 1000.0])
    def test_scale_invariance(self, c):
        real = [truth(0, 100.0), truth(300, 250.0), truth(600, 80.0)]
        predicted = [sim(0, 90.0), sim(300, 300.0), sim(600, 100.0)]
        scaled_real = [truth(s.timestamp, s.power_draw * c) for s in real]
        scaled_sim = [sim(s.timestamp, s.power_draw * c) for s in predicted]
        assert mape(scaled_real, scaled_sim) == pytest.approx(
            mape(real, predicted), rel=1e-9
        )

    def test_only_matched_timestamps_count(self):
        real = [truth(0, 100.0), truth(300, 100.0)]
        predicted = [sim(300, 150.0), sim(600, 999.0)]
        assert mape(real, predicted) == pytest.approx(50.0, abs=1e-9)

    def test_low_power_truth_dropped(self):
        # near-zero ground truth would blow the relative error up; the
        # floor drops it instead
        real = [truth(0, 0.5), truth(300, 200.0)]
        predicted = [sim(0, 100.0), sim(300, 100.0)]
        assert mape(real, predicted) == pytest.approx(50.0, abs=1e-9)

    def test_no_overlap_raises(self):
        with pytest.raises(NoOverlap):
            mape([truth(0, 100.0)], [sim(300, 100.0)])

    def test_all_truth_below_floor_raises(self):
        with pytest.raises(NoOverlap):
            mape([truth(0, 0.1)], [sim(0, 0.2)])

    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=10.0, max_value=1e5),
                st.floats(min_value=0.0, max_value=1e5),
            ),
            min_size=1,
            max_size=30,
        )
    )
    def test_nonnegative_property(self, pairs):
        real = [truth(i * 60, rw) for i, (rw, _) in enumerate(pairs)]
        predicted = [sim(i * 60, sw) for i, (_, sw) in enumerate(pairs)]
        assert mape(real, predicted) >= 0.0


class TestMatchSeries:
    def test_sorted_output(self):
        real = [truth(600, 10.0), truth(0, 20.0)]
        predicted = [sim(0, 1.0), sim(600, 2.0)]
        assert [p[0] for p in match_series(real, predicted)] == [0, 600]


class TestThresholdCompliance:
    def test_eighty_six_of_hundred(self):
        values = [5.0] * 86 + [15.0] * 14
        assert threshold_compliance(values, 10.0) == pytest.approx(0.86)

    def test_boundary_value_not_compliant(self):
        # strictly below the threshold counts
        assert threshold_compliance([10.0], 10.0) == 0.0
        assert threshold_compliance([9.999], 10.0) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            threshold_compliance([], 10.0)


class TestBias:
    def test_directions(self):
        real = [truth(0, 100.0), truth(300, 100.0), truth(600, 100.0)]
        predicted = [sim(0, 120.0), sim(300, 80.0), sim(600, 100.0)]
        report = estimation_bias(real, predicted)
        assert report.over == 1
        assert report.under == 1
        assert report.exact == 1
        assert report.fraction_underestimated == pytest.approx(1 / 3)
        assert dict(report.points)[0] is BiasDirection.OVER

    def test_counts_every_matched_sample(self):
        real = [truth(0, 0.5)]  # below the MAPE floor, still counted here
        predicted = [sim(0, 1.0)]
        assert estimation_bias(real, predicted).over == 1


class TestGrid:
    def test_default_grid(self):
        grid = default_grid()
        assert grid[0] == 0.5
        assert grid[-1] == 4.0
        assert len(grid) == 15
        steps = [round(b - a, 10) for a, b in zip(grid, grid[1:])]
        assert set(steps) == {0.25}

    def test_grid_must_stay_in_bounds(self):
        with pytest.raises(DomainError):
            validate_grid((0.4, 2.0))
        with pytest.raises(DomainError):
            validate_grid((2.0, 4.25))
        with pytest.raises(DomainError):
            validate_grid(())


def linear_probe(factory):
    """Probe whose predictions are a pure function of r, for search tests."""

    def probe(r: float):
        return factory(r)

    return probe


class TestCalibrate:
    def history(self, n=12, watts=400.0, util=0.5):
        return [truth(i * 300, watts, util) for i in range(n)]

    def test_recovers_exact_candidate(self):
        target = 2.75

        def factory(r):
            # prediction deviates linearly from truth as |r - target|
            return [sim(i * 300, 400.0 * (1.0 + 0.1 * abs(r - target))) for i in range(12)]

        result = calibrate(
            self.history(),
            linear_probe(factory),
            default_grid(),
            produced_in_window=4,
            history_window=(0, 3600),
        )
        assert result.selected_r == target
        assert result.produced_in_window == 4
        assert result.applies_from_window == 5
        assert len(result.evaluated) == 15

    def test_tie_breaks_to_smallest_r(self):
        def factory(r):
            return [sim(i * 300, 440.0) for i in range(12)]  # same error everywhere

        result = calibrate(
            self.history(),
            linear_probe(factory),
            (3.0, 1.5, 2.0),
            produced_in_window=1,
            history_window=(0, 3600),
        )
        assert result.selected_r == 1.5

    def test_insufficient_history(self):
        with pytest.raises(InsufficientHistory):
            calibrate(
                self.history(n=3),
                linear_probe(lambda r: []),
                default_grid(),
                produced_in_window=1,
                history_window=(0, 3600),
            )

    def test_degenerate_when_utilization_pinned(self):
        pinned = [truth(i * 300, 400.0, util=1.0) for i in range(12)]
        with pytest.raises(DegenerateHistory):
            calibrate(
                pinned,
                linear_probe(lambda r: []),
                default_grid(),
                produced_in_window=1,
                history_window=(0, 3600),
            )

    def test_idle_history_is_degenerate_too(self):
        idle = [truth(i * 300, 400.0, util=0.0) for i in range(12)]
        with pytest.raises(DegenerateHistory):
            calibrate(
                idle,
                linear_probe(lambda r: []),
                default_grid(),
                produced_in_window=1,
                history_window=(0, 3600),
            )

    def test_all_candidates_failing(self):
        def factory(r):
            raise NoOverlap("nothing matched")

        with pytest.raises(AllCandidatesFailed):
            calibrate(
                self.history(),
                linear_probe(factory),
                default_grid(),
                produced_in_window=1,
                history_window=(0, 3600),
            )

    def test_single_failing_candidate_dropped(self):
        def factory(r):
            if r == 0.5:
                raise NoOverlap("boom")
            return [sim(i * 300, 400.0 * (1.0 + 0.1 * abs(r - 2.0))) for i in range(12)]

        result = calibrate(
            self.history(),
            linear_probe(factory),
            default_grid(),
            produced_in_window=1,
            history_window=(0, 3600),
        )
        assert result.selected_r == 2.0
        assert len(result.evaluated) == 14


class SmallScenario:
    """Two windows of real engine history for probe-equivalence checks."""

    def __init__(self, seed=0):
        self.topology = make_topology(
            make_host("h0", cores=4, freq=2000.0, p_idle=60.0, p_max=480.0),
            make_host("h1", cores=4, freq=2000.0, p_idle=60.0, p_max=480.0),
        )
        self.granularity = 300
        self.window_duration = 3600
        rng = random.Random(seed)
        self.tasks = [
            WorkloadTask(
                f"t{i:02d}",
                rng.randint(0, 7000),
                rng.randint(1, 3),
                (Fragment(rng.randint(600, 5000), rng.uniform(500.0, 2500.0)),),
            )
            for i in range(8)
        ]
        self.sim_config = SimConfig(
            topology=self.topology, sampling_granularity=self.granularity
        )

    def run(self, r: float):
        state = SimState.initial(self.topology)
        rows = []
        predictions = []
        plan = []
        for window in windows_spanning(self.window_duration, 7200):
            batch = [t for t in self.tasks if window.contains(t.submit_time)]
            plan.append((window, batch))
            base = state.clone()
            result = simulate_window(
                self.sim_config, window, state, batch, cluster_params(self.topology, r)
            )
            state = result.state
            predictions.extend(result.predictions)
            for (ts, u_by_host), s in zip(result.host_utilization, result.predictions):
                rows.append((ts, u_by_host, s.cpu_utilization))
        return rows, predictions, plan


class TestProbes:
    def test_recorded_history_matches_full_resim(self):
        scenario = SmallScenario(seed=3)
        rows, _, plan = scenario.run(r=2.0)
        recorded = RecordedHistory(
            sim_config=scenario.sim_config, rows=tuple(rows), span=(0, 7200)
        )
        resim = make_resim_probe(
            scenario.sim_config, SimState.initial(scenario.topology), plan
        )
        for r in default_grid():
            assert recorded.probe(r) == list(resim(r)), f"probes diverge at r={r}"

    def test_recorded_history_rows_are_r_independent(self):
        scenario = SmallScenario(seed=5)
        rows_a, _, _ = scenario.run(r=0.5)
        rows_b, _, _ = scenario.run(r=4.0)
        assert rows_a == rows_b

    def test_probe_at_recording_exponent_reproduces_predictions(self):
        scenario = SmallScenario(seed=7)
        rows, predictions, _ = scenario.run(r=2.5)
        recorded = RecordedHistory(
            sim_config=scenario.sim_config, rows=tuple(rows), span=(0, 7200)
        )
        assert recorded.probe(2.5) == predictions

    def test_end_to_end_grid_recovery_with_engine_truth(self):
        scenario = SmallScenario(seed=11)
        rows, _, _ = scenario.run(r=2.0)
        recorded = RecordedHistory(
            sim_config=scenario.sim_config, rows=tuple(rows), span=(0, 7200)
        )
        true_r = 3.25
        noiseless = [
            TelemetrySample(s.timestamp, s.power_draw, s.cpu_utilization,
                            SampleSource.GROUND_TRUTH)
            for s in recorded.probe(true_r)
        ]
        result = calibrate(
            noiseless,
            recorded.probe,
            default_grid(),
            produced_in_window=2,
            history_window=(0, 7200),
        )
        assert result.selected_r == true_r
        selected_mape = dict(result.evaluated)[true_r]
        assert selected_mape < 1e-6

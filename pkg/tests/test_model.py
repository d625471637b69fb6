"""Domain types, validation, and file round-trips."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from dctwin.model import (
    Acceleration,
    CalibrationResult,
    ConfigError,
    DomainError,
    Fragment,
    HostSpec,
    InvalidTopology,
    InvalidWorkload,
    PowerModelParams,
    SampleSource,
    TelemetrySample,
    Topology,
    Window,
    WorkloadTask,
    canonical_json,
    read_topology_file,
    read_workload_csv,
    sample_from_dict,
    sample_to_dict,
    topology_from_dict,
    topology_to_dict,
    validate_topology,
    validate_workload,
    windows_spanning,
    write_topology_file,
    write_workload_csv,
)

from .conftest import make_host, make_topology


class TestTopologyValidation:
    def test_accepts_well_formed(self, two_host_topology):
        validate_topology(two_host_topology)

    def test_rejects_empty(self):
        with pytest.raises(InvalidTopology) as err:
            validate_topology(Topology(name="empty", hosts=()))
        assert err.value.invariant == "no_hosts"

    def test_rejects_duplicate_ids(self):
        with pytest.raises(InvalidTopology) as err:
            validate_topology(make_topology(make_host("a"), make_host("a")))
        assert err.value.invariant == "duplicate_id"

    def test_rejects_nonpositive_cores(self):
        with pytest.raises(InvalidTopology):
            validate_topology(make_topology(make_host(cores=0)))

    def test_rejects_inverted_power_endpoints(self):
        with pytest.raises(InvalidTopology) as err:
            validate_topology(make_topology(make_host(p_idle=400.0, p_max=100.0)))
        assert err.value.invariant == "p_max_below_p_idle"

    def test_rejects_exponent_outside_bounds(self):
        with pytest.raises(InvalidTopology):
            validate_topology(make_topology(make_host(r=4.5)))

    def test_capacity(self):
        host = make_host(cores=4, freq=2000.0)
        assert host.capacity_mhz == 8000.0


class TestWorkloadValidation:
    def test_sorted_by_submit_then_id(self):
        t1 = WorkloadTask("b", 10, 1, (Fragment(5, 100.0),))
        t2 = WorkloadTask("a", 10, 1, (Fragment(5, 100.0),))
        t3 = WorkloadTask("c", 5, 1, (Fragment(5, 100.0),))
        assert [t.id for t in validate_workload([t1, t2, t3])] == ["c", "a", "b"]

    def test_rejects_duplicate_ids(self):
        tasks = [
            WorkloadTask("x", 0, 1, (Fragment(5, 100.0),)),
            WorkloadTask("x", 1, 1, (Fragment(5, 100.0),)),
        ]
        with pytest.raises(InvalidWorkload):
            validate_workload(tasks)

    def test_rejects_empty_fragments(self):
        with pytest.raises(InvalidWorkload):
            validate_workload([WorkloadTask("x", 0, 1, ())])

    def test_rejects_nonpositive_duration(self):
        with pytest.raises(InvalidWorkload):
            validate_workload([WorkloadTask("x", 0, 1, (Fragment(0, 100.0),))])

    def test_rejects_negative_demand(self):
        with pytest.raises(InvalidWorkload):
            validate_workload([WorkloadTask("x", 0, 1, (Fragment(5, -1.0),))])

    def test_rejects_negative_submit(self):
        with pytest.raises(InvalidWorkload):
            validate_workload([WorkloadTask("x", -1, 1, (Fragment(5, 100.0),))])

    def test_total_duration(self):
        task = WorkloadTask("x", 0, 1, (Fragment(5, 0.0), Fragment(7, 0.0)))
        assert task.total_duration == 12


class TestTelemetrySample:
    def test_rejects_negative_power(self):
        with pytest.raises(DomainError):
            TelemetrySample(0, -1.0, 0.5, SampleSource.GROUND_TRUTH)

    def test_rejects_bad_utilization(self):
        with pytest.raises(DomainError):
            TelemetrySample(0, 100.0, 1.5, SampleSource.GROUND_TRUTH)

    def test_dict_round_trip(self):
        s = TelemetrySample(300, 175.5, 0.5, SampleSource.PREDICTION)
        assert sample_from_dict(sample_to_dict(s)) == s


class TestWindows:
    def test_spanning(self):
        windows = windows_spanning(3600, 7200)
        assert [(w.index, w.start, w.end) for w in windows] == [
            (0, 0, 3600),
            (1, 3600, 7200),
        ]

    def test_contains_half_open(self):
        w = Window(index=0, start=0, end=3600)
        assert w.contains(0)
        assert w.contains(3599)
        assert not w.contains(3600)

    def test_horizon_must_be_multiple(self):
        with pytest.raises(DomainError):
            windows_spanning(3600, 5000)

    def test_horizon_must_be_positive(self):
        with pytest.raises(DomainError):
            windows_spanning(3600, 0)


class TestAcceleration:
    def test_parse_forms(self):
        assert Acceleration.parse("realtime") == Acceleration.realtime()
        assert Acceleration.parse("max") == Acceleration.maximum()
        assert Acceleration.parse("maximum") == Acceleration.maximum()
        fixed = Acceleration.parse("fixed:10")
        assert fixed.factor == 10.0
        assert str(fixed) == "fixed:10"

    def test_parse_rejects_garbage(self):
        for text in ["", "warp", "fixed:", "fixed:0", "fixed:-2"]:
            with pytest.raises(ConfigError):
                Acceleration.parse(text)

    def test_round_trip_via_str(self):
        for acc in [Acceleration.realtime(), Acceleration.fixed(2.5), Acceleration.maximum()]:
            assert Acceleration.parse(str(acc)) == acc

    def test_wall_seconds(self):
        assert Acceleration.realtime().wall_seconds_for(300) == 300.0
        assert Acceleration.fixed(10).wall_seconds_for(300) == 30.0
        assert not Acceleration.maximum().is_paced


class TestCalibrationResult:
    def test_applies_from_must_follow_produced(self):
        with pytest.raises(DomainError):
            CalibrationResult(
                produced_in_window=3,
                applies_from_window=5,
                selected_r=2.0,
                evaluated=((2.0, 1.0),),
                history_window=(0, 3600),
            )

    def test_selected_must_minimize(self):
        with pytest.raises(DomainError):
            CalibrationResult(
                produced_in_window=3,
                applies_from_window=4,
                selected_r=2.0,
                evaluated=((2.0, 5.0), (3.0, 1.0)),
                history_window=(0, 3600),
            )


class TestSerde:
    def test_topology_file_round_trip(self, tmp_path, two_host_topology):
        path = tmp_path / "topo.json"
        write_topology_file(two_host_topology, path)
        loaded = read_topology_file(path, r=2.0)
        assert loaded == two_host_topology

    def test_topology_rejects_missing_power_fields(self, tmp_path):
        data = topology_to_dict(make_topology(make_host()))
        del data["hosts"][0]["p_idle_w"]
        path = tmp_path / "topo.json"
        path.write_text(json.dumps(data))
        with pytest.raises(InvalidTopology):
            read_topology_file(path, r=2.0)

    def test_topology_dict_round_trip(self, two_host_topology):
        assert topology_from_dict(topology_to_dict(two_host_topology), r=2.0) == two_host_topology

    def test_workload_csv_round_trip(self, tmp_path):
        tasks = [
            WorkloadTask("a", 0, 2, (Fragment(10, 500.0), Fragment(20, 0.0))),
            WorkloadTask("b", 5, 1, (Fragment(7, 123.25),)),
        ]
        path = tmp_path / "workload.csv"
        write_workload_csv(tasks, path)
        assert read_workload_csv(path) == validate_workload(tasks)

    def test_workload_csv_rejects_fragment_gap(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text(
            "task_id,submit_time_s,core_request,fragment_index,duration_s,cpu_demand_mhz\n"
            "a,0,1,0,10,100.0\n"
            "a,0,1,2,10,100.0\n"
        )
        with pytest.raises(InvalidWorkload):
            read_workload_csv(path)

    def test_workload_csv_rejects_inconsistent_rows(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text(
            "task_id,submit_time_s,core_request,fragment_index,duration_s,cpu_demand_mhz\n"
            "a,0,1,0,10,100.0\n"
            "a,3,1,1,10,100.0\n"
        )
        with pytest.raises(InvalidWorkload):
            read_workload_csv(path)

    def test_canonical_json_is_stable(self):
        a = canonical_json({"b": 1, "a": [1.5, 2]})
        b = canonical_json({"a": [1.5, 2], "b": 1})
        assert a == b == '{"a":[1.5,2],"b":1}'

    def test_canonical_json_rejects_nan(self):
        with pytest.raises(ValueError):
            canonical_json({"x": float("nan")})

    @given(
        st.lists(
            st.tuples(
                st.integers(min_value=0, max_value=10**7),
                st.floats(min_value=0.0, max_value=1e6, allow_nan=False),
                st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
            ),
            max_size=20,
        )
    )
    def test_sample_round_trip_property(self, rows):
        for ts, watts, util in rows:
            s = TelemetrySample(ts, watts, util, SampleSource.GROUND_TRUTH)
            assert sample_from_dict(sample_to_dict(s)) == s

"""Power curve, energy integration, and efficiency bucketing."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, strategies as st

from dctwin.model import (
    DomainError,
    PowerModelParams,
    SampleSource,
    TelemetrySample,
    Window,
)
from dctwin.power import (
    EnergyAccumulator,
    IrregularSeries,
    MisalignedSeries,
    cluster_params,
    energy_kwh,
    host_power,
    hourly_efficiency,
    predict_cluster_power,
    uniform_params,
)

from .conftest import make_host, make_topology


def sample(ts: int, watts: float, util: float = 0.5, source=SampleSource.GROUND_TRUTH):
    return TelemetrySample(timestamp=ts, power_draw=watts, cpu_utilization=util, source=source)


class TestHostPower:
    def test_documented_value(self):
        # P(0.5) with endpoints 100/300 and r=2: 100 + 200*(1 - 0.25) = 250
        params = PowerModelParams(p_idle=100.0, p_max=300.0, r=2.0)
        assert host_power(params, 0.5) == 250.0

    def test_endpoints_exact_for_random_params(self):
        rng = random.Random(20240817)
        for _ in range(100):
            p_idle = rng.uniform(0.0, 300.0)
            p_max = p_idle + rng.uniform(0.0, 500.0)
            r = rng.uniform(0.5, 4.0)
            params = PowerModelParams(p_idle=p_idle, p_max=p_max, r=r)
            assert host_power(params, 0.0) == p_idle
            assert host_power(params, 1.0) == p_max

    def test_interior_overshoot_for_large_r(self):
        # 2u - u^r exceeds 1 inside (0,1) once r > 2; the curve is allowed
        # to pass p_max between the endpoints.
        params = PowerModelParams(p_idle=0.0, p_max=100.0, r=4.0)
        assert host_power(params, 0.8) > 100.0

    def test_dip_below_idle_never_happens_for_r_at_least_one(self):
        params = PowerModelParams(p_idle=50.0, p_max=200.0, r=1.0)
        for u in [0.0, 0.1, 0.5, 0.9, 1.0]:
            assert host_power(params, u) >= 50.0

    @given(
        u=st.floats(min_value=0.0, max_value=1.0),
        r=st.floats(min_value=1.0, max_value=4.0),
    )
    def test_power_between_bounds_for_moderate_r(self, u, r):
        # For r in [1, 2] the blend stays inside [0, 1]; above r=2 it may
        # overshoot 1 but never goes negative on [0, 1].
        params = PowerModelParams(p_idle=100.0, p_max=400.0, r=r)
        watts = host_power(params, u)
        assert watts >= 100.0 - 1e-9
        if r <= 2.0:
            assert watts <= 400.0 + 1e-9

    @given(
        r=st.floats(min_value=1.0, max_value=2.0),
        u1=st.floats(min_value=0.0, max_value=1.0),
        u2=st.floats(min_value=0.0, max_value=1.0),
    )
    def test_monotone_for_r_between_one_and_two(self, r, u1, u2):
        # d/du (2u - u^r) = 2 - r u^(r-1) >= 2 - r >= 0 on [0,1] for r <= 2
        params = PowerModelParams(p_idle=10.0, p_max=20.0, r=r)
        lo, hi = sorted([u1, u2])
        assert host_power(params, lo) <= host_power(params, hi) + 1e-12

    def test_rejects_out_of_range_utilization(self):
        params = PowerModelParams(p_idle=100.0, p_max=300.0, r=2.0)
        with pytest.raises(DomainError):
            host_power(params, -0.01)
        with pytest.raises(DomainError):
            host_power(params, 1.01)

    def test_rejects_bad_params(self):
        with pytest.raises(DomainError):
            host_power(PowerModelParams(p_idle=100.0, p_max=50.0, r=2.0), 0.5)
        with pytest.raises(DomainError):
            host_power(PowerModelParams(p_idle=100.0, p_max=300.0, r=0.4), 0.5)
        with pytest.raises(DomainError):
            host_power(PowerModelParams(p_idle=100.0, p_max=300.0, r=4.1), 0.5)


class TestClusterPower:
    def test_single_host_reduces_to_host_power(self):
        topology = make_topology(make_host("h0", p_idle=100.0, p_max=300.0))
        params = uniform_params(topology, r=2.0)
        watts = predict_cluster_power(topology, {"h0": 0.5}, params)
        assert watts == 250.0

    def test_absent_hosts_idle(self):
        topology = make_topology(
            make_host("h0", p_idle=100.0, p_max=300.0),
            make_host("h1", p_idle=50.0, p_max=200.0),
        )
        params = uniform_params(topology, r=2.0)
        assert predict_cluster_power(topology, {}, params) == 150.0

    def test_cluster_params_aggregates_endpoints(self):
        topology = make_topology(
            make_host("h0", p_idle=100.0, p_max=300.0),
            make_host("h1", p_idle=50.0, p_max=200.0),
        )
        agg = cluster_params(topology, r=3.0)
        assert agg.p_idle == 150.0
        assert agg.p_max == 500.0
        assert agg.r == 3.0


class TestEnergy:
    def test_single_sample(self):
        kwh = energy_kwh([sample(0, 175.0)], granularity=300)
        assert kwh == pytest.approx(175.0 * 300 / 3.6e6, rel=1e-12)

    def test_twelve_kilowatt_samples_exactly_one_kwh(self):
        samples = [sample(i * 300, 1000.0) for i in range(12)]
        assert energy_kwh(samples, granularity=300) == 1.0

    def test_zero_power(self):
        samples = [sample(i * 300, 0.0) for i in range(12)]
        assert energy_kwh(samples, granularity=300) == 0.0

    def test_empty_series(self):
        assert energy_kwh([], granularity=300) == 0.0

    def test_irregular_spacing_rejected(self):
        samples = [sample(0, 100.0), sample(300, 100.0), sample(700, 100.0)]
        with pytest.raises(IrregularSeries):
            energy_kwh(samples, granularity=300)

    def test_accumulator_clips_to_window(self):
        window = Window(index=0, start=0, end=3600)
        samples = [sample(i * 300, 1000.0) for i in range(14)]  # 2 beyond the window
        acc = EnergyAccumulator.over_window(window, samples, granularity=300)
        assert len(acc.samples) == 12
        assert acc.kwh == 1.0


class TestHourlyEfficiency:
    def test_constant_hour(self):
        # 0.5 TFLOPs at 1000 W for one hour: 0.5 / 1.0 kWh
        ts = [i * 300 for i in range(12)]
        tflops = [(t, 0.5) for t in ts]
        power = [sample(t, 1000.0) for t in ts]
        out = hourly_efficiency(tflops, power, granularity=300)
        assert out == [(0, pytest.approx(0.5, rel=1e-12))]

    def test_zero_tflops_hour_reports_zero(self):
        ts = [i * 300 for i in range(12)]
        out = hourly_efficiency(
            [(t, 0.0) for t in ts], [sample(t, 500.0) for t in ts], granularity=300
        )
        assert out == [(0, 0.0)]

    def test_zero_energy_bucket_omitted(self):
        ts = [i * 300 for i in range(12)]
        out = hourly_efficiency(
            [(t, 0.5) for t in ts], [sample(t, 0.0) for t in ts], granularity=300
        )
        assert out == []

    def test_buckets_split_on_hour_boundaries(self):
        ts = [i * 300 for i in range(24)]  # two hours
        tflops = [(t, 1.0 if t < 3600 else 2.0) for t in ts]
        power = [sample(t, 1000.0) for t in ts]
        out = hourly_efficiency(tflops, power, granularity=300)
        assert [hour for hour, _ in out] == [0, 3600]
        assert out[0][1] == pytest.approx(1.0, rel=1e-12)
        assert out[1][1] == pytest.approx(2.0, rel=1e-12)

    def test_scale_invariance(self):
        # Scaling power by c scales efficiency by 1/c.
        ts = [i * 300 for i in range(12)]
        tflops = [(t, 0.7) for t in ts]
        base = hourly_efficiency(tflops, [sample(t, 800.0) for t in ts], 300)
        scaled = hourly_efficiency(tflops, [sample(t, 1600.0) for t in ts], 300)
        assert scaled[0][1] == pytest.approx(base[0][1] / 2.0, rel=1e-12)

    def test_misaligned_series_rejected(self):
        with pytest.raises(MisalignedSeries):
            hourly_efficiency([(0, 0.5)], [sample(300, 100.0)], granularity=300)

    def test_partial_hour_uses_observed_samples_only(self):
        ts = [0, 300, 600]
        out = hourly_efficiency(
            [(t, 0.5) for t in ts], [sample(t, 1200.0) for t in ts], granularity=300
        )
        kwh = 1200.0 * 3 * 300 / 3.6e6
        assert out == [(0, pytest.approx(0.5 / kwh, rel=1e-12))]

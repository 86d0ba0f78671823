import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgenids.costmodel import (
    FREE_PARAMS, PlatformProfile, calibrate_profile, default_profiles, estimate_energy,
    estimate_latency, load_profile, mac_count, memory_partition, save_profile,
)
from edgenids.errors import FormatError, InvalidParam, Underdetermined
from edgenids.models import FamilyTag, LayerSpec, Network, architecture, build_ff, model_size_kib, sweep_specs


def profile(**kw):
    base = dict(name="p", peak_mac_rate=1e9, utilization={"conv2d": 1.0, "dense": 1.0},
                onchip_capacity_kib=8000.0, offchip_bandwidth=2.0**30, fixed_overhead=0.0,
                active_power=2.0)
    base.update(kw)
    return PlatformProfile(**base)


def dense_model(n_in, n_out):
    return Network((LayerSpec.dense(n_in, n_out, "softmax"),), (), (n_in,))


class TestMacCount:
    def test_dense(self):
        assert mac_count(dense_model(39, 100))[1] == 3_900

    def test_conv(self):
        net = Network((LayerSpec.conv2d(2, 1, 8),), (), (8, 8, 1))
        assert mac_count(net)[1] == 2_048

    def test_ff2_total(self):
        per, total = mac_count(FamilyTag("ff", 2))
        assert per == [3_900, 10_000, 200] and total == 14_100

    def test_pool_and_flatten_free(self):
        per, _ = mac_count(FamilyTag("cnn_small", 16, 3))
        kinds = [s.kind for s in architecture(FamilyTag("cnn_small", 16, 3)).layers]
        assert all(m == 0 for m, k in zip(per, kinds) if k in ("maxpool2x2", "flatten"))

    def test_accepts_built_network(self):
        assert mac_count(build_ff(4))[1] == mac_count(FamilyTag("ff", 4))[1]


class TestMemoryPartition:
    @pytest.mark.parametrize("size,expect", [(4000, (4000, 0)), (12000, (8000, 4000)), (0, (0, 0))])
    def test_examples(self, size, expect):
        assert memory_partition(size, profile()) == expect

    def test_negative(self):
        with pytest.raises(InvalidParam):
            memory_partition(-1, profile())

    @given(st.floats(0, 80_000))
    def test_conservation(self, size):
        on, off = memory_partition(size, profile())
        assert on + off == size and 0 <= on <= 8000 and off >= 0


class TestLatency:
    def test_pure_compute(self):
        net = dense_model(1000, 1000)
        assert mac_count(net)[1] == 1_000_000
        est = estimate_latency(net, profile())
        assert est.latency_ms == pytest.approx(1.0)

    def test_pure_stream(self):
        # 12000 KiB of weights with trivial compute: 3 million parameter dense layer
        n_params = 12000 * 1024
        net = dense_model(n_params // 2 - 1, 2)
        assert model_size_kib(net) == 12000
        est = estimate_latency(net, profile(peak_mac_rate=1e18))
        assert est.offchip_kib == 4000
        assert est.stream_time == pytest.approx(4_096_000 / 2**30)
        assert est.latency_ms == pytest.approx(3.815, abs=1e-3)

    def test_overhead_and_overlap(self):
        net = dense_model(1000, 1000)
        est = estimate_latency(net, profile(fixed_overhead=1e-3))
        assert est.latency == pytest.approx(2e-3)
        p = profile(onchip_capacity_kib=1.0, overlap_penalty=1.0)
        est = estimate_latency(net, p)
        assert est.latency == pytest.approx(est.compute_time + est.stream_time)

    def test_partition_consistent(self):
        acc = default_profiles()[0]
        for tag in sweep_specs("cnn_deep"):
            est = estimate_latency(tag, acc)
            assert est.onchip_kib + est.offchip_kib == pytest.approx(model_size_kib(architecture(tag)))

    @pytest.mark.parametrize("family", ["ff", "cnn_deep"])
    def test_monotone_in_size(self, family):
        for p in default_profiles():
            lat = [estimate_latency(t, p).latency for t in sweep_specs(family)]
            assert all(b >= a for a, b in zip(lat, lat[1:]))


class TestEnergy:
    def test_arithmetic(self):
        est = estimate_energy(dense_model(1000, 1000), profile())
        assert est.energy == pytest.approx(2e-3)
        assert est.efficiency == pytest.approx(0.5)

    def test_halving_latency_doubles_efficiency(self):
        net = dense_model(1000, 1000)
        slow = estimate_energy(net, profile())
        fast = estimate_energy(net, profile(peak_mac_rate=2e9))
        assert fast.efficiency == pytest.approx(2 * slow.efficiency)

    @given(st.integers(1, 64))
    def test_efficiency_is_inverse_millijoules(self, M):
        est = estimate_energy(FamilyTag("ff", M), default_profiles()[0])
        assert est.efficiency == pytest.approx(1.0 / (est.energy * 1e3))


class TestProfiles:
    def test_shipped(self):
        acc, cpu = default_profiles()
        assert acc.name == "accel-default" and cpu.name == "cpu-default"
        assert acc.onchip_capacity_kib == 8000
        assert acc.util("conv2d") == 0.5 and acc.util("dense") == 0.05
        assert acc.active_power == 2.0 and cpu.active_power == 1.0

    def test_round_trip(self, tmp_path):
        acc = default_profiles()[0]
        save_profile(acc, tmp_path / "a.profile")
        assert load_profile(tmp_path / "a.profile") == acc

    def test_missing_key(self, tmp_path):
        (tmp_path / "x.profile").write_text("name = x\npeak_mac_rate = 1e9\n")
        with pytest.raises(FormatError):
            load_profile(tmp_path / "x.profile")

    @pytest.mark.parametrize("kw", [dict(peak_mac_rate=0.0), dict(utilization={"conv2d": 1.5, "dense": 1.0}),
                                    dict(fixed_overhead=-1.0), dict(active_power=0.0)])
    def test_invariants(self, kw):
        with pytest.raises(InvalidParam):
            profile(**kw)


class TestCalibrate:
    TAGS = sweep_specs("ff") + sweep_specs("cnn_small") + sweep_specs("cnn_deep")

    def observe(self, truth):
        return [(t, estimate_latency(t, truth).latency) for t in self.TAGS]

    def test_round_trip_within_5pct(self):
        truth = default_profiles()[0]
        free = ["peak_mac_rate", "util.dense", "fixed_overhead", "offchip_bandwidth"]
        start = truth.replace(peak_mac_rate=3 * truth.peak_mac_rate, **{"util.dense": 0.3},
                              fixed_overhead=5 * truth.fixed_overhead, offchip_bandwidth=truth.offchip_bandwidth / 4)
        fitted = calibrate_profile(self.observe(truth), start, free).profile
        for p in free:
            assert fitted.get(p) == pytest.approx(truth.get(p), rel=0.05)

    def test_overhead_closed_form(self):
        truth = default_profiles()[1]
        res = calibrate_profile(self.observe(truth), truth.replace(fixed_overhead=0.0), ["fixed_overhead"])
        assert res.profile.fixed_overhead == pytest.approx(truth.fixed_overhead, rel=1e-9)
        assert np.abs(res.residuals).max() < 1e-9

    def test_no_free_params(self):
        acc = default_profiles()[0]
        assert calibrate_profile(self.observe(acc)[:3], acc).profile is acc

    def test_too_few_observations(self):
        acc = default_profiles()[0]
        with pytest.raises(Underdetermined):
            calibrate_profile(self.observe(acc)[:1], acc, ["fixed_overhead"])
        with pytest.raises(Underdetermined):
            calibrate_profile(self.observe(acc)[:2], acc, list(FREE_PARAMS))

    def test_unconstrained_parameter(self):
        cpu = default_profiles()[1]  # nothing ever leaves its memory
        with pytest.raises(Underdetermined):
            calibrate_profile(self.observe(cpu), cpu, ["fixed_overhead", "offchip_bandwidth"])

    def test_unknown_param(self):
        acc = default_profiles()[0]
        with pytest.raises(InvalidParam):
            calibrate_profile(self.observe(acc), acc, ["active_power"])


def test_largest_small_cnn_ratio_against_size_matched_ff():
    from edgenids.analysis import matched_efficiency_ratio

    acc, cpu = default_profiles()
    ff = sweep_specs("ff")
    fs = [model_size_kib(architecture(t)) for t in ff]
    tag = FamilyTag("cnn_small", 256, 5)
    _, (r,) = matched_efficiency_ratio(
        fs, [estimate_latency(t, acc).efficiency for t in ff], [estimate_latency(t, cpu).efficiency for t in ff],
        [model_size_kib(architecture(tag))], [estimate_latency(tag, acc).efficiency],
        [estimate_latency(tag, cpu).efficiency], extrapolate=True)
    assert 6 <= r <= 12

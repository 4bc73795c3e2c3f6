import pytest

from tinybat import estimate as est, graph as g
from tinybat.errors import EstimatorError, ParameterError
from tinybat.rng import SplitMix64

from graphgen import random_graph


def brute_force_peak(graph: g.ModelGraph) -> int:
    """Independent liveness oracle: recompute the live set per step from the
    raw definition (produced at step p, used last at step d, live p..d)."""
    order = [graph.layers[i] for i in graph.schedule]
    peak = 0
    for step in range(len(order)):
        total = 0
        for name in graph.tensors:
            if name == graph.input_name:
                produced = 0
            else:
                produced = next(p for p, l in enumerate(order) if l.output == name)
            uses = [p for p, l in enumerate(order) if name in l.inputs]
            death = max(uses) if uses else produced
            if produced <= step <= death:
                total += graph.tensor(name).nbytes
        peak = max(peak, total)
    return peak


def int8_conv_graph():
    spec = g.TensorSpec("input", (32, 32, 1), g.INT8)
    layers = [g.LayerOp(g.CONV2D, "c0", ("input",), "out", kernel=3, out_channels=8)]
    return g.infer_shapes(g.make_graph(spec, layers))


class TestCountMacs:
    def test_conv_hand_count(self):
        macs = est.count_macs(int8_conv_graph())
        assert macs.per_layer["c0"] == 73_728  # 32*32*8*9*1
        assert macs.total == 73_728

    def test_depthwise_hand_count(self):
        spec = g.TensorSpec("input", (16, 16, 8), g.INT8)
        layers = [g.LayerOp(g.DEPTHWISE, "d0", ("input",), "out", kernel=3)]
        graph = g.infer_shapes(g.make_graph(spec, layers))
        assert est.count_macs(graph).per_layer["d0"] == 18_432  # 16*16*8*9

    def test_relu_is_free(self):
        spec = g.TensorSpec("input", (8, 8, 4), g.INT8)
        layers = [g.LayerOp(g.RELU6, "r0", ("input",), "out")]
        graph = g.infer_shapes(g.make_graph(spec, layers))
        macs = est.count_macs(graph)
        assert macs.per_layer["r0"] == 0
        assert macs.element_ops["r0"] == 8 * 8 * 4

    def test_additive_over_concatenation(self):
        # appending a block to a chain adds exactly that block's MACs
        spec = g.TensorSpec("input", (16, 16, 4), g.INT8)
        head = [g.LayerOp(g.CONV2D, "c0", ("input",), "a0", kernel=3, out_channels=4)]
        tail = g.build_inverted_residual(4, 4, 3, 3, 1, input_name="a0", prefix="b")
        short = g.infer_shapes(g.make_graph(spec, head))
        full = g.infer_shapes(g.make_graph(spec, head + tail))
        body_spec = g.TensorSpec("a0", (16, 16, 4), g.INT8)
        body = g.infer_shapes(g.make_graph(body_spec, tail))
        assert est.count_macs(full).total == (
            est.count_macs(short).total + est.count_macs(body).total
        )

    def test_total_is_per_layer_sum(self):
        rng = SplitMix64(13)
        macs = est.count_macs(random_graph(rng))
        assert macs.total == sum(macs.per_layer.values())

    def test_unresolved_shapes_rejected(self):
        spec = g.TensorSpec("input", (8, 8, 1))
        layers = [g.LayerOp(g.RELU6, "r0", ("input",), "out")]
        graph = g.make_graph(spec, layers)  # shapes not inferred
        with pytest.raises(EstimatorError):
            est.count_macs(graph)


class TestFlashBytes:
    def test_single_layer_metadata(self):
        # 1000 int8 weights, no biases modeled here: use a synthetic count
        spec = g.TensorSpec("input", (10, 10, 10), g.INT8)
        layers = [g.LayerOp(g.CONV2D, "c0", ("input",), "out", kernel=1, out_channels=10)]
        graph = g.infer_shapes(g.make_graph(spec, layers))
        profile = est.DeviceProfile(code_overhead_bytes=1)
        # weights 1*1*10*10=100, biases 10 -> 100 + 40 + 64 + 1
        assert est.flash_bytes(graph, profile, weight_elem_bytes=1) == 100 + 40 + 64 + 1

    def test_real32_is_four_times_weight_term(self):
        graph = int8_conv_graph()
        profile = est.DeviceProfile(code_overhead_bytes=1)
        w, b = est.param_counts(graph)
        int8 = est.flash_bytes(graph, profile, weight_elem_bytes=1)
        real32 = est.flash_bytes(graph, profile, weight_elem_bytes=4)
        assert real32 - int8 == 3 * w
        assert b * 4 + 64 + 1 == int8 - w

    def test_code_overhead_dominates_empty_model(self):
        spec = g.TensorSpec("input", (8, 8, 1), g.INT8)
        layers = [g.LayerOp(g.RELU6, "r0", ("input",), "out")]
        graph = g.infer_shapes(g.make_graph(spec, layers))
        profile = est.DeviceProfile(code_overhead_bytes=30_000)
        assert est.flash_bytes(graph, profile, 1) == 30_000 + 64


class TestRamPeak:
    def test_single_conv_both_buffers(self):
        assert est.ram_peak(int8_conv_graph()) == 1024 + 8192

    def test_empty_graph(self):
        spec = g.TensorSpec("input", (8, 8, 1), g.INT8)
        graph = g.make_graph(spec, [])
        assert est.ram_peak(graph) == 0

    def test_skip_buffer_counted_across_block(self):
        # residual skip keeps the block input alive across the body
        layers = g.build_inverted_residual(4, 4, 3, 6, 1, input_name="input", prefix="b")
        spec = g.TensorSpec("input", (8, 8, 4), g.INT8)
        graph = g.infer_shapes(g.make_graph(spec, layers))
        lifetimes = est.tensor_lifetimes(graph)
        add_pos = graph.schedule.index(len(graph.layers) - 1)
        assert lifetimes["input"] == (0, add_pos)
        assert est.ram_peak(graph) == brute_force_peak(graph)

    def test_matches_brute_force_on_random_graphs(self):
        rng = SplitMix64(2024)
        for _ in range(60):
            graph = random_graph(rng)
            assert est.ram_peak(graph) == brute_force_peak(graph)


class TestLatencyEnergy:
    def test_hand_latency(self):
        profile = est.DeviceProfile(clock_hz=120e6, macs_per_cycle=1.0)
        assert est.estimate_latency(73_728, profile) == pytest.approx(0.6144)

    def test_zero_macs(self):
        assert est.estimate_latency(0, est.DeviceProfile()) == 0.0

    def test_throughput_halves_time(self):
        p1 = est.DeviceProfile(macs_per_cycle=1.0)
        p2 = est.DeviceProfile(macs_per_cycle=2.0)
        assert est.estimate_latency(10**6, p1) == 2 * est.estimate_latency(10**6, p2)

    def test_published_energy_optimized(self):
        assert round(est.estimate_energy(4.83, 118), 2) == 0.57

    def test_published_energy_original(self):
        assert est.estimate_energy(13.32, 248) == pytest.approx(3.30336)
        assert abs(est.estimate_energy(13.32, 248) - 3.29) <= 0.02

    def test_zero_power(self):
        assert est.estimate_energy(0.0, 50.0) == 0.0

    def test_bilinear_scaling(self):
        base = est.estimate_energy(3.0, 7.0)
        assert est.estimate_energy(3.0 * 2, 7.0 * 5) == pytest.approx(base * 10)

    def test_negative_rejected(self):
        with pytest.raises(ParameterError):
            est.estimate_energy(-1.0, 10.0)


def report(flash, ram, power, time, energy):
    return est.FootprintReport(flash_kb=flash, ram_kb=ram, macs=1, time_ms=time,
                               power_mw=power, energy_mj=energy)


TABLE_ORIGINAL = report(1350.25, 80.20, 13.32, 248.0, 3.29)
TABLE_OPTIMIZED = report(483.82, 70.32, 4.83, 118.0, 0.57)


class TestReductionReport:
    def test_published_rows(self):
        r = est.reduction_report(TABLE_ORIGINAL, TABLE_OPTIMIZED)
        assert r["flash_kb"] == 64.17
        assert r["time_ms"] == 52.42
        assert r["power_mw"] == 63.74
        assert r["energy_mj"] == 82.67
        assert abs(r["ram_kb"] - 12.31) <= 0.02  # computed 12.32

    def test_identical_reports_zero(self):
        r = est.reduction_report(TABLE_ORIGINAL, TABLE_ORIGINAL)
        assert all(v == 0.0 for v in r.values())

    def test_zero_original_metric_rejected(self):
        degenerate = report(0.0, 1.0, 1.0, 1.0, 0.001)
        with pytest.raises(EstimatorError):
            est.reduction_report(degenerate, TABLE_OPTIMIZED)


class TestInvariants:
    def test_energy_identity_in_footprint(self):
        graph = int8_conv_graph()
        fp = est.footprint(graph, est.DeviceProfile(), 1)
        assert fp.energy_mj == fp.power_mw * fp.time_ms / 1000.0

    def test_profile_positivity_enforced(self):
        with pytest.raises(ParameterError):
            est.DeviceProfile(clock_hz=0)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_plane, random_real_tensor
from muxconv.binarize import LatentWeights, binarize
from muxconv.convolution import conv2d_fixed, relu
from muxconv.fixedpoint import FixedPointFormat
from muxconv.hwsim import (BlockRam, CycleTrace, LayerBlockSim, LayerConfig,
                           PortContractError, SimulationError, baseline_cycles,
                           layer_cycles, pipeline_report, processing_cycles,
                           run_layer, run_pipeline, speedup)
from muxconv.pruning import build_mask
from muxconv.tensors import FeatureTensor, KernelTensor

FMT = FixedPointFormat(16, 8, "saturate")


def make_sim(rng, width, in_maps, out_maps, P, stride=1):
    cfg = LayerConfig(width=width, in_maps=in_maps, out_maps=out_maps, P=P,
                      stride=stride, fmt=FMT)
    _, plane = random_plane(rng, in_maps, out_maps, P)
    x = FeatureTensor.quantized(random_real_tensor(rng, width, width, in_maps), FMT)
    return cfg, plane, x


def config_strategy():
    def build(width, in_maps, p_idx, groups, stride):
        p = [1, 2, 4, 8, 16][p_idx]
        return LayerConfig(width=width, in_maps=in_maps, out_maps=p * groups,
                           P=p, stride=stride, fmt=FMT)
    return st.builds(build, st.integers(1, 10), st.integers(1, 24),
                     st.integers(0, 4), st.integers(1, 3), st.sampled_from([1, 2]))


class TestFormulas:
    def test_reference_layer(self):
        cfg = LayerConfig(width=32, in_maps=64, out_maps=64, P=16)
        assert layer_cycles(cfg) == 2048 + 8192 + 2048 == 12288
        assert baseline_cycles(cfg) == 786432

    def test_speedup_figures(self):
        cfg = LayerConfig(width=32, in_maps=64, out_maps=64, P=16)
        sp = speedup(cfg)
        assert sp.exact_ratio == 64
        assert sp.asymptotic == 96  # 3 * 32

    def test_degenerate_config(self):
        cfg = LayerConfig(width=1, in_maps=1, out_maps=1, P=1)
        assert layer_cycles(cfg) == 3
        assert baseline_cycles(cfg) == 3
        assert speedup(cfg).exact_ratio == 1.0

    @settings(max_examples=60, deadline=None)
    @given(config_strategy())
    def test_processing_term_ratio_identity(self, cfg):
        assert baseline_cycles(cfg) == 3 * cfg.width * processing_cycles(cfg)
        assert speedup(cfg).asymptotic == 3 * cfg.width

    def test_p_constraints(self):
        with pytest.raises(ValueError):
            LayerConfig(width=4, in_maps=4, out_maps=4, P=8)
        with pytest.raises(ValueError):
            LayerConfig(width=4, in_maps=4, out_maps=6, P=4)


class TestBlockRam:
    def test_one_read_one_write_per_cycle_ok(self):
        b = BlockRam(4, 3)
        b.write(0, np.array([1, 2, 3]), cycle=1)
        assert b.read(0, cycle=1).tolist() == [1, 2, 3]

    def test_double_read_raises(self):
        b = BlockRam(4, 3)
        b.read(0, cycle=1)
        with pytest.raises(PortContractError):
            b.read(1, cycle=1)

    def test_double_write_raises(self):
        b = BlockRam(4, 3)
        b.write(0, np.zeros(3), cycle=1)
        with pytest.raises(PortContractError):
            b.write(1, np.zeros(3), cycle=1)

    def test_address_checked(self):
        b = BlockRam(4, 3)
        with pytest.raises(SimulationError):
            b.read(4, cycle=0)


class TestCopyPhase:
    def test_cycle_count_matches_first_term(self, rng):
        cfg, plane, x = make_sim(rng, 32, 64, 16, 16)
        sim = LayerBlockSim(cfg, plane)
        sim.load_input(x)
        assert sim.copy_phase() == 32 * 64 == 2048

    def test_stride1_rows_are_windows(self, rng):
        cfg, plane, x = make_sim(rng, 8, 3, 2, 1)
        sim = LayerBlockSim(cfg, plane)
        sim.load_input(x)
        sim.copy_phase()
        for k in range(3):
            col, _ = plane.kept_tap(k)
            for i in range(8):
                got = sim.bram2.data[k * 8 + i]
                assert got.tolist() == x.data[i, col:col + 6, k].tolist()

    def test_stride2_keeps_alternate_columns(self):
        # row 1..8 -> 1,3,5,7 (kept kernel column 0 reads the even phase)
        cfg = LayerConfig(width=8, in_maps=1, out_maps=1, P=1, stride=2, fmt=FMT)
        latent = LatentWeights(KernelTensor(np.ones((3, 3, 1, 1))),
                               build_mask(3, 3, 1, 1))
        sim = LayerBlockSim(cfg, binarize(latent))
        row = np.arange(1, 9, dtype=np.int64)
        x = FeatureTensor(np.tile(row[None, :, None], (8, 1, 1)), FMT)
        sim.load_input(x)
        sim.copy_phase()
        assert sim.bram2.data[0].tolist() == [1, 3, 5, 7]

    def test_out_of_order_call_rejected(self, rng):
        cfg, plane, _ = make_sim(rng, 4, 2, 2, 1)
        sim = LayerBlockSim(cfg, plane)
        with pytest.raises(SimulationError):
            sim.copy_phase()  # nothing loaded yet


class TestProcessingPhase:
    def test_single_map_pass_loads_window(self, rng):
        cfg, _, x = make_sim(rng, 6, 1, 1, 1)
        latent = LatentWeights(KernelTensor(np.ones((3, 3, 1, 1))),
                               build_mask(3, 3, 1, 1))
        sim = LayerBlockSim(cfg, binarize(latent))
        sim.load_input(x)
        sim.copy_phase()
        assert sim.processing_phase() == 1  # one vector read
        # pass 0 computes output row 0; tap (0,0) reads source row -1 -> zeros
        assert not sim.registers[0].any()
        sim.writeback_phase()
        assert sim.processing_phase() == 1
        # output row 1 reads source row 0: the quantized window itself
        assert sim.registers[0].tolist() == x.data[0, 0:4, 0].tolist()

    def test_layer_totals(self, rng):
        cfg, plane, x = make_sim(rng, 8, 4, 4, 2)
        _, breakdown = run_layer(x, cfg, plane)
        assert breakdown.copy == 8 * 4
        assert breakdown.processing == 8 * 4 * 4 // 2
        assert breakdown.writeback == 8 * 4

    def test_registers_match_fixed_engine_pre_relu(self, rng):
        cfg, plane, x = make_sim(rng, 7, 5, 4, 2)
        sim = LayerBlockSim(cfg, plane)
        sim.load_input(x)
        sim.run()
        ref = conv2d_fixed(x, plane, cfg.conv_config, FMT)
        assert np.array_equal(sim.preactivation_tensor().data, ref.data)

    def test_writeback_requires_enable_s(self, rng):
        cfg, plane, x = make_sim(rng, 5, 2, 2, 1)
        sim = LayerBlockSim(cfg, plane)
        sim.load_input(x)
        sim.copy_phase()
        with pytest.raises(SimulationError):
            sim.writeback_phase()


class TestWriteback:
    def test_negative_rows_written_as_zero(self, rng):
        cfg = LayerConfig(width=5, in_maps=1, out_maps=1, P=1, fmt=FMT)
        latent = LatentWeights(KernelTensor(np.full((3, 3, 1, 1), -1.0)),
                               build_mask(3, 3, 1, 1))
        plane = binarize(latent)
        x = FeatureTensor.quantized(
            FeatureTensor(np.abs(rng.uniform(0.1, 1, (5, 5, 1)))), FMT)
        out, _ = run_layer(x, cfg, plane)
        assert not out.data.any()  # negated positive input, then ReLU

    def test_signal_counts(self, rng):
        cfg, plane, x = make_sim(rng, 6, 3, 4, 2)
        sim = LayerBlockSim(cfg, plane)
        sim.load_input(x)
        sim.run()
        passes = cfg.groups * cfg.width
        assert sim.fi_count == passes
        assert sim.enable_s_count == passes
        assert sim.itter_done_count == 1

    def test_dst_receives_embedded_rows(self, rng):
        cfg, plane, x = make_sim(rng, 6, 2, 2, 1)
        dst = BlockRam(cfg.out_maps * cfg.out_rows, 6, "next.bram1")
        sim = LayerBlockSim(cfg, plane)
        sim.load_input(x)
        sim.run(dst=dst, dst_col_offset=1)
        out = sim.output_tensor()
        for l in range(2):
            for i in range(cfg.out_rows):
                word = dst.data[l * cfg.out_rows + i]
                assert word[0] == 0 and word[5] == 0
                assert word[1:5].tolist() == out.data[i, :, l].tolist()


class TestRunLayer:
    @settings(max_examples=40, deadline=None)
    @given(config_strategy(), st.integers(0, 2**31 - 1))
    def test_cycle_identity_random_configs(self, cfg, seed):
        rng = np.random.default_rng(seed)
        _, plane = random_plane(rng, cfg.in_maps, cfg.out_maps, cfg.P)
        x = FeatureTensor.quantized(
            random_real_tensor(rng, cfg.width, cfg.width, cfg.in_maps), FMT)
        _, breakdown = run_layer(x, cfg, plane)
        assert breakdown.total == layer_cycles(cfg)

    def test_three_cycle_minimum(self, rng):
        cfg, plane, x = make_sim(rng, 1, 1, 1, 1)
        out, breakdown = run_layer(x, cfg, plane)
        assert breakdown.total == 3
        assert out.data.shape == (1, 0, 1)  # no valid interior at width 1

    def test_output_equals_relu_fixed(self, rng):
        for _ in range(10):
            width = int(rng.integers(3, 9))
            in_maps = int(rng.integers(1, 17))
            P = int(rng.choice([1, 2, 4, 8]))
            out_maps = P * int(rng.integers(1, 3))
            stride = int(rng.choice([1, 2]))
            cfg, plane, x = make_sim(rng, width, in_maps, out_maps, P, stride)
            out, _ = run_layer(x, cfg, plane)
            ref = relu(conv2d_fixed(x, plane, cfg.conv_config, FMT))
            assert np.array_equal(out.data, ref.data)

    def test_mismatched_plane_rejected(self, rng):
        cfg = LayerConfig(width=4, in_maps=2, out_maps=2, P=1, fmt=FMT)
        _, plane = random_plane(rng, 3, 2, 1)
        with pytest.raises(SimulationError):
            LayerBlockSim(cfg, plane)

    def test_trace_rows(self, rng):
        cfg, plane, x = make_sim(rng, 4, 2, 2, 1)
        trace = CycleTrace()
        _, breakdown = run_layer(x, cfg, plane, trace=trace)
        assert len(trace.rows) == breakdown.total
        assert trace.rows[-1][-1] == 1  # Itter_done on the final cycle
        header = trace.to_csv().splitlines()[0]
        assert header == "cycle,layer,phase,fi,enable_s,itter_done"


class TestPipeline:
    def stages(self, rng, n, width=6, maps=4, P=2):
        out = []
        for _ in range(n):
            _, plane = random_plane(rng, maps, maps, P)
            out.append((LayerConfig(width=width, in_maps=maps, out_maps=maps,
                                    P=P, fmt=FMT), plane))
        return out

    def test_latency_is_additive_bottleneck_is_max(self, rng):
        stages = self.stages(rng, 3)
        report = pipeline_report([cfg for cfg, _ in stages])
        single = layer_cycles(stages[0][0])
        assert report.latency_cycles == 3 * single
        assert report.bottleneck_cycles == single
        assert report.latency_seconds == report.latency_cycles / 240e6
        assert report.throughput_images_per_s == 240e6 / single

    def test_single_layer_latency_equals_bottleneck(self, rng):
        report = pipeline_report([self.stages(rng, 1)[0][0]])
        assert report.latency_cycles == report.bottleneck_cycles

    def test_adding_layers_never_raises_throughput(self, rng):
        small = pipeline_report([cfg for cfg, _ in self.stages(rng, 2)])
        big = pipeline_report([cfg for cfg, _ in self.stages(rng, 5)])
        assert big.throughput_images_per_s <= small.throughput_images_per_s

    def test_simulate_matches_analytic_outputs(self, rng):
        stages = self.stages(rng, 3)
        image = FeatureTensor.quantized(random_real_tensor(rng, 6, 6, 4), FMT)
        sim = run_pipeline(stages, [image], mode="simulate")
        fn = run_pipeline(stages, [image], mode="analytic")
        assert np.array_equal(sim.outputs[0].data, fn.outputs[0].data)
        for got, cfg in zip(sim.breakdowns[0], (cfg for cfg, _ in stages)):
            assert got.total == layer_cycles(cfg)

    def test_shape_mismatch_rejected(self, rng):
        _, p1 = random_plane(rng, 4, 4, 2)
        _, p2 = random_plane(rng, 8, 8, 2)
        stages = [(LayerConfig(width=6, in_maps=4, out_maps=4, P=2, fmt=FMT), p1),
                  (LayerConfig(width=6, in_maps=8, out_maps=8, P=2, fmt=FMT), p2)]
        with pytest.raises(SimulationError):
            run_pipeline(stages, [], mode="analytic")

    def test_mixed_frequency_rejected(self, rng):
        _, plane = random_plane(rng, 4, 4, 2)
        stages = [
            (LayerConfig(width=6, in_maps=4, out_maps=4, P=2, fmt=FMT,
                         frequency_hz=240e6), plane),
            (LayerConfig(width=6, in_maps=4, out_maps=4, P=2, fmt=FMT,
                         frequency_hz=208e6), plane),
        ]
        with pytest.raises(SimulationError):
            run_pipeline(stages, [], mode="analytic")

    def test_strided_stage_chains(self, rng):
        _, p1 = random_plane(rng, 2, 2, 1)
        _, p2 = random_plane(rng, 2, 2, 1)
        stages = [(LayerConfig(width=8, in_maps=2, out_maps=2, P=1, stride=2,
                               fmt=FMT), p1),
                  (LayerConfig(width=4, in_maps=2, out_maps=2, P=1, fmt=FMT), p2)]
        image = FeatureTensor.quantized(random_real_tensor(rng, 8, 8, 2), FMT)
        sim = run_pipeline(stages, [image], mode="simulate")
        fn = run_pipeline(stages, [image], mode="analytic")
        assert sim.outputs[0].shape == (4, 2, 2)
        assert np.array_equal(sim.outputs[0].data, fn.outputs[0].data)

from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qspace.archspace import BlockType, Hyperspace, StageArch, decode_space, min_architecture, sample_architecture
from qspace.costmodel import (ACT, ADD, CONV, DWCONV, FC, POOL, SE, Kernel, LatencySample, SyntheticDevice,
                              decompose, decompose_parts, flops, grid_kernels, kernel_macs, layer_kernels,
                              read_samples_csv, synth_samples, write_samples_csv)
from qspace.errors import FormatError
from qspace.predictor import predict_latency


def kinds(ks):
    return [k.kind for k in ks]


def test_mbv2_stride2_layer_has_three_kernels():
    ks = layer_kernels(BlockType.MBv2, 32, 48, 3, 6, 2, 56, "relu6", 16)
    assert kinds(ks) == [CONV, DWCONV, CONV]


def test_mbv3_residual_layer_has_five_kernels():
    ks = layer_kernels(BlockType.MBv3, 48, 48, 5, 4, 1, 28, "hswish", 16)
    assert kinds(ks) == [CONV, DWCONV, SE, CONV, ADD]


def test_mbv1_layer():
    ks = layer_kernels(BlockType.MBv1, 32, 64, 3, 1, 1, 28, "relu", 16)
    assert kinds(ks) == [DWCONV, CONV]


def test_residual_bottleneck_scales_inner_width_by_cout():
    ks = layer_kernels(BlockType.ResidualBottleneck, 64, 64, 3, 0.5, 1, 28, "relu", 16)
    assert kinds(ks) == [CONV, CONV, CONV, ADD]
    assert ks[0].cout == 32 and ks[1].k == 3


def test_fused_mb_se_layer():
    ks = layer_kernels(BlockType.FusedMBSE, 32, 32, 3, 2, 1, 28, "swish", 8)
    assert kinds(ks) == [CONV, SE, CONV, ADD]
    assert ks[0].k == 3 and ks[0].cout == 64


def test_expand_one_skips_expansion_conv():
    ks = layer_kernels(BlockType.MBv2, 32, 16, 3, 1, 1, 112, "relu6", 8)
    assert kinds(ks) == [DWCONV, CONV]


def test_spatial_sizes_follow_strides(cpu_hs):
    a = min_architecture(decode_space("111111-000000", cpu_hs))
    parts = decompose_parts(a)
    assert parts[0][0].h == a.resolution
    for i in range(cpu_hs.num_stages):
        assert parts[i + 1][0].h == cpu_hs.stage_input_sizes(a.resolution)[i]
    assert parts[-1][-1].kind == FC


def mbv2_reference():
    hs = Hyperspace.preset("mobilenetv2_ref")
    return min_architecture(decode_space("111111-000000", hs))


def test_mobilenetv2_kernel_count_matches_hand_enumeration():
    # stem conv 1, stem block (e=1, 32->16) 2, then per layer 3 kernels plus an add when residual:
    # 2 layers -> 7, 3 -> 11, 4 -> 15, 3 -> 11, 3 -> 11, 1 -> 3, head conv/pool/fc 3
    assert len(decompose(mbv2_reference())) == 1 + 2 + 7 + 11 + 15 + 11 + 11 + 3 + 3


def test_mobilenetv2_macs_near_300m():
    assert abs(flops(mbv2_reference()) - 300e6) <= 0.05 * 300e6


def test_conv_macs_closed_form():
    k = Kernel(CONV, 224, 224, 3, 16, 3, 2)
    assert kernel_macs(k) == 3 * 3 * 3 * 16 * 112 * 112 == 5_419_008


def test_macs_by_kind():
    assert kernel_macs(Kernel(DWCONV, 14, 14, 32, 32, 5, 1)) == 25 * 32 * 196
    assert kernel_macs(Kernel(FC, 1, 1, 1280, 1000)) == 1_280_000
    assert kernel_macs(Kernel(SE, 7, 7, 64, 64), 16) == 2 * 64 * 16 + 49 * 64
    assert kernel_macs(Kernel(ADD, 7, 7, 64, 64)) == 0
    assert kernel_macs(Kernel(POOL, 7, 7, 64, 64)) == 0


def test_stem_and_head_only_latency_is_their_kernel_sum(cpu_hs, cpu_device):
    a = min_architecture(decode_space("111111-000000", cpu_hs))
    parts = decompose_parts(a)
    edge = parts[0] + parts[-1]
    stages = [k for p in parts[1:-1] for k in p]
    total = predict_latency(cpu_device, a, "int8")
    assert total == pytest.approx(cpu_device.predict_kernels(edge, "int8").sum()
                                  + cpu_device.predict_kernels(stages, "int8").sum(), rel=1e-12)


def test_latency_is_additive_over_parts(cpu_hs, cpu_predictor):
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = sample_architecture(cpu_hs.random_space(rng), rng)
        parts = decompose_parts(a)
        whole = predict_latency(cpu_predictor, a, "int8")
        pieces = sum(float(cpu_predictor.predict_kernels(p, "int8").sum()) for p in parts)
        assert whole == pytest.approx(pieces, rel=1e-12)


def test_adding_a_layer_increases_latency(cpu_hs, cpu_device):
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 1000:
        sp = cpu_hs.random_space(rng)
        a = sample_architecture(sp, rng)
        i = int(rng.integers(cpu_hs.num_stages))
        s = a.stages[i]
        if s.depth >= cpu_hs.stages[i].depth_range[1]:
            continue
        grown = StageArch(s.kernels + s.kernels[-1:], s.widths + s.widths[-1:], s.expands + s.expands[-1:])
        b = dataclasses.replace(a, stages=a.stages[:i] + (grown,) + a.stages[i + 1:])
        assert predict_latency(cpu_device, b, "int8") > predict_latency(cpu_device, a, "int8")
        checked += 1


def test_flops_and_latency_are_pure(cpu_hs, cpu_predictor):
    a = sample_architecture(decode_space("305126-112330", cpu_hs), 3)
    assert flops(a) == flops(a)
    assert predict_latency(cpu_predictor, a) == predict_latency(cpu_predictor, a)


# -- synthetic device ---------------------------------------------------------


def test_noise_free_conv_sample_is_closed_form(cpu_device):
    k = Kernel(CONV, 28, 28, 64, 128, 3, 1, "none")
    [s32, _] = synth_samples(cpu_device, {CONV: {"h": [28], "cin": [64], "cout": [128], "k": [3],
                                                 "stride": [1], "activation": ["none"]}}, noise=0)
    macs = 9 * 64 * 128 * 28 * 28
    mem = cpu_device.mem_cost[CONV] * (28 * 28 * 64 + 28 * 28 * 128)
    assert s32.kernel == k
    assert s32.latency_ms == pytest.approx(macs / cpu_device.throughput[CONV] + mem + cpu_device.overhead_ms,
                                           rel=1e-12)


def test_dwconv_channel_plateau_on_mobile(mobile_device):
    lat = lambda c: mobile_device.kernel_latency(Kernel(DWCONV, 28, 28, c, c, 3), "int8")
    assert lat(95) == lat(96)
    assert lat(97) > lat(96)


@pytest.mark.parametrize("device", ["synth_cpu", "synth_mobile"])
@pytest.mark.parametrize("kind", [CONV, DWCONV, SE, ADD])
@pytest.mark.parametrize("precision", ["fp32", "int8"])
def test_latency_is_a_step_function_of_channels(device, kind, precision):
    dev = SyntheticDevice.preset(device)
    g = dev.granularity
    cs = np.arange(1, 8 * g + 1)
    lat = np.array([dev.kernel_latency(Kernel(kind, 14, 14, c, c, 3), precision) for c in cs])
    assert np.all(np.diff(lat) >= 0)
    jumps = cs[1:][np.diff(lat) > 0]
    assert np.all(jumps % g == 1)


def test_hswish_int8_slower_on_cpu(cpu_device):
    k = Kernel(ACT, 56, 56, 96, 96, 1, 1, "hswish")
    assert cpu_device.kernel_latency(k, "int8") > cpu_device.kernel_latency(k, "fp32")


@pytest.mark.parametrize("K", [1, 3, 5, 7])
def test_cpu_conv_speedup_in_band(cpu_device, K):
    hw, c = cpu_device.reference
    assert 3.5 - 1e-9 <= cpu_device.speedup(Kernel(CONV, hw, hw, c, c, K)) <= 4.0 + 1e-9


def test_cpu_dwconv_speedup_decreases_with_kernel_size(cpu_device):
    hw, c = cpu_device.reference
    s = [cpu_device.speedup(Kernel(DWCONV, hw, hw, c, c, K)) for K in (1, 3, 5, 7)]
    assert all(b < a for a, b in zip(s, s[1:]))


def test_conv_only_network_speedup(cpu_device):
    hw, c = cpu_device.reference
    net = [Kernel(CONV, hw, hw, c, c, K) for K in (1, 3, 5, 7, 3, 1)]
    ratio = cpu_device.predict_kernels(net, "fp32").sum() / cpu_device.predict_kernels(net, "int8").sum()
    assert 3.5 <= ratio <= 4.0


def test_synth_samples_deterministic_and_bounded(mobile_device):
    spec = {DWCONV: {"h": [14, 28], "cin": [16, 32], "k": [3, 5], "stride": [1, 2], "activation": ["relu"]}}
    a = synth_samples(mobile_device, spec, seed=3)
    assert a == synth_samples(mobile_device, spec, seed=3)
    assert len(a) == 2 * len(grid_kernels(spec)) == 2 * 16
    for s in a:
        exact = mobile_device.kernel_latency(s.kernel, s.precision)
        assert abs(s.latency_ms / exact - 1) <= 0.02 + 1e-12


def test_synth_sample_count_equals_grid_product(cpu_device):
    n = 0
    for kind, spec in cpu_device.grid.items():
        m = 1
        for v in spec.values():
            m *= len(v)
        n += m
    assert len(grid_kernels(cpu_device.grid)) == n


def test_empty_grid_rejected(cpu_device):
    with pytest.raises(ValueError):
        synth_samples(cpu_device, {})


# -- sample files -------------------------------------------------------------


def test_samples_csv_round_trip(tmp_path, mobile_device):
    spec = {FC: {"cin": [64, 128], "cout": [10], "activation": ["none"]}}
    s = synth_samples(mobile_device, spec, seed=1)
    p = tmp_path / "s.csv"
    write_samples_csv(s, p)
    assert read_samples_csv(p) == s


def test_samples_csv_missing_column_is_named(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("kind,precision,h,w,cin,cout,k,stride,latency_ms\nconv_bn_act,int8,1,1,1,1,1,1,0.1\n")
    with pytest.raises(FormatError, match="activation"):
        read_samples_csv(p)


def test_samples_csv_rejects_unknown_version(tmp_path):
    p = tmp_path / "v.csv"
    p.write_text('# {"format": "qspace.latency_samples", "version": 7}\n'
                 "kind,precision,h,w,cin,cout,k,stride,activation,latency_ms\n")
    with pytest.raises(FormatError, match="version"):
        read_samples_csv(p)


def test_sample_rejects_nonpositive_latency():
    with pytest.raises(FormatError):
        LatencySample(Kernel(CONV, 1, 1, 1, 1), "int8", 0.0)


@settings(max_examples=50, deadline=None)
@given(c=st.integers(1, 512), h=st.sampled_from([7, 14, 28, 56]), k=st.sampled_from([1, 3, 5, 7]))
def test_int8_and_fp32_latencies_positive(c, h, k):
    dev = SyntheticDevice.preset("synth_mobile")
    for kind in (CONV, DWCONV, SE, POOL, ADD):
        kern = Kernel(kind, h, h, c, c, k)
        assert dev.kernel_latency(kern, "int8") > 0 and dev.kernel_latency(kern, "fp32") > 0

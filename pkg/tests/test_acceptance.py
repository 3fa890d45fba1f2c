"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with its measurement and
wall time; the lines are repeated in the pytest terminal summary.
"""
from __future__ import annotations

import hashlib
import time
from pathlib import Path

import numpy as np
import pytest

from qspace.archspace import (Hyperspace, decode_space, encode_space, iter_architectures, min_architecture,
                              space_cardinality)
from qspace.cli import main
from qspace.costmodel import CONV, DWCONV, Kernel, SyntheticDevice, flops, holdout_kernels, synth_samples
from qspace.evolution import EvolutionConfig, SpaceScorer, compare_with_random, evolve
from qspace.modelsearch import ModelSearchConfig, exhaustive_best, search_models
from qspace.predictor import predict_latency, train_predictor
from qspace.qtscore import QtConfig, brute_force_qt, evaluate_qt

from toys import EVO_QT, fixture_path

RESULTS: list[str] = []


def verdict(num: int, ok: bool, detail: str, elapsed: float, limit: float | None = None) -> None:
    in_time = limit is None or elapsed < limit
    budget = f" (limit {limit:g}s)" if limit is not None else ""
    line = f"{'PASS' if ok and in_time else 'FAIL'} criterion {num}: {detail} [{elapsed:.2f}s{budget}]"
    RESULTS.append(line)
    print(line)
    assert ok, line
    assert in_time, line


def test_1_encoding_bijection():
    t0 = time.perf_counter()
    n, bad = 100_000, 0
    for name in ("cpu_vnni", "pixel4", "mobilenetv2_ref"):
        hs = Hyperspace.preset(name)
        for sp in hs.random_spaces(np.random.default_rng(1), n):
            enc = encode_space(sp)
            back = decode_space(enc, hs)
            bad += back != sp or encode_space(back) != enc
    sp = decode_space("111111-000000", Hyperspace.preset("cpu_vnni"))
    windows = [sp.window(i) for i in range(6)]
    want = [(32, 48), (32, 48), (64, 80, 96), (112, 128, 144),
            tuple(range(192, 257, 16)), tuple(range(304, 401, 16))]
    ok = bad == 0 and windows == want
    verdict(1, ok, f"{bad} round-trip failures over 3x{n} spaces; windows {windows}",
            time.perf_counter() - t0, 10)


@pytest.mark.parametrize("device", ["synth_cpu", "synth_mobile"])
def test_2_predictor_fidelity(device):
    t0 = time.perf_counter()
    dev = SyntheticDevice.preset(device)
    pred = train_predictor(synth_samples(dev, seed=0), dev.name, dev.granularity)
    ks = holdout_kernels(dev, 2000, seed=12345)
    parts, ok = [], True
    for p in ("int8", "fp32"):
        est = pred.predict_kernels(ks, p)
        truth = dev.predict_kernels(ks, p)
        within = float(np.mean(np.abs(est / truth - 1) <= 0.10))
        rmse = float(np.sqrt(np.mean((est - truth) ** 2)))
        rel = float(np.sqrt(np.mean((est / truth - 1) ** 2)))
        ok &= within >= 0.90
        parts.append(f"{p} {100 * within:.1f}% within 10%, rmse {rmse:.4g} ms "
                     f"(median latency {np.median(truth):.3g} ms), relative rmse {100 * rel:.2f}%")
    verdict(2, ok, f"{device}: " + "; ".join(parts), time.perf_counter() - t0, 30)


def test_3_qt_matches_enumeration(toy_hs, mobile_predictor, toy_lut):
    t0 = time.perf_counter()
    spaces = list(toy_hs.iter_spaces())
    pick = np.random.default_rng(3).choice(len(spaces), size=20, replace=False)
    ts = (0.5, 0.7, 0.9)
    cfg = QtConfig(constraints=ts, num_samples=3000, top_k=5, seed=0)
    worst, ok = 0.0, True
    for i in pick:
        sp = spaces[i]
        ok &= space_cardinality(sp) <= 50
        got = evaluate_qt(sp, toy_lut, mobile_predictor, cfg).scores
        ref = brute_force_qt(sp, toy_lut, mobile_predictor, ts, top_k=5)
        for g, r in zip(got, ref):
            err = abs(g - r) / abs(r) if r else abs(g)
            worst = max(worst, err)
    ok &= worst <= 1e-12
    verdict(3, ok, f"max relative error {worst:.2e} over 20 spaces", time.perf_counter() - t0, 10)


def test_4_evolution_finds_toy_optimum(evo_hs, mobile_predictor, evo_lut):
    t0 = time.perf_counter()
    scorer = SpaceScorer(evo_hs, evo_lut, mobile_predictor, EVO_QT)
    scores = {sp.encoding: scorer(sp) for sp in evo_hs.iter_spaces()}
    opt = max(scores, key=scores.get)
    n_total = 10 * len(scores)
    hits = wins = 0
    for seed in range(100):
        cfg = EvolutionConfig(n_total=n_total, population=4, sample=4, qt=EVO_QT, seed=seed)
        out = compare_with_random(evo_hs, cfg, evo_lut, mobile_predictor, scorer=scorer)
        hits += out["best"] == opt
        wins += out["evolution_top_mean"] > out["random_top_mean"]
    ok = len(scores) <= 32 and hits >= 95 and wins >= 80
    verdict(4, ok, f"optimum {opt} found {hits}/100, beat random {wins}/100 at N={n_total}",
            time.perf_counter() - t0, 120)


def test_5_population_mechanics(cpu_hs, cpu_predictor, cpu_lut):
    t0 = time.perf_counter()
    P, S, iters = 500, 125, 5000
    cfg = EvolutionConfig(n_total=P + 2 * iters, population=P, sample=S, seed=0)
    res = evolve(cpu_hs, cfg, cpu_lut, cpu_predictor)
    recs = res.log.records
    sizes = all(r["population"] == P for r in recs)
    # two children in and the two oldest out per iteration: uid u lives from (u-P)//2+1 to u//2+1
    ages = all(r["evicted_uids"] == [2 * (r["iteration"] - 1), 2 * (r["iteration"] - 1) + 1]
               and all(u // 2 + 1 - ((u - P) // 2 + 1) == P // 2 for u in r["child_uids"])
               for r in recs)
    curve = res.log.best_curve
    mono = all(b >= a for a, b in zip(curve, curve[1:]))
    ok = len(recs) == iters and sizes and ages and mono
    verdict(5, ok, f"{len(recs)} iterations: size==P {sizes}, lifetime==P/2 {ages}, "
                   f"best nondecreasing {mono}", time.perf_counter() - t0, 600)


def test_6_model_search_matches_argmax(models_hs, mobile_predictor, models_lut):
    t0 = time.perf_counter()
    sp = models_hs.random_space(np.random.default_rng(0))
    n_arch = space_cardinality(sp)
    lat = sorted(predict_latency(mobile_predictor, a) for a in iter_architectures(sp))
    t = float(np.percentile(lat, 30))
    target, _, _ = exhaustive_best(sp, models_lut, mobile_predictor, t)
    hits = sum(search_models(sp, models_lut, mobile_predictor,
                             ModelSearchConfig(constraint=t, budget=1000, seed=s)).best == target
               for s in range(100))
    ok = n_arch <= 10**4 and hits >= 95
    verdict(6, ok, f"space {sp.encoding} ({n_arch} archs, T={t:.3f} ms): argmax found {hits}/100",
            time.perf_counter() - t0, 120)


def test_7_mobilenetv2_macs():
    t0 = time.perf_counter()
    arch = min_architecture(decode_space("111111-000000", Hyperspace.preset("mobilenetv2_ref")))
    macs = flops(arch)
    ok = abs(macs - 300e6) <= 0.05 * 300e6
    verdict(7, ok, f"{macs / 1e6:.1f}M MACs", time.perf_counter() - t0, 1)


def _digests(d: Path) -> dict[str, str]:
    return {f: hashlib.sha256((d / f).read_bytes()).hexdigest()
            for f in ("best_space.txt", "qt_report.json", "evolution_log.jsonl")}


def test_8_evolve_cli_deterministic(tmp_path):
    t0 = time.perf_counter()
    hs_path = str(fixture_path("toy_evolution.json"))
    assert main(["synth", "--device", "synth_mobile", "--out-samples", str(tmp_path / "s.csv"),
                 "--out-lut", str(tmp_path / "l.csv"), "--hyperspace", hs_path]) == 0
    assert main(["train-predictor", "--samples", str(tmp_path / "s.csv"), "--out", str(tmp_path / "p.json")]) == 0
    runs = []
    for name in ("run1", "run2"):
        rc = main(["evolve-space", "--hyperspace", hs_path, "--predictor", str(tmp_path / "p.json"),
                   "--lut", str(tmp_path / "l.csv"), "--constraints", "0.6,0.75,0.9", "--samples", "300",
                   "--top-k", "5", "--n", "120", "--p", "8", "--s", "4", "--seed", "7",
                   "--out", str(tmp_path / name)])
        assert rc == 0
        runs.append(_digests(tmp_path / name))
    ok = runs[0] == runs[1]
    verdict(8, ok, "identical output digests" if ok else f"digests differ: {runs}", time.perf_counter() - t0)


def test_9_synthetic_device_shape(cpu_device, mobile_device):
    t0 = time.perf_counter()
    hw, c = cpu_device.reference
    speed = {K: cpu_device.speedup(Kernel(CONV, hw, hw, c, c, K)) for K in (1, 3, 5, 7)}
    band = all(3.5 - 1e-9 <= s <= 4.0 + 1e-9 for s in speed.values())
    flat = True
    for dev in (cpu_device, mobile_device):
        g = dev.granularity
        for p in ("int8", "fp32"):
            lat = [dev.kernel_latency(Kernel(DWCONV, 28, 28, ch, ch, 3), p) for ch in range(1, 8 * g + 1)]
            buckets = [lat[i:i + g] for i in range(0, len(lat), g)]
            flat &= all(len(set(b)) == 1 for b in buckets)
            flat &= all(b[0] < a[0] for a, b in zip(buckets[1:], buckets))
    ok = band and flat
    text = ", ".join(f"K={K}: {s:.3f}" for K, s in speed.items())
    verdict(9, ok, f"CPU conv int8 speedup {text}; DWConv step plateau {flat}", time.perf_counter() - t0)

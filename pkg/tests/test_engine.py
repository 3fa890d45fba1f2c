from __future__ import annotations

import numpy as np
import pytest

from qspace.accmodel import AccuracyLut, accuracy_proxy
from qspace.archspace import decode_space, iter_architectures
from qspace.engine import Evaluator
from qspace.errors import MissingEntry
from qspace.predictor import predict_latency


@pytest.mark.parametrize("precision", ["int8", "fp32"])
def test_batched_matches_scalar_on_cpu(cpu_hs, cpu_predictor, cpu_lut, precision):
    ev = Evaluator(cpu_hs, cpu_predictor, cpu_lut, precision)
    rng = np.random.default_rng(0)
    lay = cpu_hs.layout
    for _ in range(5):
        sp = cpu_hs.random_space(rng)
        g = lay.sample(sp, 40, rng)
        lat, prox = ev.latency(sp, g), ev.proxy(sp, g)
        for row, la, p in zip(g, lat, prox):
            a = lay.to_arch(sp, row)
            assert la == pytest.approx(predict_latency(cpu_predictor, a, precision), rel=1e-12)
            assert p == pytest.approx(accuracy_proxy(cpu_lut, a, precision), rel=1e-12)


def test_batched_matches_scalar_on_whole_toy_space(toy_hs, mobile_predictor, toy_lut):
    ev = Evaluator(toy_hs, mobile_predictor, toy_lut)
    lay = toy_hs.layout
    for enc in ("01-00", "51-11", "25-10"):
        sp = decode_space(enc, toy_hs)
        archs = list(iter_architectures(sp))
        g = np.stack([lay.from_arch(a) for a in archs])
        expected = np.array([predict_latency(mobile_predictor, a) for a in archs])
        assert np.allclose(ev.latency(sp, g), expected, rtol=1e-12, atol=0)


def test_tables_are_cached(cpu_hs, cpu_predictor, cpu_lut):
    a = Evaluator(cpu_hs, cpu_predictor, cpu_lut)
    b = Evaluator(cpu_hs, cpu_predictor, cpu_lut)
    assert a.lat is b.lat and a.acc is b.acc


def test_missing_lut_entry_surfaces(toy_hs, mobile_predictor, toy_lut):
    partial = {k: v for k, v in toy_lut.entries.items() if not (k[0] == 2 and k[1] == 5)}
    lut = AccuracyLut(toy_hs.name, partial, toy_lut.stem_loss, toy_lut.head_loss, toy_lut.depth_losses)
    ev = Evaluator(toy_hs, mobile_predictor, lut)
    sp = decode_space("05-00", toy_hs)
    with pytest.raises(MissingEntry):
        ev.proxy(sp, toy_hs.layout.sample(sp, 4, np.random.default_rng(0)))

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qspace.accmodel import synth_lut
from qspace.archspace import Hyperspace, decode_space, min_architecture, space_cardinality, validate_architecture
from qspace.engine import Evaluator
from qspace.errors import InfeasibleConstraint
from qspace.modelsearch import ModelSearchConfig, exhaustive_best, pareto_front, search_models
from qspace.predictor import predict_latency


def brute_front(points):
    pts = {(lat, p) for lat, p, _ in points}
    keep = [a for a in pts
            if not any(b != a and b[0] <= a[0] and b[1] >= a[1] for b in pts)]
    return sorted(keep)


def test_front_single_point():
    assert pareto_front([(3.0, 0.5, "a")]) == [(3.0, 0.5, "a")]


def test_front_drops_dominated_point():
    assert pareto_front([(10, .8, "a"), (12, .7, "b")]) == [(10.0, 0.8, "a")]


@settings(max_examples=50, deadline=None)
@given(pts=st.lists(st.tuples(st.integers(1, 40).map(float), st.integers(0, 40).map(lambda v: v / 40)),
                    min_size=200, max_size=200))
def test_front_matches_quadratic_oracle(pts):
    points = [(lat, p, f"a{i}") for i, (lat, p) in enumerate(pts)]
    front = pareto_front(points)
    assert [(lat, p) for lat, p, _ in front] == brute_front(points)
    assert all(b[0] > a[0] and b[1] > a[1] for a, b in zip(front, front[1:]))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelSearchConfig(constraint=1, budget=10, population=100)
    with pytest.raises(ValueError):
        ModelSearchConfig(constraint=1, mutation_rate=0)
    with pytest.raises(ValueError):
        ModelSearchConfig(constraint=1, crossover=1.5)
    c = ModelSearchConfig(constraint=1)
    assert (c.budget, c.population, c.tournament, c.mutation_rate, c.crossover) == (5000, 100, 10, 0.1, 0.5)


def test_single_architecture_space(mobile_predictor):
    hs = Hyperspace.preset("mobilenetv2_ref")
    sp = decode_space("111111-000000", hs)
    res = search_models(sp, synth_lut(hs, 0), mobile_predictor,
                        ModelSearchConfig(constraint=1e3, budget=100, population=10))
    assert res.best == min_architecture(sp)
    assert res.evaluations == 1


def test_infeasible_constraint(models_hs, mobile_predictor, models_lut):
    sp = decode_space("111-000", models_hs)
    t = predict_latency(mobile_predictor, min_architecture(sp)) * 0.9
    with pytest.raises(InfeasibleConstraint):
        search_models(sp, models_lut, mobile_predictor, ModelSearchConfig(constraint=t, budget=500))


@pytest.fixture(scope="module")
def models_case(models_hs, mobile_predictor, models_lut):
    sp = models_hs.random_space(np.random.default_rng(0))
    assert space_cardinality(sp) <= 10**4
    ev = Evaluator(models_hs, mobile_predictor, models_lut)
    lay = models_hs.layout
    rows = lay.sample(sp, 200_000, np.random.default_rng(0))
    rows = np.unique(rows, axis=0)
    assert len(rows) == space_cardinality(sp)
    lat = ev.latency(sp, rows)
    return sp, float(np.percentile(lat, 30))


def test_brute_force_paths_agree(models_hs, mobile_predictor, models_lut, models_case):
    sp, t = models_case
    ev = Evaluator(models_hs, mobile_predictor, models_lut)
    lay = models_hs.layout
    rows = np.unique(lay.sample(sp, 200_000, np.random.default_rng(1)), axis=0)
    lat, prox = ev.latency(sp, rows), ev.proxy(sp, rows)
    ok = np.flatnonzero(lat <= t)
    j = ok[np.lexsort((lat[ok], -prox[ok]))[0]]
    arch, p, la = exhaustive_best(sp, models_lut, mobile_predictor, t)
    assert lay.to_arch(sp, rows[j]) == arch
    assert p == pytest.approx(prox[j], rel=1e-12) and la == pytest.approx(lat[j], rel=1e-12)


def test_search_finds_exhaustive_best(models_lut, mobile_predictor, models_case):
    sp, t = models_case
    target, _, _ = exhaustive_best(sp, models_lut, mobile_predictor, t)
    hits = sum(search_models(sp, models_lut, mobile_predictor,
                             ModelSearchConfig(constraint=t, budget=1000, seed=s)).best == target
               for s in range(10))
    assert hits >= 9


def test_result_invariants(models_lut, mobile_predictor, models_case):
    sp, t = models_case
    cfg = ModelSearchConfig(constraint=t, budget=800, seed=3)
    res = search_models(sp, models_lut, mobile_predictor, cfg)
    validate_architecture(res.best)
    assert predict_latency(mobile_predictor, res.best) <= t
    assert res.best_latency == pytest.approx(predict_latency(mobile_predictor, res.best), rel=1e-12)
    assert res.evaluations <= cfg.budget
    h = res.best_per_generation
    assert all(b >= a for a, b in zip(h, h[1:]))
    assert all(lat <= t for lat, _, _ in res.front)
    assert res.front[-1][1] == res.best_proxy


def test_search_is_deterministic(models_lut, mobile_predictor, models_case):
    sp, t = models_case
    cfg = ModelSearchConfig(constraint=t, budget=600, seed=8)
    assert search_models(sp, models_lut, mobile_predictor, cfg).to_json() == \
        search_models(sp, models_lut, mobile_predictor, cfg).to_json()


def test_result_document(models_lut, mobile_predictor, models_case):
    sp, t = models_case
    d = search_models(sp, models_lut, mobile_predictor, ModelSearchConfig(constraint=t, budget=300)).to_dict()
    assert d["format"] == "qspace.model_search"
    rows = d["best"]["stages"]
    assert rows[-1]["stage"] == "Resolution"
    assert all({"d", "c", "k", "e"} <= set(r) for r in rows[2:-1])
    assert d["config"]["budget"] == 300

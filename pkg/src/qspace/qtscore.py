"""Latency-aware quality score of a search space over several INT8 budgets."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .accmodel import AccuracyLut
from .archspace import Architecture, SearchSpace, arch_to_dict, encode_architecture
from .engine import Evaluator

QT_FORMAT = "qspace.qt_report"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class QtConfig:
    constraints: tuple[float, ...] = (8.0, 10.0, 15.0, 20.0, 25.0)
    num_samples: int = 5000
    top_k: int = 20
    seed: int = 0
    weights: tuple[float, ...] | None = None  # per-constraint, all ones when None
    precision: str = "int8"

    def __post_init__(self):
        cs = tuple(float(c) for c in self.constraints)
        object.__setattr__(self, "constraints", cs)
        if not cs:
            raise ValueError("at least one latency constraint is required")
        if any(not c > 0 for c in cs) or any(b <= a for a, b in zip(cs, cs[1:])):
            raise ValueError(f"constraints must be positive and strictly increasing: {cs}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.num_samples < self.top_k:
            raise ValueError("num_samples must be >= top_k")
        if self.weights is not None:
            ws = tuple(float(w) for w in self.weights)
            if len(ws) != len(cs) or any(w < 0 for w in ws):
                raise ValueError("weights must be nonnegative, one per constraint")
            object.__setattr__(self, "weights", ws)

    def to_dict(self) -> dict:
        return {"constraints": list(self.constraints), "num_samples": self.num_samples,
                "top_k": self.top_k, "seed": self.seed, "precision": self.precision,
                "weights": None if self.weights is None else list(self.weights)}


def parse_constraints(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ValueError(f"malformed constraints {text!r}; expected e.g. '8,10,15'") from None
    if not vals or any(not math.isfinite(v) or v <= 0 for v in vals) or any(b <= a for a, b in zip(vals, vals[1:])):
        raise ValueError(f"constraints must be positive and strictly increasing: {text!r}")
    return vals


@dataclass
class RankedArch:
    genes: np.ndarray
    latency: float
    proxy: float


@dataclass
class QtReport:
    space: SearchSpace
    constraints: tuple[float, ...]
    scores: tuple[float, ...]
    total: float
    feasible_counts: tuple[int, ...]
    pool_size: int
    top: tuple[tuple[RankedArch, ...], ...] = field(repr=False)

    def top_architectures(self, i: int) -> list[Architecture]:
        lay = self.space.hyperspace.layout
        return [lay.to_arch(self.space, r.genes) for r in self.top[i]]

    def to_dict(self, with_archs: bool = False) -> dict:
        per = []
        for i, t in enumerate(self.constraints):
            archs = self.top_architectures(i)
            items = []
            for a, r in zip(archs, self.top[i]):
                item = {"arch": encode_architecture(a), "latency_ms": r.latency, "proxy": r.proxy}
                if with_archs:
                    item["architecture"] = arch_to_dict(a)
                items.append(item)
            per.append({"latency_ms": t, "score": self.scores[i],
                        "feasible": self.feasible_counts[i], "top": items})
        return {"format": QT_FORMAT, "version": FORMAT_VERSION, "space": self.space.encoding,
                "hyperspace": self.space.hyperspace.name, "total": self.total,
                "pool_size": self.pool_size, "constraints": per}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), sort_keys=True, indent=1)


def space_seed(space: SearchSpace, seed: int) -> np.random.SeedSequence:
    """Seed stream owned by one space, so its score is a pure function of it."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, len(space.block_ids),
                                   *space.block_ids, *space.width_starts])


def sample_pool(space: SearchSpace, n: int, seed: int) -> np.ndarray:
    """Deduplicated, lexicographically ordered gene rows of ``n`` uniform draws."""
    rng = np.random.default_rng(space_seed(space, seed))
    genes = space.hyperspace.layout.sample(space, n, rng)
    # byte rows compare like the gene rows (every choice index fits in a byte)
    packed = np.ascontiguousarray(genes.astype(np.uint8))
    keys = packed.view(np.dtype((np.void, packed.shape[1]))).ravel()
    _, first = np.unique(keys, return_index=True)
    return genes[first]


def rank_feasible(lat: np.ndarray, proxy: np.ndarray, limit: float) -> np.ndarray:
    """Indices with ``lat <= limit`` by proxy desc, latency asc, then pool order."""
    idx = np.flatnonzero(lat <= limit)
    return idx[np.lexsort((idx, lat[idx], -proxy[idx]))]


def score_pool(space: SearchSpace, genes: np.ndarray, lat: np.ndarray, proxy: np.ndarray,
               cfg: QtConfig) -> QtReport:
    weights = cfg.weights or (1.0,) * len(cfg.constraints)
    scores, counts, tops = [], [], []
    for t, wt in zip(cfg.constraints, weights):
        order = rank_feasible(lat, proxy, t)
        top = order[:cfg.top_k]
        counts.append(int(order.size))
        scores.append(wt * float(np.mean(proxy[top])) if top.size else 0.0)
        tops.append(tuple(RankedArch(genes[j], float(lat[j]), float(proxy[j])) for j in top))
    return QtReport(space, cfg.constraints, tuple(scores), float(sum(scores)), tuple(counts),
                    int(genes.shape[0]), tuple(tops))


def evaluate_qt(space: SearchSpace, lut: AccuracyLut, predictor, cfg: QtConfig,
                evaluator: Evaluator | None = None) -> QtReport:
    ev = evaluator or Evaluator(space.hyperspace, predictor, lut, cfg.precision)
    genes = sample_pool(space, cfg.num_samples, cfg.seed)
    return score_pool(space, genes, ev.latency(space, genes), ev.proxy(space, genes), cfg)


def top_tier(space: SearchSpace, lut: AccuracyLut, predictor, limit: float, k: int = 20,
             seed: int = 0, num_samples: int = 5000, precision: str = "int8") -> list[Architecture]:
    """Best ``k`` feasible architectures of the sample pool, best first."""
    ev = Evaluator(space.hyperspace, predictor, lut, precision)
    genes = sample_pool(space, num_samples, seed)
    order = rank_feasible(ev.latency(space, genes), ev.proxy(space, genes), limit)[:k]
    lay = space.hyperspace.layout
    return [lay.to_arch(space, genes[j]) for j in order]


def brute_force_qt(space: SearchSpace, lut: AccuracyLut, predictor, constraints: Sequence[float],
                   top_k: int = 20, precision: str = "int8") -> tuple[float, ...]:
    """Reference scores by enumerating every architecture through the scalar path."""
    from .accmodel import accuracy_proxy
    from .archspace import iter_architectures
    from .predictor import predict_latency

    rows = [(predict_latency(predictor, a, precision), accuracy_proxy(lut, a, precision))
            for a in iter_architectures(space)]
    out = []
    for t in constraints:
        feas = sorted((p for lat, p in rows if lat <= t), reverse=True)[:top_k]
        out.append(sum(feas) / len(feas) if feas else 0.0)
    return tuple(out)

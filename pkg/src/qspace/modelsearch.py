"""Latency-constrained evolutionary search for architectures inside one space."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .accmodel import AccuracyLut
from .archspace import (Architecture, SearchSpace, arch_to_dict, describe, encode_architecture)
from .engine import Evaluator
from .errors import InfeasibleConstraint

RESULT_FORMAT = "qspace.model_search"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSearchConfig:
    constraint: float
    budget: int = 5000
    population: int = 100
    tournament: int = 10
    mutation_rate: float = 0.1
    crossover: float = 0.5
    seed: int = 0
    precision: str = "int8"
    patience: int = 50  # generations without a new evaluation before stopping
    max_generations: int | None = None  # default: 10 * budget / population

    def __post_init__(self):
        if self.budget < self.population:
            raise ValueError("budget must be >= population")
        for nm in ("mutation_rate", "crossover"):
            v = getattr(self, nm)
            if not 0 < v <= 1:
                raise ValueError(f"{nm} must be in (0, 1], got {v}")
        if self.population < 1 or self.tournament < 1:
            raise ValueError("population and tournament must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("constraint", "budget", "population", "tournament",
                                              "mutation_rate", "crossover", "seed", "precision")}


@dataclass
class ModelSearchResult:
    space: SearchSpace
    best: Architecture
    best_latency: float
    best_proxy: float
    front: list[tuple[float, float, str]]
    evaluations: int
    generations: int
    best_per_generation: list[float] = field(default_factory=list)
    config: ModelSearchConfig | None = None

    def to_dict(self) -> dict:
        return {
            "format": RESULT_FORMAT, "version": FORMAT_VERSION,
            "space": self.space.encoding, "hyperspace": self.space.hyperspace.name,
            "config": self.config.to_dict() if self.config else None,
            "best": {"arch": encode_architecture(self.best), "latency_ms": self.best_latency,
                     "proxy": self.best_proxy, "architecture": arch_to_dict(self.best),
                     "stages": describe(self.best)},
            "pareto_front": [{"latency_ms": lat, "proxy": p, "arch": enc} for lat, p, enc in self.front],
            "evaluations": self.evaluations, "generations": self.generations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def pareto_front(points) -> list[tuple[float, float, str]]:
    """Nondominated (latency, proxy, encoding) points, latency ascending, proxy strictly rising."""
    pts = sorted(((float(lat), float(p), str(enc)) for lat, p, enc in points),
                 key=lambda t: (t[0], -t[1], t[2]))
    out, best = [], -np.inf
    for t in pts:
        if t[1] > best:
            out.append(t)
            best = t[1]
    return out


class _Cache:
    """Distinct gene rows evaluated so far, with budget accounting."""

    def __init__(self, ev: Evaluator, space: SearchSpace, budget: int):
        self.ev, self.space, self.budget = ev, space, budget
        self.seen: dict[bytes, int] = {}
        self.genes: list[np.ndarray] = []
        self.lat: list[float] = []
        self.proxy: list[float] = []

    @property
    def used(self) -> int:
        return len(self.genes)

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        """Indices into the cache for ``rows``; -1 for rows cut by the budget."""
        out = np.full(len(rows), -1, dtype=np.int64)
        new_rows = []
        pending: dict[bytes, int] = {}
        for i, r in enumerate(rows):
            key = r.tobytes()
            if key in self.seen:
                out[i] = self.seen[key]
            elif key in pending:
                out[i] = pending[key]
            elif self.used + len(new_rows) < self.budget:
                pending[key] = self.used + len(new_rows)
                out[i] = pending[key]
                new_rows.append(r)
        if new_rows:
            g = np.stack(new_rows)
            lat = self.ev.latency(self.space, g)
            prox = self.ev.proxy(self.space, g)
            for r, la, p in zip(g, lat, prox):
                self.seen[r.tobytes()] = len(self.genes)
                self.genes.append(r)
                self.lat.append(float(la))
                self.proxy.append(float(p))
        return out


def _rank(cache: _Cache, ids) -> list[int]:
    """Proxy desc, latency asc, gene order."""
    return sorted(ids, key=lambda j: (-cache.proxy[j], cache.lat[j], tuple(cache.genes[j])))


def search_models(space: SearchSpace, lut: AccuracyLut, predictor, cfg: ModelSearchConfig,
                  evaluator: Evaluator | None = None) -> ModelSearchResult:
    hs = space.hyperspace
    lay = hs.layout
    ev = evaluator or Evaluator(hs, predictor, lut, cfg.precision)
    rng = np.random.default_rng(cfg.seed)
    highs = lay.highs(space)
    cache = _Cache(ev, space, cfg.budget)
    T = cfg.constraint

    # rejection-sampled feasible start
    pop: list[int] = []
    draws = 0
    limit = 100 * cfg.population
    while len(pop) < cfg.population and draws < limit and cache.used < cfg.budget:
        n = min(cfg.population, limit - draws)
        ids = cache.evaluate(lay.sample(space, n, rng))
        draws += n
        for j in ids:
            if j >= 0 and cache.lat[j] <= T and j not in pop:
                pop.append(int(j))
    if not pop:
        raise InfeasibleConstraint(
            f"no architecture of {space.encoding} met {T} ms in {draws} draws")
    pop = _rank(cache, pop)[:cfg.population]
    best_hist = [cache.proxy[pop[0]]]

    # crossover cut points sit on stage boundaries
    cuts = np.array(lay.stage_off, dtype=np.int64)
    gens, idle = 0, 0
    max_gens = cfg.max_generations or max(1, 10 * cfg.budget // cfg.population)
    while cache.used < cfg.budget and idle < cfg.patience and gens < max_gens:
        gens += 1
        P = len(pop)
        parents = np.array([cache.genes[j] for j in pop])
        m, t = cfg.population, min(cfg.tournament, P)
        # population is sorted best first, so the smallest drawn index wins
        grid = np.broadcast_to(np.arange(P), (2 * m, P))
        wins = rng.permuted(grid, axis=1)[:, :t].min(axis=1)
        win_a, win_b = wins[:m], wins[m:]
        cross = rng.random(m) < cfg.crossover
        cut = rng.choice(cuts, size=m)
        cols = np.arange(lay.width)[None, :]
        take_b = cross[:, None] & (cols >= cut[:, None])
        kids = np.where(take_b, parents[win_b], parents[win_a])
        before = lay.active_mask(kids)
        flip = rng.random(kids.shape) < cfg.mutation_rate
        kids = np.where(flip, rng.integers(0, highs, size=kids.shape), kids)
        # layers switched on by a depth change get random choices
        woke = lay.active_mask(kids) & ~before
        kids = np.where(woke, rng.integers(0, highs, size=kids.shape), kids)
        kids = lay.canonical(kids)
        before_used = cache.used
        ids = cache.evaluate(kids)
        idle = idle + 1 if cache.used == before_used else 0
        pool = set(pop)
        pool.update(int(j) for j in ids if j >= 0 and cache.lat[j] <= T)
        pop = _rank(cache, pool)[:cfg.population]
        best_hist.append(cache.proxy[pop[0]])

    feas = [j for j in range(cache.used) if cache.lat[j] <= T]
    best = pop[0]
    front = pareto_front((cache.lat[j], cache.proxy[j], encode_architecture(lay.to_arch(space, cache.genes[j])))
                         for j in feas)
    return ModelSearchResult(space, lay.to_arch(space, cache.genes[best]), cache.lat[best],
                             cache.proxy[best], front, cache.used, gens, best_hist, cfg)


def exhaustive_best(space: SearchSpace, lut: AccuracyLut, predictor, constraint: float,
                    precision: str = "int8"):
    """Constrained argmax by enumerating every architecture (scalar path)."""
    from .accmodel import accuracy_proxy
    from .archspace import iter_architectures
    from .predictor import predict_latency

    best = None
    for a in iter_architectures(space):
        lat = predict_latency(predictor, a, precision)
        if lat <= constraint:
            p = accuracy_proxy(lut, a, precision)
            if best is None or (p, -lat) > (best[1], -best[2]):
                best = (a, p, lat)
    return best

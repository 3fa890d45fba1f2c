"""Aging evolution over search spaces, plus a random-search baseline."""
from __future__ import annotations

import hashlib
import heapq
import json
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .accmodel import AccuracyLut
from .archspace import Hyperspace, SearchSpace
from .engine import Evaluator
from .qtscore import QtConfig, QtReport, evaluate_qt


@dataclass(frozen=True)
class EvolutionConfig:
    n_total: int = 5000
    population: int = 500
    sample: int = 125
    qt: QtConfig = field(default_factory=QtConfig)
    seed: int = 0
    feasibility_retry_cap: int = 20
    threads: int = 1

    def __post_init__(self):
        if not 1 <= self.sample <= self.population <= self.n_total:
            raise ValueError("need 1 <= sample <= population <= n_total")
        if self.feasibility_retry_cap < 0:
            raise ValueError("feasibility_retry_cap must be >= 0")

    @property
    def iterations(self) -> int:
        return (self.n_total - self.population) // 2

    def to_dict(self) -> dict:
        return {"n_total": self.n_total, "population": self.population, "sample": self.sample,
                "seed": self.seed, "feasibility_retry_cap": self.feasibility_retry_cap,
                "qt": self.qt.to_dict()}


@dataclass
class Member:
    space: SearchSpace
    score: float
    uid: int  # creation index, also the age order


class SpaceScorer:
    """Memoised Q-T totals; a space's score depends only on the space and config."""

    def __init__(self, hs: Hyperspace, lut: AccuracyLut, predictor, qt: QtConfig):
        self.hs = hs
        self.lut = lut
        self.predictor = predictor
        self.qt = qt
        self.evaluator = Evaluator(hs, predictor, lut, qt.precision)
        self.reports: dict[str, QtReport] = {}
        self.calls = 0

    def report(self, space: SearchSpace) -> QtReport:
        self.calls += 1
        rep = self.reports.get(space.encoding)
        if rep is None:
            rep = evaluate_qt(space, self.lut, self.predictor, self.qt, self.evaluator)
            self.reports[space.encoding] = rep
        return rep

    def __call__(self, space: SearchSpace) -> float:
        return self.report(space).total

    def min_latency(self, space: SearchSpace) -> float:
        zero = np.zeros((1, self.hs.layout.width), dtype=np.int64)
        return float(self.evaluator.latency(space, zero)[0])


def initialize(hs: Hyperspace, population: int, seed: int | np.random.Generator, scorer=None) -> list[Member]:
    """``population`` uniformly random spaces in creation order, scored if ``scorer`` is given."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    for uid in range(population):
        sp = hs.random_space(rng)
        out.append(Member(sp, scorer(sp) if scorer else float("nan"), uid))
    return out


def _mutate(parent: SearchSpace, rng: np.random.Generator, stage: int | None, which: str):
    hs = parent.hyperspace
    n = hs.num_stages

    def options(i):
        if which == "block":
            return [b for b in hs.stages[i].block_choices if b != parent.block_ids[i]]
        return [s for s in range(hs.stages[i].window_count) if s != parent.width_starts[i]]

    first = int(rng.integers(n)) if stage is None else stage
    order = [first] + [int(i) for i in rng.permutation([i for i in range(n) if i != first])]
    for i in order:
        opts = options(i)
        if opts:
            v = opts[int(rng.integers(len(opts)))]
            child = parent.with_stage(i, block=v) if which == "block" else parent.with_stage(i, start=v)
            return child, i, False
    return parent, first, True


def mutate_block_type(parent: SearchSpace, rng: np.random.Generator, stage: int | None = None):
    """Change one stage's block id to a different legal value.

    Returns ``(child, stage, noop)``.  A stage with a single legal block is
    skipped in favour of another; ``noop`` is set only when every stage is
    fixed, and the child is then the parent itself.
    """
    return _mutate(parent, rng, stage, "block")


def mutate_width(parent: SearchSpace, rng: np.random.Generator, stage: int | None = None):
    """Move one stage's width window to a different legal start."""
    return _mutate(parent, rng, stage, "width")


def feasibility_screen(child: SearchSpace, remutate, min_latency, t_max: float, cap: int):
    """Re-draw ``child`` via ``remutate()`` while its smallest architecture misses ``t_max``.

    Gives up after ``cap`` re-draws and keeps the last child.  Returns
    ``(child, retries, feasible)``.
    """
    tries = 0
    while True:
        ok = min_latency(child) <= t_max
        if ok or tries >= cap:
            return child, tries, ok
        child = remutate()
        tries += 1


@dataclass
class EvolutionLog:
    records: list[dict] = field(default_factory=list)

    def append(self, rec: dict) -> None:
        self.records.append(rec)

    def lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for ln in self.lines():
                f.write(ln + "\n")

    def digest(self) -> str:
        h = hashlib.sha256()
        for ln in self.lines():
            h.update(ln.encode())
            h.update(b"\n")
        return h.hexdigest()

    @property
    def best_curve(self) -> list[float]:
        return [r["best_score"] for r in self.records]


@dataclass
class EvolutionResult:
    best: SearchSpace
    best_score: float
    log: EvolutionLog
    history: list[tuple[str, float]]  # every evaluation in order, initial population first
    scorer: SpaceScorer = field(repr=False)

    @property
    def best_report(self) -> QtReport:
        return self.scorer.report(self.best)


def _best_so_far(history):
    out, cur = [], -np.inf
    for _, s in history:
        cur = max(cur, s)
        out.append(cur)
    return out


def evolve(hs: Hyperspace, cfg: EvolutionConfig, lut: AccuracyLut, predictor,
           scorer: SpaceScorer | None = None) -> EvolutionResult:
    scorer = scorer or SpaceScorer(hs, lut, predictor, cfg.qt)
    rng = np.random.default_rng(cfg.seed)
    t_max = max(cfg.qt.constraints)
    pop: deque[Member] = deque()
    history: list[tuple[str, float]] = []
    best: Member | None = None
    log = EvolutionLog()
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def consider(m: Member):
        nonlocal best
        history.append((m.space.encoding, m.score))
        if best is None or m.score > best.score:
            best = m

    for m in initialize(hs, cfg.population, rng, scorer):
        pop.append(m)
        consider(m)
    uid = cfg.population
    try:
        for it in range(cfg.iterations):
            idx = rng.choice(len(pop), size=cfg.sample, replace=False)
            # deque order is age order, so the smallest index wins ties
            pi = min(idx, key=lambda j: (-pop[j].score, j))
            parent = pop[int(pi)]
            stage = int(rng.integers(hs.num_stages))
            kids, meta = [], []
            for mut in (mutate_block_type, mutate_width):
                child, st, noop = mut(parent.space, rng, stage)
                child, tries, ok = feasibility_screen(
                    child, lambda mut=mut: mut(parent.space, rng)[0], scorer.min_latency, t_max,
                    cfg.feasibility_retry_cap)
                kids.append(child)
                meta.append({"stage": st + 1, "noop": noop, "retries": tries, "feasible_min": ok})
            if pool is not None:
                # reports are memoised per encoding, so the merge order cannot matter
                scores = list(pool.map(scorer, kids))
            else:
                scores = [scorer(c) for c in kids]
            evicted = [pop.popleft(), pop.popleft()]
            for c, s in zip(kids, scores):
                m = Member(c, s, uid)
                uid += 1
                pop.append(m)
                consider(m)
            log.append({
                "iteration": it + 1,
                "parent": parent.space.encoding,
                "parent_uid": parent.uid,
                "parent_score": parent.score,
                "children": [c.encoding for c in kids],
                "child_uids": [uid - 2, uid - 1],
                "scores": scores,
                "mutations": meta,
                "evicted": [e.space.encoding for e in evicted],
                "evicted_uids": [e.uid for e in evicted],
                "population": len(pop),
                "best": best.space.encoding,
                "best_score": best.score,
            })
    finally:
        if pool is not None:
            pool.shutdown()
    return EvolutionResult(best.space, best.score, log, history, scorer)


def random_search(hs: Hyperspace, n: int, lut: AccuracyLut, predictor, qt: QtConfig, seed: int = 0,
                  scorer: SpaceScorer | None = None) -> list[tuple[str, float]]:
    """``n`` uniformly random spaces scored in draw order (the comparison baseline)."""
    scorer = scorer or SpaceScorer(hs, lut, predictor, qt)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        sp = hs.random_space(rng)
        out.append((sp.encoding, scorer(sp)))
    return out


def best_curve(history: list[tuple[str, float]]) -> np.ndarray:
    """Best score seen after each evaluation."""
    return np.asarray(_best_so_far(history))


def top_mean_curve(history: list[tuple[str, float]], k: int = 10) -> np.ndarray:
    """Mean score of the best ``k`` distinct spaces seen after each evaluation.

    Before ``k`` distinct spaces exist the mean is over those seen so far.
    """
    seen: dict[str, float] = {}
    out = []
    for enc, s in history:
        seen[enc] = s
        top = heapq.nlargest(k, seen.values())
        out.append(sum(top) / len(top))
    return np.asarray(out)


def compare_with_random(hs: Hyperspace, cfg: EvolutionConfig, lut: AccuracyLut, predictor,
                        seed: int | None = None, scorer: SpaceScorer | None = None, k: int = 10) -> dict:
    """Evolution and random search at the same evaluation budget.

    The budget is the number of spaces evolution scores (initial population
    plus two per iteration).  Both runs are summarised by the mean, over the
    whole budget, of their top-``k`` curve and of their best-so-far curve.
    """
    scorer = scorer or SpaceScorer(hs, lut, predictor, cfg.qt)
    seed = cfg.seed if seed is None else seed
    res = evolve(hs, cfg, lut, predictor, scorer)
    base = random_search(hs, len(res.history), lut, predictor, cfg.qt, seed + 1_000_003, scorer)
    te, tr = top_mean_curve(res.history, k), top_mean_curve(base, k)
    be, br = best_curve(res.history), best_curve(base)
    return {"evolution_top": te, "random_top": tr,
            "evolution_top_mean": float(te.mean()), "random_top_mean": float(tr.mean()),
            "evolution_best_curve": be, "random_best_curve": br,
            "evolution_best_mean": float(be.mean()), "random_best_mean": float(br.mean()),
            "evolution_best": float(be[-1]), "random_best": float(br[-1]),
            "best": res.best.encoding}

"""Grid-interpolating per-kernel latency predictor.

Samples are grouped by (kind, precision, activation, stride).  Each group is
laid onto a dense rectilinear grid over its numeric axes (duplicates are
averaged, interior holes interpolated log-log along each axis and the rest
copied from the nearest measured cell) and queried by
multilinear interpolation, so predictions are exact on measured grid points
and always stay between the surrounding measurements.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .archspace import Architecture
from .costmodel import (ACT, ADD, CONV, DWCONV, FC, POOL, SE, Kernel, LatencySample, decompose)
from .errors import FormatError, InsufficientSamples

PREDICTOR_FORMAT = "qspace.latency_predictor"
FORMAT_VERSION = 1

AXES = {
    CONV: ("hw", "cin", "cout", "k"),
    DWCONV: ("hw", "cin", "k"),
    SE: ("hw", "cin"),
    FC: ("cin", "cout"),
    POOL: ("hw", "cin"),
    ADD: ("hw", "cin"),
    ACT: ("hw", "cin"),
}


def _coords(kind: str, kernels: Sequence[Kernel]) -> np.ndarray:
    names = AXES[kind]
    get = {"hw": lambda k: k.h, "cin": lambda k: k.cin, "cout": lambda k: k.cout, "k": lambda k: k.k}
    out = np.zeros((len(kernels), _kernels.MAX_AXES), dtype=np.float64)
    for j, nm in enumerate(names):
        f = get[nm]
        out[:, j] = [f(k) for k in kernels]
    return out


@dataclass
class GridTable:
    axes: list[np.ndarray]
    values: np.ndarray  # shape = tuple(len(a) for a in axes)

    def __post_init__(self):
        n = _kernels.MAX_AXES
        lens = [len(a) for a in self.axes] + [1] * (n - len(self.axes))
        maxlen = max(lens)
        pad = np.zeros((n, maxlen), dtype=np.float64)
        for d, a in enumerate(self.axes):
            pad[d, :len(a)] = a
        self._axes = pad
        self._lens = np.array(lens, dtype=np.int64)
        strides = np.ones(n, dtype=np.int64)
        for d in range(n - 2, -1, -1):
            strides[d] = strides[d + 1] * lens[d + 1]
        self._strides = strides
        self._flat = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        return _kernels.interp(self._axes, self._lens, self._strides, self._flat,
                               np.ascontiguousarray(coords, dtype=np.float64))


def _fill_nearest(values: np.ndarray, filled: np.ndarray) -> np.ndarray:
    if filled.all():
        return values
    idx = np.argwhere(filled)
    flat = values.copy()
    for cell in np.argwhere(~filled):
        dist = np.abs(idx - cell).sum(axis=1)
        flat[tuple(cell)] = values[tuple(idx[int(np.argmin(dist))])]
    return flat


def _fill_interior(axes: list[np.ndarray], values: np.ndarray, filled: np.ndarray):
    """Estimate holes bracketed by measurements on an axis line; log-log, averaged over axes."""
    logv = np.log(np.where(filled, values, 1.0))
    acc = np.zeros(values.shape)
    hits = np.zeros(values.shape)
    for d, ax in enumerate(axes):
        if len(ax) < 3:
            continue
        x = np.log(ax)
        lv = np.moveaxis(logv, d, -1).reshape(-1, len(ax))
        f = np.moveaxis(filled, d, -1).reshape(-1, len(ax))
        est = np.zeros(lv.shape)
        got = np.zeros(lv.shape, dtype=bool)
        for r in np.flatnonzero(~f.all(axis=1) & (f.sum(axis=1) >= 2)):
            m = f[r]
            xs = x[m]
            miss = ~m & (x > xs[0]) & (x < xs[-1])
            est[r, miss] = np.interp(x[miss], xs, lv[r, m])
            got[r, miss] = True
        shape = np.moveaxis(values, d, -1).shape
        acc += np.moveaxis(est.reshape(shape), -1, d)
        hits += np.moveaxis(got.reshape(shape), -1, d)
    out = np.where(hits > 0, np.exp(acc / np.maximum(hits, 1)), values)
    return np.where(filled, values, out), filled | (hits > 0)


def _build_table(kind: str, coords: np.ndarray, lat: np.ndarray) -> GridTable:
    nax = len(AXES[kind])
    axes, pos = [], []
    for d in range(nax):
        a, inv = np.unique(coords[:, d], return_inverse=True)
        axes.append(a)
        pos.append(inv.reshape(-1))
    shape = tuple(len(a) for a in axes)
    flat = np.ravel_multi_index(tuple(pos), shape)
    total = np.bincount(flat, weights=lat, minlength=int(np.prod(shape)))
    count = np.bincount(flat, minlength=int(np.prod(shape)))
    vals = np.where(count > 0, total / np.maximum(count, 1), 0.0).reshape(shape)
    filled = (count > 0).reshape(shape)
    if not filled.all() and all((a > 0).all() for a in axes):
        vals, filled = _fill_interior(axes, vals, filled)
    vals = _fill_nearest(vals, filled)
    return GridTable(axes, vals)


TableKey = tuple  # (kind, precision, activation, stride)


@dataclass
class LatencyPredictor:
    tables: dict[TableKey, GridTable]
    device: str = ""
    granularity: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._cache: dict = {}

    @property
    def kinds(self) -> set[str]:
        return {k[0] for k in self.tables}

    def predict_kernels(self, kernels: Sequence[Kernel], precision: str) -> np.ndarray:
        """Latency (ms) of each kernel, batched by table."""
        out = np.zeros(len(kernels), dtype=np.float64)
        groups: dict[TableKey, list[int]] = {}
        for i, k in enumerate(kernels):
            groups.setdefault((k.kind, precision, k.activation, k.stride), []).append(i)
        kinds = self.kinds
        for key, idx in groups.items():
            tab = self.tables.get(key)
            if tab is None:
                kind = key[0]
                detail = (f"no samples for kind {kind!r}" if kind not in kinds else
                          f"no samples for {kind} precision={key[1]} activation={key[2]} stride={key[3]}")
                raise InsufficientSamples(kind, detail)
            out[idx] = tab(_coords(key[0], [kernels[i] for i in idx]))
        return out

    def predict_kernel(self, kernel: Kernel, precision: str) -> float:
        return float(self.predict_kernels([kernel], precision)[0])

    # -- serialisation ------------------------------------------------
    def to_dict(self) -> dict:
        tabs = []
        for key in sorted(self.tables):
            t = self.tables[key]
            tabs.append({
                "kind": key[0], "precision": key[1], "activation": key[2], "stride": key[3],
                "axes": {nm: [float(v) for v in a] for nm, a in zip(AXES[key[0]], t.axes)},
                "values": [float(v) for v in t.values.reshape(-1)],
            })
        return {"format": PREDICTOR_FORMAT, "version": FORMAT_VERSION, "device": self.device,
                "granularity": self.granularity, "meta": self.meta, "tables": tabs}

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyPredictor":
        if d.get("format") != PREDICTOR_FORMAT:
            raise FormatError(f"not a latency predictor document: format={d.get('format')!r}")
        if d.get("version") != FORMAT_VERSION:
            raise FormatError(f"unsupported latency predictor version {d.get('version')!r}")
        tables = {}
        try:
            for t in d["tables"]:
                kind = t["kind"]
                axes = [np.asarray(t["axes"][nm], dtype=np.float64) for nm in AXES[kind]]
                vals = np.asarray(t["values"], dtype=np.float64).reshape([len(a) for a in axes])
                tables[(kind, t["precision"], t["activation"], int(t["stride"]))] = GridTable(axes, vals)
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"malformed latency predictor: {exc!r}") from exc
        return cls(tables, d.get("device", ""), int(d.get("granularity", 0)), d.get("meta", {}))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True, separators=(",", ":"))
            f.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "LatencyPredictor":
        try:
            with open(path) as f:
                d = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not JSON ({exc})") from exc
        return cls.from_dict(d)


def train_predictor(samples: Iterable[LatencySample], device: str = "", granularity: int = 0) -> LatencyPredictor:
    groups: dict[TableKey, list[LatencySample]] = {}
    for s in samples:
        k = s.kernel
        if k.kind not in AXES:
            raise FormatError(f"unknown kernel kind {k.kind!r}")
        groups.setdefault((k.kind, s.precision, k.activation, k.stride), []).append(s)
    if not groups:
        raise InsufficientSamples("*", "no latency samples")
    tables = {}
    for key in sorted(groups):
        grp = groups[key]
        coords = _coords(key[0], [s.kernel for s in grp])
        lat = np.array([s.latency_ms for s in grp], dtype=np.float64)
        tables[key] = _build_table(key[0], coords, lat)
    return LatencyPredictor(tables, device, granularity)


def predict_latency(predictor, arch: Architecture, precision: str = "int8") -> float:
    """Model latency as the sum of predicted kernel latencies."""
    return float(np.sum(predictor.predict_kernels(decompose(arch), precision)))

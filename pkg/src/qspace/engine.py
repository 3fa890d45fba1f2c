"""Vectorised latency and loss for many architectures of one space.

Every distinct layer configuration a hyperspace allows is priced once through
the same decomposition used for single architectures, then looked up per
gene row.  Tables are cached on the predictor / LUT object, which are
immutable after construction.
"""
from __future__ import annotations

import itertools

import numpy as np

from . import _kernels
from .accmodel import AccuracyLut, lut_lookup_loss, proxy_from_loss
from .archspace import Hyperspace, SearchSpace, _out
from .costmodel import _stem_block_act, head_kernels, layer_kernels, stem_conv_kernels


def _cache(obj) -> dict:
    return obj.__dict__.setdefault("_qspace_tables", {})


def _price(predictor, shape, cells, precision) -> np.ndarray:
    """Sum predicted kernel latencies per cell; ``cells`` yields (flat index, kernels)."""
    owners, kernels = [], []
    for idx, ks in cells:
        owners.extend([idx] * len(ks))
        kernels.extend(ks)
    out = np.zeros(int(np.prod(shape)), dtype=np.float64)
    if kernels:
        lat = predictor.predict_kernels(kernels, precision)
        np.add.at(out, np.asarray(owners, dtype=np.int64), lat)
    return out.reshape(shape)


class LatencyTables:
    """Per-layer latency tables for one (hyperspace, predictor, precision)."""

    def __init__(self, hs: Hyperspace, predictor, precision: str = "int8"):
        self.hs = hs
        self.predictor = predictor
        self.precision = precision
        self.layout = hs.layout
        self._stage: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        self._build_stem_head()

    @classmethod
    def get(cls, hs: Hyperspace, predictor, precision: str = "int8") -> "LatencyTables":
        c = _cache(predictor)
        key = ("lat", hs, precision)
        if key not in c:
            c[key] = cls(hs, predictor, precision)
        return c[key]

    def _sizes(self):
        """Per resolution: (stem block input, [stage inputs], head input)."""
        hs = self.hs
        out = []
        for r in hs.resolutions:
            h0 = _out(r, hs.stem.conv_stride)
            stages = hs.stage_input_sizes(r)
            last = stages[-1]
            out.append((h0, stages, _out(last, hs.stages[-1].stride)))
        return out

    def _build_stem_head(self):
        hs, st = self.hs, self.hs.stem
        sizes = self._sizes()
        R = len(hs.resolutions)
        cw, bw = st.conv_widths, st.block_widths
        g = hs.granularity
        act = _stem_block_act(hs)
        self.stem_conv = _price(self.predictor, (R, len(cw)), (
            (r * len(cw) + a, stem_conv_kernels(hs, res, c))
            for r, res in enumerate(hs.resolutions) for a, c in enumerate(cw)), self.precision)
        shape_f = (R, len(cw), len(bw), 1, 1)
        self.stem_first = _price(self.predictor, shape_f, (
            (np.ravel_multi_index((r, a, b, 0, 0), shape_f),
             layer_kernels(st.block_type, ci, co, st.block_kernel, st.block_expand, st.block_stride,
                           sizes[r][0], act, g))
            for r in range(R) for (a, ci), (b, co) in itertools.product(enumerate(cw), enumerate(bw))),
            self.precision)
        shape_r = (R, len(bw), len(bw), 1, 1)
        self.stem_rest = _price(self.predictor, shape_r, (
            (np.ravel_multi_index((r, a, b, 0, 0), shape_r),
             layer_kernels(st.block_type, ci, co, st.block_kernel, st.block_expand, 1,
                           _out(sizes[r][0], st.block_stride), act, g))
            for r in range(R) for (a, ci), (b, co) in itertools.product(enumerate(bw), enumerate(bw))),
            self.precision)
        last = hs.stages[-1].width_ladder
        self.head = _price(self.predictor, (R, len(last)), (
            (r * len(last) + a, head_kernels(hs, sizes[r][2], c))
            for r in range(R) for a, c in enumerate(last)), self.precision)

    def stage_tables(self, i: int, block: int) -> tuple[np.ndarray, np.ndarray]:
        key = (i, block)
        if key in self._stage:
            return self._stage[key]
        hs = self.hs
        st = hs.stages[i]
        g = hs.granularity
        spec = hs.blocks[block]
        act, ers = spec.activation, spec.expand_ratios
        prev = hs.stem.block_widths if i == 0 else hs.stages[i - 1].width_ladder
        lad, ks = st.width_ladder, st.kernel_choices
        R = len(hs.resolutions)
        sizes = [s[1][i] for s in self._sizes()]

        def cells(shape, cins, stride, hfun):
            for r in range(R):
                h = hfun(sizes[r])
                for (a, ci), (b, co), (c, k), (d, e) in itertools.product(
                        enumerate(cins), enumerate(lad), enumerate(ks), enumerate(ers)):
                    yield (np.ravel_multi_index((r, a, b, c, d), shape),
                           layer_kernels(block, ci, co, k, e, stride, h, act, g))

        sf = (R, len(prev), len(lad), len(ks), len(ers))
        first = _price(self.predictor, sf, cells(sf, prev, st.stride, lambda h: h), self.precision)
        sr = (R, len(lad), len(lad), len(ks), len(ers))
        rest = _price(self.predictor, sr, cells(sr, lad, 1, lambda h: _out(h, st.stride)), self.precision)
        self._stage[key] = (first, rest)
        return first, rest

    def latency(self, space: SearchSpace, genes: np.ndarray) -> np.ndarray:
        """Predicted model latency (ms) of every gene row of ``space``."""
        lay, hs = self.layout, self.hs
        g = np.atleast_2d(np.asarray(genes, dtype=np.int64))
        n = g.shape[0]
        ar = np.arange(n)
        res = np.ascontiguousarray(g[:, lay.res])
        out = self.stem_conv[res, g[:, lay.stem_conv]].copy()

        sd = np.ascontiguousarray(g[:, lay.stem_depth] + hs.stem.block_depth_range[0])
        sw = np.ascontiguousarray(g[:, lay.stem_w:lay.stem_w + lay.stem_dmax])
        zeros = np.zeros_like(sw)
        _kernels.stage_latency(self.stem_first, self.stem_rest, res,
                               np.ascontiguousarray(g[:, lay.stem_conv]), sd, zeros, sw, zeros, out)
        prev = sw[ar, sd - 1]
        for i, st in enumerate(hs.stages):
            first, rest = self.stage_tables(i, space.block_ids[i])
            d = np.ascontiguousarray(g[:, lay.depth_col(i)] + st.depth_range[0])
            w = np.ascontiguousarray(g[:, lay.w_cols(i)] + space.width_starts[i])
            _kernels.stage_latency(first, rest, res, np.ascontiguousarray(prev), d,
                                   np.ascontiguousarray(g[:, lay.k_cols(i)]), w,
                                   np.ascontiguousarray(g[:, lay.e_cols(i)]), out)
            prev = w[ar, d - 1]
        out += self.head[res, prev]
        return out


class LossTables:
    """Per-layer loss tables for one (hyperspace, LUT, precision)."""

    def __init__(self, hs: Hyperspace, lut: AccuracyLut, precision: str = "int8"):
        self.hs = hs
        self.lut = lut
        self.precision = precision
        self.layout = hs.layout
        self.fixed = lut.stem_loss.get(precision, 0.0) + lut.head_loss.get(precision, 0.0)
        self._stage: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    @classmethod
    def get(cls, hs: Hyperspace, lut: AccuracyLut, precision: str = "int8") -> "LossTables":
        c = _cache(lut)
        key = ("loss", hs, precision)
        if key not in c:
            c[key] = cls(hs, lut, precision)
        return c[key]

    def stage_tables(self, i: int, block: int) -> tuple[np.ndarray, np.ndarray]:
        key = (i, block)
        if key in self._stage:
            return self._stage[key]
        st = self.hs.stages[i]
        ers = self.hs.blocks[block].expand_ratios
        lad, ks = st.width_ladder, st.kernel_choices
        layer = np.full((len(ks), len(lad), len(ers)), np.nan)
        for (c, k), (b, w), (d, e) in itertools.product(enumerate(ks), enumerate(lad), enumerate(ers)):
            layer[c, b, d] = self.lut.entries.get((st.index, block, k, w, float(e), self.precision), np.nan)
        terms = self.lut.depth_losses.get((st.index, block, self.precision))
        depth = np.array([terms.get(dd, np.nan) if terms is not None else 0.0 for dd in st.depths])
        self._stage[key] = (layer, depth)
        return layer, depth

    def loss(self, space: SearchSpace, genes: np.ndarray) -> np.ndarray:
        lay, hs = self.layout, self.hs
        g = np.atleast_2d(np.asarray(genes, dtype=np.int64))
        out = np.full(g.shape[0], self.fixed)
        for i, st in enumerate(hs.stages):
            layer, depth = self.stage_tables(i, space.block_ids[i])
            didx = np.ascontiguousarray(g[:, lay.depth_col(i)])
            _kernels.stage_loss(layer, depth, didx, didx + st.depth_range[0],
                                np.ascontiguousarray(g[:, lay.k_cols(i)]),
                                np.ascontiguousarray(g[:, lay.w_cols(i)] + space.width_starts[i]),
                                np.ascontiguousarray(g[:, lay.e_cols(i)]), out)
        bad = np.flatnonzero(np.isnan(out))
        if bad.size:
            # the scalar path names the missing key
            lut_lookup_loss(self.lut, lay.to_arch(space, g[bad[0]]), self.precision)
        return out


class Evaluator:
    """Latency and accuracy proxy of gene rows, backed by cached tables."""

    def __init__(self, hs: Hyperspace, predictor, lut: AccuracyLut, precision: str = "int8"):
        self.hs = hs
        self.lat = LatencyTables.get(hs, predictor, precision)
        self.acc = LossTables.get(hs, lut, precision)

    def latency(self, space: SearchSpace, genes: np.ndarray) -> np.ndarray:
        return self.lat.latency(space, genes)

    def proxy(self, space: SearchSpace, genes: np.ndarray) -> np.ndarray:
        return proxy_from_loss(self.acc.loss(space, genes))

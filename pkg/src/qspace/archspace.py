"""Architectures, elastic stages, search spaces and the hyperspace grammar.

A :class:`Hyperspace` is the device-specific grammar; a :class:`SearchSpace`
fixes one block type and one width window per elastic stage and is written
as ``<block digits>-<window digits>`` (e.g. ``111111-000000``).  An
:class:`Architecture` is one concrete subnet of a space.

Internally, architectures of a space are also handled as integer *gene*
rows (see :class:`GeneLayout`), which is what the batched evaluators and the
search loops work on.
"""
from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import FormatError, InvalidArchitecture, MalformedEncoding, OutOfRangeDigit

HYPERSPACE_FORMAT = "qspace.hyperspace"
ARCH_FORMAT = "qspace.architecture"
FORMAT_VERSION = 1


class BlockType(enum.IntEnum):
    MBv1 = 0
    MBv2 = 1
    MBv3 = 2
    ResidualBottleneck = 3
    ResidualBottleneckSE = 4
    FusedMB = 5
    FusedMBSE = 6
    # structural roles, never searchable
    ConvStem = 7
    StemBlock = 8
    ClassifierHead = 9

    @property
    def searchable(self) -> bool:
        return self.value <= 6

    @property
    def has_se(self) -> bool:
        return self in (BlockType.MBv3, BlockType.ResidualBottleneckSE, BlockType.FusedMBSE)


NUM_SEARCHABLE = 7


@dataclass(frozen=True)
class BlockSpec:
    activation: str
    expand_ratios: tuple[float, ...]


@dataclass(frozen=True)
class ElasticStageSpec:
    index: int  # 1-based
    block_choices: tuple[int, ...]
    depth_range: tuple[int, int]
    kernel_choices: tuple[int, ...]
    stride: int
    width_ladder: tuple[int, ...]
    ck: int

    @property
    def depths(self) -> range:
        return range(self.depth_range[0], self.depth_range[1] + 1)

    @property
    def max_depth(self) -> int:
        return self.depth_range[1]

    @property
    def window_count(self) -> int:
        return len(self.width_ladder) - self.ck + 1

    def window(self, start: int) -> tuple[int, ...]:
        return self.width_ladder[start:start + self.ck]


@dataclass(frozen=True)
class StemSpec:
    conv_kernel: int
    conv_stride: int
    conv_widths: tuple[int, ...]
    conv_activation: str
    block_type: BlockType
    block_depth_range: tuple[int, int]
    block_kernel: int
    block_stride: int
    block_widths: tuple[int, ...]
    block_expand: float

    @property
    def block_depths(self) -> range:
        return range(self.block_depth_range[0], self.block_depth_range[1] + 1)


@dataclass(frozen=True)
class HeadSpec:
    feature_width: int
    num_classes: int
    activation: str


def _ladder(spec: dict, granularity: int) -> tuple[int, ...]:
    if "widths" in spec:
        return tuple(sorted(int(w) for w in spec["widths"]))
    step = int(spec.get("width_step", spec.get("granularity", granularity)))
    return tuple(range(int(spec["width_min"]), int(spec["width_max"]) + 1, step))


def _num(x: float) -> float | int:
    return int(x) if float(x).is_integer() else float(x)


@dataclass(frozen=True)
class Hyperspace:
    name: str
    granularity: int
    resolutions: tuple[int, ...]
    blocks: tuple[BlockSpec | None, ...]  # indexed by search id
    stem: StemSpec
    stages: tuple[ElasticStageSpec, ...]
    head: HeadSpec

    def __post_init__(self):
        g = self.granularity
        for st in self.stages:
            lad = st.width_ladder
            if any(b >= a for a, b in zip(lad[1:], lad)):
                raise FormatError(f"stage {st.index}: width ladder must be strictly increasing")
            if any(w % g for w in lad):
                raise FormatError(f"stage {st.index}: widths must be divisible by {g}")
            if not 1 <= st.ck <= len(lad):
                raise FormatError(f"stage {st.index}: ck={st.ck} outside 1..{len(lad)}")
            if st.depth_range[0] < 1 or st.depth_range[0] > st.depth_range[1]:
                raise FormatError(f"stage {st.index}: bad depth range {st.depth_range}")
            for b in st.block_choices:
                if not 0 <= b < NUM_SEARCHABLE or self.blocks[b] is None:
                    raise FormatError(f"stage {st.index}: block id {b} has no block spec")
        for w in self.stem.conv_widths + self.stem.block_widths:
            if w % g:
                raise FormatError(f"stem width {w} not divisible by {g}")

    # -- construction -------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Hyperspace":
        if d.get("format", HYPERSPACE_FORMAT) != HYPERSPACE_FORMAT:
            raise FormatError(f"not a hyperspace document: format={d.get('format')!r}")
        if d.get("version", FORMAT_VERSION) != FORMAT_VERSION:
            raise FormatError(f"unsupported hyperspace version {d.get('version')!r}")
        try:
            g = int(d["granularity"])
            blocks: list[BlockSpec | None] = [None] * NUM_SEARCHABLE
            for name, spec in d["blocks"].items():
                bid = BlockType[name].value
                blocks[bid] = BlockSpec(
                    activation=spec["activation"],
                    expand_ratios=tuple(sorted(_num(e) for e in spec["expand_ratios"])),
                )
            sc, sb = d["stem"]["conv"], d["stem"]["block"]
            stem = StemSpec(
                conv_kernel=int(sc["kernel"]),
                conv_stride=int(sc["stride"]),
                conv_widths=_ladder(sc, g),
                conv_activation=sc["activation"],
                block_type=BlockType[sb["type"]],
                block_depth_range=(int(sb["depth_range"][0]), int(sb["depth_range"][1])),
                block_kernel=int(sb["kernel"]),
                block_stride=int(sb["stride"]),
                block_widths=_ladder(sb, g),
                block_expand=_num(sb["expand_ratio"]),
            )
            stages = tuple(
                ElasticStageSpec(
                    index=i + 1,
                    block_choices=tuple(sorted(int(b) for b in s["block_choice_ids"])),
                    depth_range=(int(s["depth_range"][0]), int(s["depth_range"][1])),
                    kernel_choices=tuple(sorted(int(k) for k in s.get("kernel_choices", (3, 5, 7)))),
                    stride=int(s["stride"]),
                    width_ladder=_ladder(s, g),
                    ck=int(s["ck"]),
                )
                for i, s in enumerate(d["stages"])
            )
            h = d["head"]
            head = HeadSpec(int(h["feature_width"]), int(h["num_classes"]), h["activation"])
            res = tuple(sorted(int(r) for r in d.get("resolutions", (160, 176, 192, 208, 224))))
        except (KeyError, TypeError, IndexError) as exc:
            raise FormatError(f"malformed hyperspace document: {exc!r}") from exc
        return cls(d["name"], g, res, tuple(blocks), stem, stages, head)

    @classmethod
    def from_json(cls, path: str | Path) -> "Hyperspace":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def preset(cls, name: str) -> "Hyperspace":
        """Load a bundled hyperspace (``cpu_vnni``, ``pixel4``, ``mobilenetv2_ref``)."""
        text = resources.files("qspace").joinpath("data", f"{name}.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict[str, Any]:
        g = self.granularity
        return {
            "format": HYPERSPACE_FORMAT,
            "version": FORMAT_VERSION,
            "name": self.name,
            "granularity": g,
            "resolutions": list(self.resolutions),
            "blocks": {
                BlockType(i).name: {"activation": b.activation, "expand_ratios": list(b.expand_ratios)}
                for i, b in enumerate(self.blocks) if b is not None
            },
            "stem": {
                "conv": {"kernel": self.stem.conv_kernel, "stride": self.stem.conv_stride,
                         "widths": list(self.stem.conv_widths), "activation": self.stem.conv_activation},
                "block": {"type": self.stem.block_type.name,
                          "depth_range": list(self.stem.block_depth_range),
                          "kernel": self.stem.block_kernel, "stride": self.stem.block_stride,
                          "widths": list(self.stem.block_widths),
                          "expand_ratio": self.stem.block_expand},
            },
            "stages": [
                {"block_choice_ids": list(s.block_choices), "depth_range": list(s.depth_range),
                 "kernel_choices": list(s.kernel_choices), "stride": s.stride,
                 "widths": list(s.width_ladder), "ck": s.ck}
                for s in self.stages
            ],
            "head": {"feature_width": self.head.feature_width, "num_classes": self.head.num_classes,
                     "activation": self.head.activation},
        }

    # -- derived ------------------------------------------------------
    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @cached_property
    def multi_digit(self) -> bool:
        """Digit encoding needs every slot value below 10."""
        return any(max(s.block_choices) > 9 or s.window_count > 10 for s in self.stages)

    @cached_property
    def _digit_highs(self) -> np.ndarray:
        return np.array([len(s.block_choices) for s in self.stages]
                        + [s.window_count for s in self.stages], dtype=np.int64)

    @cached_property
    def _valid_digits(self) -> tuple[tuple[frozenset, int], ...]:
        return tuple((frozenset(s.block_choices), s.window_count) for s in self.stages)

    def space_count(self) -> int:
        """Number of distinct search spaces in this hyperspace."""
        return math.prod(len(s.block_choices) * s.window_count for s in self.stages)

    def iter_spaces(self) -> Iterable["SearchSpace"]:
        import itertools

        per_stage = [[(b, w) for b in s.block_choices for w in range(s.window_count)]
                     for s in self.stages]
        for combo in itertools.product(*per_stage):
            yield SearchSpace(self, tuple(c[0] for c in combo), tuple(c[1] for c in combo))

    def random_space(self, rng: np.random.Generator) -> "SearchSpace":
        d = rng.integers(0, self._digit_highs).tolist()
        n = len(self.stages)
        blocks = tuple(s.block_choices[j] for s, j in zip(self.stages, d[:n]))
        return SearchSpace(self, blocks, tuple(d[n:]))

    def random_spaces(self, rng: np.random.Generator, count: int) -> list["SearchSpace"]:
        """``count`` uniform draws with one RNG call (a different stream from ``random_space``)."""
        n = len(self.stages)
        pools = [s.block_choices for s in self.stages]
        out = []
        for row in rng.integers(0, self._digit_highs, size=(count, 2 * n)).tolist():
            out.append(SearchSpace(self, tuple(p[j] for p, j in zip(pools, row[:n])), tuple(row[n:])))
        return out

    @cached_property
    def layout(self) -> "GeneLayout":
        return GeneLayout(self)

    def stage_input_sizes(self, resolution: int) -> list[int]:
        """Input spatial size seen by each elastic stage."""
        h = _out(resolution, self.stem.conv_stride)
        h = _out(h, self.stem.block_stride)
        sizes = []
        for st in self.stages:
            sizes.append(h)
            h = _out(h, st.stride)
        return sizes


def _out(h: int, stride: int) -> int:
    return -(-h // stride)


_ENC_RE = re.compile(r"^([0-9,]+)-([0-9,]+)$")


@dataclass(frozen=True)
class SearchSpace:
    hyperspace: Hyperspace = field(repr=False)
    block_ids: tuple[int, ...]
    width_starts: tuple[int, ...]

    def __post_init__(self):
        hs = self.hyperspace
        valid = hs._valid_digits
        if len(self.block_ids) != len(valid) or len(self.width_starts) != len(valid):
            raise MalformedEncoding(f"expected {len(valid)} stages")
        for (pool, nw), b, w in zip(valid, self.block_ids, self.width_starts):
            if b not in pool or not 0 <= w < nw:
                self._reject()

    def _reject(self):
        for st, b, w in zip(self.hyperspace.stages, self.block_ids, self.width_starts):
            if b not in st.block_choices:
                raise OutOfRangeDigit(st.index, f"block id {b} not in pool {list(st.block_choices)}")
            if not 0 <= w < st.window_count:
                raise OutOfRangeDigit(st.index, f"window start {w} outside 0..{st.window_count - 1}")

    @property
    def encoding(self) -> str:
        return encode_space(self)

    def __str__(self) -> str:
        return self.encoding

    def block(self, i: int) -> BlockType:
        return BlockType(self.block_ids[i])

    def window(self, i: int) -> tuple[int, ...]:
        return self.hyperspace.stages[i].window(self.width_starts[i])

    def expand_ratios(self, i: int) -> tuple[float, ...]:
        return self.hyperspace.blocks[self.block_ids[i]].expand_ratios

    def activation(self, i: int) -> str:
        return self.hyperspace.blocks[self.block_ids[i]].activation

    def with_stage(self, i: int, block: int | None = None, start: int | None = None) -> "SearchSpace":
        b = list(self.block_ids)
        w = list(self.width_starts)
        if block is not None:
            b[i] = block
        if start is not None:
            w[i] = start
        return SearchSpace(self.hyperspace, tuple(b), tuple(w))


def encode_space(space: SearchSpace) -> str:
    if space.hyperspace.multi_digit:
        return ",".join(map(str, space.block_ids)) + "-" + ",".join(map(str, space.width_starts))
    return "".join(map(str, space.block_ids)) + "-" + "".join(map(str, space.width_starts))


def decode_space(enc: str, hs: Hyperspace) -> SearchSpace:
    m = _ENC_RE.match(enc.strip())
    if not m:
        raise MalformedEncoding(f"{enc!r} is not of the form <blocks>-<widths>")
    parts = []
    multi = hs.multi_digit
    for g in m.groups():
        if multi or "," in g:
            items = g.split(",")
            if any(not x for x in items):
                raise MalformedEncoding(f"empty field in {enc!r}")
            parts.append([int(x) for x in items])
        else:
            parts.append([int(c) for c in g])
    blocks, starts = parts
    n = len(hs.stages)
    if len(blocks) != n or len(starts) != n:
        raise MalformedEncoding(f"{enc!r} has {len(blocks)}/{len(starts)} digits, expected {n} per half")
    return SearchSpace(hs, tuple(blocks), tuple(starts))


# ---------------------------------------------------------------------------
# Architectures


@dataclass(frozen=True)
class StageArch:
    kernels: tuple[int, ...]
    widths: tuple[int, ...]
    expands: tuple[float, ...]

    @property
    def depth(self) -> int:
        return len(self.widths)


@dataclass(frozen=True)
class Architecture:
    space: SearchSpace = field(repr=False)
    resolution: int
    stem_width: int
    stem_widths: tuple[int, ...]
    stages: tuple[StageArch, ...]

    @property
    def depths(self) -> tuple[int, ...]:
        return tuple(s.depth for s in self.stages)

    def genes(self) -> np.ndarray:
        return self.space.hyperspace.layout.from_arch(self)


class GeneLayout:
    """Column layout mapping an architecture to a row of choice indices.

    Columns: resolution, stem conv width, stem depth, stem block widths
    (padded), then per stage: depth, kernels, widths (window-relative),
    expands (each padded to the stage max depth).  Slots past the active
    depth are always 0 so equal architectures give equal rows.
    """

    def __init__(self, hs: Hyperspace):
        self.hs = hs
        self.res = 0
        self.stem_conv = 1
        self.stem_depth = 2
        self.stem_w = 3
        self.stem_dmax = hs.stem.block_depth_range[1]
        col = 3 + self.stem_dmax
        self.stage_off: list[int] = []
        for st in hs.stages:
            self.stage_off.append(col)
            col += 1 + 3 * st.max_depth
        self.width = col

    def depth_col(self, i: int) -> int:
        return self.stage_off[i]

    def k_cols(self, i: int) -> slice:
        o, d = self.stage_off[i], self.hs.stages[i].max_depth
        return slice(o + 1, o + 1 + d)

    def w_cols(self, i: int) -> slice:
        o, d = self.stage_off[i], self.hs.stages[i].max_depth
        return slice(o + 1 + d, o + 1 + 2 * d)

    def e_cols(self, i: int) -> slice:
        o, d = self.stage_off[i], self.hs.stages[i].max_depth
        return slice(o + 1 + 2 * d, o + 1 + 3 * d)

    def highs(self, space: SearchSpace) -> np.ndarray:
        """Exclusive upper bound of each column for architectures of ``space``."""
        hs = self.hs
        h = np.ones(self.width, dtype=np.int64)
        h[self.res] = len(hs.resolutions)
        h[self.stem_conv] = len(hs.stem.conv_widths)
        h[self.stem_depth] = len(hs.stem.block_depths)
        h[self.stem_w:self.stem_w + self.stem_dmax] = len(hs.stem.block_widths)
        for i, st in enumerate(hs.stages):
            h[self.depth_col(i)] = len(st.depths)
            h[self.k_cols(i)] = len(st.kernel_choices)
            h[self.w_cols(i)] = st.ck
            h[self.e_cols(i)] = len(space.expand_ratios(i))
        return h

    def active_mask(self, genes: np.ndarray) -> np.ndarray:
        """Boolean mask of columns that are in use for each row."""
        hs = self.hs
        g = np.atleast_2d(genes)
        mask = np.ones(g.shape, dtype=bool)
        sd = g[:, self.stem_depth] + hs.stem.block_depth_range[0]
        j = np.arange(self.stem_dmax)
        mask[:, self.stem_w:self.stem_w + self.stem_dmax] = j[None, :] < sd[:, None]
        for i, st in enumerate(hs.stages):
            d = g[:, self.depth_col(i)] + st.depth_range[0]
            m = np.arange(st.max_depth)[None, :] < d[:, None]
            mask[:, self.k_cols(i)] = m
            mask[:, self.w_cols(i)] = m
            mask[:, self.e_cols(i)] = m
        return mask

    def canonical(self, genes: np.ndarray) -> np.ndarray:
        g = np.array(genes, dtype=np.int64, copy=True)
        g[~self.active_mask(g).reshape(g.shape)] = 0
        return g

    def from_arch(self, arch: Architecture) -> np.ndarray:
        hs, sp = self.hs, arch.space
        row = np.zeros(self.width, dtype=np.int64)
        try:
            row[self.res] = hs.resolutions.index(arch.resolution)
            row[self.stem_conv] = hs.stem.conv_widths.index(arch.stem_width)
            row[self.stem_depth] = len(arch.stem_widths) - hs.stem.block_depth_range[0]
            for j, w in enumerate(arch.stem_widths):
                row[self.stem_w + j] = hs.stem.block_widths.index(w)
            for i, (st, sa) in enumerate(zip(hs.stages, arch.stages)):
                row[self.depth_col(i)] = sa.depth - st.depth_range[0]
                win = sp.window(i)
                ers = sp.expand_ratios(i)
                for j in range(sa.depth):
                    row[self.k_cols(i).start + j] = st.kernel_choices.index(sa.kernels[j])
                    row[self.w_cols(i).start + j] = win.index(sa.widths[j])
                    row[self.e_cols(i).start + j] = ers.index(sa.expands[j])
        except ValueError as exc:
            raise InvalidArchitecture("genes", str(exc)) from exc
        return row

    def to_arch(self, space: SearchSpace, row: np.ndarray) -> Architecture:
        hs = self.hs
        r = [int(x) for x in row]
        sd = r[self.stem_depth] + hs.stem.block_depth_range[0]
        stem_widths = tuple(hs.stem.block_widths[r[self.stem_w + j]] for j in range(sd))
        stages = []
        for i, st in enumerate(hs.stages):
            d = r[self.depth_col(i)] + st.depth_range[0]
            win, ers = space.window(i), space.expand_ratios(i)
            ks, ws, es = self.k_cols(i).start, self.w_cols(i).start, self.e_cols(i).start
            stages.append(StageArch(
                kernels=tuple(st.kernel_choices[r[ks + j]] for j in range(d)),
                widths=tuple(win[r[ws + j]] for j in range(d)),
                expands=tuple(ers[r[es + j]] for j in range(d)),
            ))
        return Architecture(
            space=space,
            resolution=hs.resolutions[r[self.res]],
            stem_width=hs.stem.conv_widths[r[self.stem_conv]],
            stem_widths=stem_widths,
            stages=tuple(stages),
        )

    def sample(self, space: SearchSpace, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` independent uniform draws of every dimension, canonicalised."""
        highs = self.highs(space)
        g = (rng.random((n, self.width)) * highs).astype(np.int64)
        g *= self.active_mask(g)
        return g

    # ladder-index views used by the cost tables --------------------------
    def ladder_widths(self, space: SearchSpace, genes: np.ndarray, i: int) -> np.ndarray:
        """Per-layer width as an index into stage ``i``'s full ladder."""
        return genes[:, self.w_cols(i)] + space.width_starts[i]


def validate_architecture(arch: Architecture, space: SearchSpace | None = None) -> None:
    """Raise :class:`InvalidArchitecture` naming the first field out of range."""
    space = space or arch.space
    hs = space.hyperspace
    if arch.resolution not in hs.resolutions:
        raise InvalidArchitecture("resolution", f"{arch.resolution} not in {hs.resolutions}")
    if arch.stem_width not in hs.stem.conv_widths:
        raise InvalidArchitecture("stem_width", f"{arch.stem_width} not in {hs.stem.conv_widths}")
    if len(arch.stem_widths) not in hs.stem.block_depths:
        raise InvalidArchitecture("stem_depth", f"{len(arch.stem_widths)} outside {hs.stem.block_depth_range}")
    for j, w in enumerate(arch.stem_widths):
        if w not in hs.stem.block_widths:
            raise InvalidArchitecture(f"stem_widths[{j}]", f"{w} not in {hs.stem.block_widths}")
    if len(arch.stages) != hs.num_stages:
        raise InvalidArchitecture("stages", f"expected {hs.num_stages} stages")
    for i, (st, sa) in enumerate(zip(hs.stages, arch.stages)):
        tag = f"stage{st.index}"
        if not (len(sa.kernels) == len(sa.widths) == len(sa.expands)):
            raise InvalidArchitecture(tag, "kernels/widths/expands lengths differ")
        if sa.depth not in st.depths:
            raise InvalidArchitecture(f"{tag}.depth", f"{sa.depth} outside {st.depth_range}")
        win, ers = space.window(i), space.expand_ratios(i)
        for j in range(sa.depth):
            if sa.kernels[j] not in st.kernel_choices:
                raise InvalidArchitecture(f"{tag}.k[{j}]", f"{sa.kernels[j]} not in {st.kernel_choices}")
            if sa.widths[j] not in win:
                raise InvalidArchitecture(f"{tag}.c[{j}]", f"{sa.widths[j]} not in window {win}")
            if sa.expands[j] not in ers:
                raise InvalidArchitecture(f"{tag}.e[{j}]", f"{sa.expands[j]} not in {ers}")


def sample_architecture(space: SearchSpace, rng: np.random.Generator | int | None) -> Architecture:
    """Draw one architecture; every dimension uniform and independent."""
    rng = np.random.default_rng(rng)
    lay = space.hyperspace.layout
    return lay.to_arch(space, lay.sample(space, 1, rng)[0])


def min_architecture(space: SearchSpace) -> Architecture:
    lay = space.hyperspace.layout
    return lay.to_arch(space, np.zeros(lay.width, dtype=np.int64))


def max_architecture(space: SearchSpace) -> Architecture:
    lay = space.hyperspace.layout
    return lay.to_arch(space, lay.highs(space) - 1)


def space_cardinality(space: SearchSpace) -> int:
    """Exact number of distinct architectures (resolution included)."""
    hs = space.hyperspace
    n = len(hs.resolutions) * len(hs.stem.conv_widths)
    n *= sum(len(hs.stem.block_widths) ** d for d in hs.stem.block_depths)
    for i, st in enumerate(hs.stages):
        per_layer = len(st.kernel_choices) * st.ck * len(space.expand_ratios(i))
        n *= sum(per_layer ** d for d in st.depths)
    return n


def iter_architectures(space: SearchSpace) -> Iterable[Architecture]:
    """Enumerate every architecture of ``space`` (only sensible for toy spaces)."""
    import itertools

    hs = space.hyperspace

    def stage_options(i):
        st = hs.stages[i]
        layer = list(itertools.product(st.kernel_choices, space.window(i), space.expand_ratios(i)))
        for d in st.depths:
            for layers in itertools.product(layer, repeat=d):
                yield StageArch(tuple(l[0] for l in layers), tuple(l[1] for l in layers),
                                tuple(l[2] for l in layers))

    stem_opts = [ws for d in hs.stem.block_depths
                 for ws in itertools.product(hs.stem.block_widths, repeat=d)]
    stage_opts = [list(stage_options(i)) for i in range(hs.num_stages)]
    for r in hs.resolutions:
        for c in hs.stem.conv_widths:
            for sw in stem_opts:
                for stages in itertools.product(*stage_opts):
                    yield Architecture(space, r, c, tuple(sw), tuple(stages))


# ---------------------------------------------------------------------------
# Architecture description files (d / c / k / e per stage, plus resolution)


def _seq(v: Any, conv=int) -> tuple:
    if isinstance(v, str):
        return tuple(conv(x) for x in v.split("-") if x)
    if isinstance(v, (int, float)):
        return (conv(v),)
    return tuple(conv(x) for x in v)


def arch_to_dict(arch: Architecture) -> dict[str, Any]:
    sp = arch.space
    return {
        "format": ARCH_FORMAT,
        "version": FORMAT_VERSION,
        "hyperspace": sp.hyperspace.name,
        "space": sp.encoding,
        "resolution": arch.resolution,
        "stem": {
            "conv": {"c": arch.stem_width, "k": sp.hyperspace.stem.conv_kernel},
            "block": {"type": sp.hyperspace.stem.block_type.name, "d": len(arch.stem_widths),
                      "c": list(arch.stem_widths)},
        },
        "stages": [
            {"block": sp.block(i).name, "d": s.depth, "c": list(s.widths), "k": list(s.kernels),
             "e": [_num(e) for e in s.expands]}
            for i, s in enumerate(arch.stages)
        ],
    }


def arch_from_dict(d: dict[str, Any], hs: Hyperspace) -> Architecture:
    if d.get("format", ARCH_FORMAT) != ARCH_FORMAT:
        raise FormatError(f"not an architecture document: format={d.get('format')!r}")
    if d.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise FormatError(f"unsupported architecture version {d.get('version')!r}")
    try:
        space = decode_space(d["space"], hs)
        stages = []
        for s in d["stages"]:
            stages.append(StageArch(_seq(s["k"]), _seq(s["c"]), _seq(s["e"], _num)))
        arch = Architecture(
            space=space,
            resolution=int(d["resolution"]),
            stem_width=int(d["stem"]["conv"]["c"]),
            stem_widths=_seq(d["stem"]["block"]["c"]),
            stages=tuple(stages),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed architecture document: missing {exc}") from exc
    validate_architecture(arch)
    return arch


def describe(arch: Architecture) -> list[dict[str, Any]]:
    """Per-stage rows in the ``d / c / k / e`` layout, using ``-`` separators."""
    rows = [
        {"stage": "Conv", "d": 1, "c": str(arch.stem_width),
         "k": str(arch.space.hyperspace.stem.conv_kernel)},
        {"stage": arch.space.hyperspace.stem.block_type.name, "d": len(arch.stem_widths),
         "c": "-".join(map(str, arch.stem_widths)),
         "k": "-".join([str(arch.space.hyperspace.stem.block_kernel)] * len(arch.stem_widths)),
         "e": "-".join([str(_num(arch.space.hyperspace.stem.block_expand))] * len(arch.stem_widths))},
    ]
    for i, s in enumerate(arch.stages):
        rows.append({"stage": arch.space.block(i).name, "d": s.depth,
                     "c": "-".join(map(str, s.widths)), "k": "-".join(map(str, s.kernels)),
                     "e": "-".join(str(_num(e)) for e in s.expands)})
    rows.append({"stage": "Resolution", "value": arch.resolution})
    return rows


def encode_architecture(arch: Architecture) -> str:
    """Compact one-line key, e.g. ``111111-000000@224/16/16/3.5:32.48:4.6/...``."""
    parts = [f"{arch.space.encoding}@{arch.resolution}", str(arch.stem_width),
             ".".join(map(str, arch.stem_widths))]
    for s in arch.stages:
        parts.append(":".join(".".join(str(_num(v)) for v in seq)
                              for seq in (s.kernels, s.widths, s.expands)))
    return "/".join(parts)


def sort_key_rows(rows: np.ndarray) -> np.ndarray:
    """Order of gene rows in lexicographic (encoding) order."""
    rows = np.atleast_2d(rows)
    return np.lexsort(rows.T[::-1])

"""Kernel decomposition, FLOPs, and the synthetic INT8/FP32 device.

An architecture is broken into fused inference kernels (conv+bn+act,
depthwise conv+bn+act, SE, fc, pooling, residual add).  Model latency is
always the sum of per-kernel latencies, whether those come from a trained
:class:`~qspace.predictor.LatencyPredictor` or from :class:`SyntheticDevice`.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np

from .archspace import Architecture, BlockType, Hyperspace, _out
from .errors import FormatError

CONV = "conv_bn_act"
DWCONV = "dwconv_bn_act"
SE = "se"
FC = "fc"
POOL = "global_pool"
ADD = "elementwise_add"
ACT = "activation_only"
KINDS = (CONV, DWCONV, SE, FC, POOL, ADD, ACT)
PRECISIONS = ("fp32", "int8")

SAMPLE_COLUMNS = ("kind", "precision", "h", "w", "cin", "cout", "k", "stride", "activation", "latency_ms")
SAMPLES_FORMAT = "qspace.latency_samples"
FORMAT_VERSION = 1


class Kernel(NamedTuple):
    kind: str
    h: int  # input spatial size
    w: int
    cin: int
    cout: int
    k: int = 1
    stride: int = 1
    activation: str = "none"

    @property
    def h_out(self) -> int:
        return _out(self.h, self.stride)

    @property
    def w_out(self) -> int:
        return _out(self.w, self.stride)


def make_divisible(x: float, g: int) -> int:
    """Round ``x`` up to a multiple of ``g`` (at least ``g``)."""
    return max(g, int(math.ceil(x / g - 1e-9)) * g)


def se_reduced(c: int, g: int) -> int:
    return make_divisible(c / 4, g)


def layer_kernels(block: BlockType, cin: int, cout: int, k: int, e: float, stride: int,
                  h: int, act: str, g: int) -> list[Kernel]:
    """Kernels of one block layer with input ``h x h x cin``."""
    ho = _out(h, stride)
    residual = stride == 1 and cin == cout
    ks: list[Kernel] = []
    if block == BlockType.MBv1:
        ks.append(Kernel(DWCONV, h, h, cin, cin, k, stride, act))
        ks.append(Kernel(CONV, ho, ho, cin, cout, 1, 1, act))
        return ks
    if block in (BlockType.MBv2, BlockType.MBv3):
        mid = make_divisible(cin * e, g)
        if e != 1:
            ks.append(Kernel(CONV, h, h, cin, mid, 1, 1, act))
        else:
            mid = cin
        ks.append(Kernel(DWCONV, h, h, mid, mid, k, stride, act))
        if block == BlockType.MBv3:
            ks.append(Kernel(SE, ho, ho, mid, mid))
        ks.append(Kernel(CONV, ho, ho, mid, cout, 1, 1, "none"))
    elif block in (BlockType.ResidualBottleneck, BlockType.ResidualBottleneckSE):
        mid = make_divisible(cout * e, g)
        ks.append(Kernel(CONV, h, h, cin, mid, 1, 1, act))
        ks.append(Kernel(CONV, h, h, mid, mid, k, stride, act))
        if block == BlockType.ResidualBottleneckSE:
            ks.append(Kernel(SE, ho, ho, mid, mid))
        ks.append(Kernel(CONV, ho, ho, mid, cout, 1, 1, "none"))
    elif block in (BlockType.FusedMB, BlockType.FusedMBSE):
        mid = make_divisible(cin * e, g)
        ks.append(Kernel(CONV, h, h, cin, mid, k, stride, act))
        if block == BlockType.FusedMBSE:
            ks.append(Kernel(SE, ho, ho, mid, mid))
        ks.append(Kernel(CONV, ho, ho, mid, cout, 1, 1, "none"))
    else:
        raise ValueError(f"{block!r} is not a searchable block")
    if residual:
        ks.append(Kernel(ADD, ho, ho, cout, cout))
    return ks


def stem_conv_kernels(hs: Hyperspace, resolution: int, width: int) -> list[Kernel]:
    st = hs.stem
    return [Kernel(CONV, resolution, resolution, 3, width, st.conv_kernel, st.conv_stride,
                   st.conv_activation)]


def head_kernels(hs: Hyperspace, h: int, cin: int) -> list[Kernel]:
    hd = hs.head
    ks = []
    c = cin
    if hd.feature_width > 0:
        ks.append(Kernel(CONV, h, h, cin, hd.feature_width, 1, 1, hd.activation))
        c = hd.feature_width
    ks.append(Kernel(POOL, h, h, c, c))
    ks.append(Kernel(FC, 1, 1, c, hd.num_classes))
    return ks


def _stem_block_act(hs: Hyperspace) -> str:
    b = hs.blocks[hs.stem.block_type]
    if b is not None:
        return b.activation
    return "relu6" if hs.stem.block_type in (BlockType.MBv2, BlockType.MBv3) else "relu"


def decompose_parts(arch: Architecture) -> list[list[Kernel]]:
    """Kernels grouped as ``[stem, stage1, ..., stageN, head]``."""
    sp = arch.space
    hs = sp.hyperspace
    g = hs.granularity
    st = hs.stem
    h = arch.resolution
    stem = stem_conv_kernels(hs, h, arch.stem_width)
    h = _out(h, st.conv_stride)
    cin = arch.stem_width
    act = _stem_block_act(hs)
    for j, c in enumerate(arch.stem_widths):
        s = st.block_stride if j == 0 else 1
        stem += layer_kernels(st.block_type, cin, c, st.block_kernel, st.block_expand, s, h, act, g)
        h = _out(h, s)
        cin = c
    parts = [stem]
    for i, (spec, sa) in enumerate(zip(hs.stages, arch.stages)):
        block, act = sp.block(i), sp.activation(i)
        ks: list[Kernel] = []
        for j in range(sa.depth):
            s = spec.stride if j == 0 else 1
            ks += layer_kernels(block, cin, sa.widths[j], sa.kernels[j], sa.expands[j], s, h, act, g)
            h = _out(h, s)
            cin = sa.widths[j]
        parts.append(ks)
    parts.append(head_kernels(hs, h, cin))
    return parts


def decompose(arch: Architecture) -> list[Kernel]:
    return [k for part in decompose_parts(arch) for k in part]


def kernel_macs(k: Kernel, g: int | None = None) -> int:
    """Multiply-accumulates of one kernel (FLOPs counted as MACs)."""
    hw = k.h_out * k.w_out
    if k.kind == CONV:
        return k.k * k.k * k.cin * k.cout * hw
    if k.kind == DWCONV:
        return k.k * k.k * k.cin * hw
    if k.kind == FC:
        return k.cin * k.cout
    if k.kind == SE:
        cred = se_reduced(k.cin, g or 8)
        return 2 * k.cin * cred + k.h * k.w * k.cin
    return 0


def flops(arch: Architecture) -> int:
    g = arch.space.hyperspace.granularity
    return sum(kernel_macs(k, g) for k in decompose(arch))


# ---------------------------------------------------------------------------
# Latency samples


@dataclass(frozen=True)
class LatencySample:
    kernel: Kernel
    precision: str
    latency_ms: float

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise FormatError(f"unknown precision {self.precision!r}")
        if not self.latency_ms > 0:
            raise FormatError(f"latency must be positive, got {self.latency_ms}")


def write_samples_csv(samples: Iterable[LatencySample], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        f.write("# " + json.dumps({"format": SAMPLES_FORMAT, "version": FORMAT_VERSION}) + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for s in samples:
            k = s.kernel
            w.writerow([k.kind, s.precision, k.h, k.w, k.cin, k.cout, k.k, k.stride, k.activation,
                        repr(float(s.latency_ms))])


def _read_header(f) -> tuple[dict | None, str]:
    first = f.readline()
    if first.startswith("#"):
        try:
            meta = json.loads(first[1:])
        except json.JSONDecodeError as exc:
            raise FormatError(f"unreadable header line: {exc}") from exc
        return meta, f.readline()
    return None, first


def read_samples_csv(path: str | Path) -> list[LatencySample]:
    with open(path, newline="") as f:
        meta, header_line = _read_header(f)
        if meta is not None and meta.get("version", FORMAT_VERSION) != FORMAT_VERSION:
            raise FormatError(f"unsupported latency sample version {meta.get('version')!r}")
        header = next(csv.reader([header_line]), [])
        header = [h.strip() for h in header]
        for col in SAMPLE_COLUMNS:
            if col not in header:
                raise FormatError(f"missing column {col!r}")
        pos = {c: header.index(c) for c in SAMPLE_COLUMNS}
        out = []
        for lineno, row in enumerate(csv.reader(f), start=3 if meta is not None else 2):
            if not row:
                continue
            try:
                kern = Kernel(
                    kind=row[pos["kind"]], h=int(row[pos["h"]]), w=int(row[pos["w"]]),
                    cin=int(row[pos["cin"]]), cout=int(row[pos["cout"]]), k=int(row[pos["k"]]),
                    stride=int(row[pos["stride"]]), activation=row[pos["activation"]],
                )
                if kern.kind not in KINDS:
                    raise FormatError(f"unknown kernel kind {kern.kind!r}")
                out.append(LatencySample(kern, row[pos["precision"]], float(row[pos["latency_ms"]])))
            except (ValueError, IndexError) as exc:
                raise FormatError(f"line {lineno}: {exc}") from exc
        return out


# ---------------------------------------------------------------------------
# Synthetic device


@dataclass(frozen=True)
class SyntheticDevice:
    """Closed-form stand-in for on-device FP32/INT8 kernel measurements.

    FP32 time is compute (MACs / throughput) + memory traffic + activation
    cost + a fixed per-call overhead.  INT8 divides compute by a per-kind
    speedup, adds a requantisation cost per output element, and scales the
    activation cost by a per-activation factor (below 1 means INT8 is slower).
    Conv / DWConv compute speedups are calibrated so that the end-to-end
    kernel speedup at the reference configuration equals the per-kernel-size
    targets.  Channel counts are rounded up to the granularity first.
    """

    name: str
    granularity: int
    throughput: dict[str, float]  # fp32 MACs per ms
    mem_cost: dict[str, float]  # fp32 ms per input+output element
    act_cost: dict[str, float]  # fp32 ms per output element
    overhead_ms: float
    conv_speedup: dict[int, float]  # end-to-end INT8 speedup targets at the reference config
    dwconv_speedup: dict[int, float]
    kind_speedup: dict[str, float]  # compute speedup for the other kinds
    act_speedup: dict[str, float]
    mem_speedup: float = 4.0
    requant_cost: float = 0.0  # int8 ms per output element
    model_overhead_ms: dict[str, float] = field(default_factory=lambda: {"fp32": 0.0, "int8": 0.0})
    reference: tuple[int, int] = (56, 96)  # (H=W, Cin=Cout)
    grid: dict[str, dict[str, list]] = field(default_factory=dict, compare=False, hash=False)

    # -- presets ------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SyntheticDevice":
        if d.get("format", "qspace.synthetic_device") != "qspace.synthetic_device":
            raise FormatError(f"not a synthetic device document: format={d.get('format')!r}")
        if d.get("version", FORMAT_VERSION) != FORMAT_VERSION:
            raise FormatError(f"unsupported synthetic device version {d.get('version')!r}")
        try:
            return cls(
                name=d["name"],
                granularity=int(d["granularity"]),
                throughput={k: float(v) for k, v in d["throughput"].items()},
                mem_cost={k: float(v) for k, v in d["mem_cost"].items()},
                act_cost={k: float(v) for k, v in d["act_cost"].items()},
                overhead_ms=float(d["overhead_ms"]),
                conv_speedup={int(k): float(v) for k, v in d["conv_speedup"].items()},
                dwconv_speedup={int(k): float(v) for k, v in d["dwconv_speedup"].items()},
                kind_speedup={k: float(v) for k, v in d["kind_speedup"].items()},
                act_speedup={k: float(v) for k, v in d["act_speedup"].items()},
                mem_speedup=float(d.get("mem_speedup", 4.0)),
                requant_cost=float(d.get("requant_cost", 0.0)),
                model_overhead_ms={k: float(v) for k, v in d.get("model_overhead_ms", {}).items()}
                or {"fp32": 0.0, "int8": 0.0},
                reference=tuple(d.get("reference", (56, 96))),
                grid=d.get("grid", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed synthetic device document: {exc!r}") from exc

    @classmethod
    def preset(cls, name: str) -> "SyntheticDevice":
        """``synth_cpu`` or ``synth_mobile``."""
        text = resources.files("qspace").joinpath("data", f"{name}.json").read_text()
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticDevice":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    # -- cost model ---------------------------------------------------
    def _eff(self, c: int) -> int:
        g = self.granularity
        return -(-c // g) * g

    def _terms(self, k: Kernel) -> tuple[float, float, float, int]:
        """(compute ms, memory ms, activation ms, output elements) at fp32."""
        cin, cout = self._eff(k.cin), self._eff(k.cout)
        ek = k._replace(cin=cin, cout=cout)
        macs = kernel_macs(ek, self.granularity)
        thr = self.throughput.get(k.kind)
        compute = macs / thr if thr else 0.0
        out_el = ek.h_out * ek.w_out * (cout if k.kind not in (FC,) else cout)
        if k.kind == POOL:
            out_el = cin
        in_el = k.h * k.w * cin
        mem = self.mem_cost.get(k.kind, 0.0) * (in_el + out_el)
        act = self.act_cost.get(k.activation, 0.0) * out_el
        return compute, mem, act, out_el

    def _compute_speedup(self, kind: str, ksize: int) -> float:
        targets = {CONV: self.conv_speedup, DWCONV: self.dwconv_speedup}.get(kind)
        if targets is None:
            return self.kind_speedup.get(kind, 1.0)
        if ksize not in targets:
            # nearest calibrated kernel size
            ksize = min(targets, key=lambda x: (abs(x - ksize), x))
        return self._calibrated(kind, ksize)

    def _calibrated(self, kind: str, ksize: int) -> float:
        cache = self.__dict__.setdefault("_cal", {})
        key = (kind, ksize)
        if key not in cache:
            target = (self.conv_speedup if kind == CONV else self.dwconv_speedup)[ksize]
            hw, c = self.reference
            ref = Kernel(kind, hw, hw, c, c, ksize, 1, "none")
            comp, mem, act, out_el = self._terms(ref)
            t32 = comp + mem + act + self.overhead_ms
            rest8 = mem / self.mem_speedup + self.requant_cost * out_el + self.overhead_ms
            denom = t32 / target - rest8
            if denom <= 0:
                raise ValueError(f"speedup target {target} unreachable for {kind} k={ksize}")
            cache[key] = comp / denom
        return cache[key]

    def kernel_latency(self, k: Kernel, precision: str) -> float:
        comp, mem, act, out_el = self._terms(k)
        if precision == "fp32":
            return comp + mem + act + self.overhead_ms
        if precision != "int8":
            raise ValueError(f"unknown precision {precision!r}")
        cs = self._compute_speedup(k.kind, k.k)
        a = self.act_speedup.get(k.activation, 1.0)
        return (comp / cs + mem / self.mem_speedup + self.requant_cost * out_el
                + act / a + self.overhead_ms)

    def speedup(self, k: Kernel) -> float:
        return self.kernel_latency(k, "fp32") / self.kernel_latency(k, "int8")

    def predict_kernels(self, kernels: Sequence[Kernel], precision: str) -> np.ndarray:
        """Noise-free latencies; lets the device stand in for a predictor."""
        return np.array([self.kernel_latency(k, precision) for k in kernels], dtype=np.float64)

    def model_latency(self, arch: Architecture, precision: str) -> float:
        """Ground-truth model latency: kernel sum plus fixed quantise/dequantise cost."""
        return float(sum(self.kernel_latency(k, precision) for k in decompose(arch))
                     + self.model_overhead_ms.get(precision, 0.0))


# ---------------------------------------------------------------------------
# Sample generation


def grid_kernels(grid_spec: dict[str, dict[str, list]]) -> list[Kernel]:
    """Full cartesian grid of kernel configurations described by ``grid_spec``.

    Each entry maps a kind to lists under ``h``, ``cin``, ``cout``, ``k``,
    ``stride`` and ``activation``; missing lists default to a single value.
    Depthwise and elementwise kinds ignore ``cout`` (it equals ``cin``).
    """
    import itertools

    out = []
    for kind in KINDS:
        spec = grid_spec.get(kind)
        if not spec:
            continue
        hs = spec.get("h", [1])
        cins = spec.get("cin", [1])
        couts = spec.get("cout", [None]) if kind in (CONV, FC) else [None]
        ks = spec.get("k", [1])
        strides = spec.get("stride", [1])
        acts = spec.get("activation", ["none"])
        for act, s, k, h, cin, cout in itertools.product(acts, strides, ks, hs, cins, couts):
            out.append(Kernel(kind, int(h), int(h), int(cin), int(cin if cout is None else cout),
                              int(k), int(s), act))
    return out


def synth_samples(dev: SyntheticDevice, grid_spec: dict | None = None, seed: int = 0,
                  noise: float = 0.02, precisions: Sequence[str] = PRECISIONS) -> list[LatencySample]:
    """Measure every grid configuration on ``dev`` with seeded multiplicative noise."""
    grid_spec = grid_spec if grid_spec is not None else dev.grid
    if not grid_spec:
        raise ValueError("empty grid spec")
    rng = np.random.default_rng(seed)
    kernels = grid_kernels(grid_spec)
    out = []
    for p in precisions:
        eps = rng.uniform(-noise, noise, size=len(kernels)) if noise > 0 else np.zeros(len(kernels))
        for kern, e in zip(kernels, eps):
            out.append(LatencySample(kern, p, dev.kernel_latency(kern, p) * (1.0 + float(e))))
    return out


def holdout_kernels(dev: SyntheticDevice, n: int, seed: int) -> list[Kernel]:
    """Random off-grid kernel configurations inside the grid's ranges.

    Channel counts are random multiples of the granularity (the only widths
    an architecture can produce); spatial sizes come from the grid's set.
    """
    rng = np.random.default_rng(seed)
    g = dev.granularity
    kinds = [k for k in KINDS if k in dev.grid]
    weights = np.array([4.0 if k in (CONV, DWCONV) else 1.0 for k in kinds])
    weights /= weights.sum()
    out = []
    for _ in range(n):
        kind = kinds[rng.choice(len(kinds), p=weights)]
        spec = dev.grid[kind]
        cmax = max(spec.get("cin", [g]))
        cmin = max(min(spec.get("cin", [g])), g)

        def chan(lo=cmin, hi=cmax):
            return int(rng.integers(lo // g, hi // g + 1)) * g

        h = int(rng.choice(spec.get("h", [1])))
        k = int(rng.choice(spec.get("k", [1])))
        s = int(rng.choice(spec.get("stride", [1])))
        act = str(rng.choice(spec.get("activation", ["none"])))
        cin = chan()
        if kind in (CONV, FC):
            cmax_o = max(spec.get("cout", [cmax]))
            cout = chan(cmin, cmax_o)
        else:
            cout = cin
        out.append(Kernel(kind, h, h, cin, cout, k, s, act))
    return out

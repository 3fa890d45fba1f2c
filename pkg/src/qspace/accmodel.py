"""Block-wise NSR-loss lookup table and the accuracy proxy built on it."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archspace import Architecture, Hyperspace, _num
from .errors import FormatError, MissingEntry

LUT_FORMAT = "qspace.accuracy_lut"
FORMAT_VERSION = 1
LUT_COLUMNS = ("stage", "block_id", "kernel", "width", "expand", "precision", "nsr_loss")

LutKey = tuple  # (stage 1-based, block_id, kernel, width, expand, precision)
DepthKey = tuple  # (stage 1-based, block_id, precision)


@dataclass
class AccuracyLut:
    """Per-layer NSR losses keyed by (stage, block, kernel, width, expand, precision).

    A stage's loss is its depth term plus one entry per active layer.  The
    optional depth terms are what make a deeper stage cheaper in loss; a
    LUT without them prices depth only through its summed layer entries.
    """

    hyperspace: str
    entries: dict[LutKey, float]
    stem_loss: dict[str, float] = field(default_factory=dict)
    head_loss: dict[str, float] = field(default_factory=dict)
    depth_losses: dict[DepthKey, dict[int, float]] = field(default_factory=dict)

    def __post_init__(self):
        for key, v in self.entries.items():
            if not v >= 0:
                raise FormatError(f"negative or NaN loss {v!r} at {key}")
        self._cache: dict = {}

    def entry(self, key: LutKey) -> float:
        try:
            return self.entries[key]
        except KeyError:
            raise MissingEntry(key) from None

    def depth_loss(self, stage: int, block_id: int, depth: int, precision: str) -> float:
        terms = self.depth_losses.get((stage, block_id, precision))
        if terms is None:
            return 0.0
        try:
            return terms[depth]
        except KeyError:
            raise MissingEntry((stage, block_id, f"depth={depth}", precision)) from None

    # -- serialisation ------------------------------------------------
    def header(self) -> dict:
        return {
            "format": LUT_FORMAT,
            "version": FORMAT_VERSION,
            "hyperspace": self.hyperspace,
            "stem_loss": dict(sorted(self.stem_loss.items())),
            "head_loss": dict(sorted(self.head_loss.items())),
            "depth_losses": [
                {"stage": s, "block_id": b, "precision": p,
                 "losses": {str(d): v for d, v in sorted(terms.items())}}
                for (s, b, p), terms in sorted(self.depth_losses.items())
            ],
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            f.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(LUT_COLUMNS)
            for key in sorted(self.entries):
                s, b, k, wd, e, p = key
                w.writerow([s, b, k, wd, _num(e), p, repr(float(self.entries[key]))])

    @classmethod
    def load(cls, path: str | Path) -> "AccuracyLut":
        with open(path, newline="") as f:
            first = f.readline()
            if not first.startswith("#"):
                raise FormatError(f"{path}: missing JSON header line")
            try:
                meta = json.loads(first[1:])
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: unreadable header ({exc})") from exc
            if meta.get("format", LUT_FORMAT) != LUT_FORMAT:
                raise FormatError(f"{path}: not an accuracy LUT (format={meta.get('format')!r})")
            if meta.get("version") != FORMAT_VERSION:
                raise FormatError(f"{path}: unsupported LUT version {meta.get('version')!r}")
            reader = csv.reader(f)
            header = [h.strip() for h in next(reader, [])]
            for col in LUT_COLUMNS:
                if col not in header:
                    raise FormatError(f"{path}: missing column {col!r}")
            pos = [header.index(c) for c in LUT_COLUMNS]
            entries = {}
            for lineno, row in enumerate(reader, start=3):
                if not row:
                    continue
                try:
                    s, b, k, wd, e, p, v = (row[i] for i in pos)
                    entries[(int(s), int(b), int(k), int(wd), float(e), p)] = float(v)
                except (ValueError, IndexError) as exc:
                    raise FormatError(f"{path}:{lineno}: {exc}") from exc
        depth = {}
        for d in meta.get("depth_losses", []):
            depth[(int(d["stage"]), int(d["block_id"]), d["precision"])] = {
                int(k): float(v) for k, v in d["losses"].items()}
        return cls(meta.get("hyperspace", ""), entries,
                   {k: float(v) for k, v in meta.get("stem_loss", {}).items()},
                   {k: float(v) for k, v in meta.get("head_loss", {}).items()}, depth)


def stage_loss(lut: AccuracyLut, arch: Architecture, i: int, precision: str = "int8") -> float:
    sp = arch.space
    b = sp.block_ids[i]
    sa = arch.stages[i]
    total = lut.depth_loss(i + 1, b, sa.depth, precision)
    for k, w, e in zip(sa.kernels, sa.widths, sa.expands):
        total += lut.entry((i + 1, b, k, w, float(e), precision))
    return total


def lut_lookup_loss(lut: AccuracyLut, arch: Architecture, precision: str = "int8") -> float:
    total = lut.stem_loss.get(precision, 0.0) + lut.head_loss.get(precision, 0.0)
    for i in range(len(arch.stages)):
        total += stage_loss(lut, arch, i, precision)
    return total


def proxy_from_loss(loss):
    return 1.0 / (1.0 + loss)


def accuracy_proxy(lut: AccuracyLut, arch: Architecture, precision: str = "int8") -> float:
    """Higher is better; 1.0 at zero loss."""
    return proxy_from_loss(lut_lookup_loss(lut, arch, precision))


# ---------------------------------------------------------------------------
# synthetic LUT


@dataclass(frozen=True)
class QualityProfile:
    """Knobs of the synthetic capacity-to-loss model."""

    noise: float = 0.03  # lognormal sigma on each entry
    base: float = 0.08
    width_exponent: float = 0.6
    kernel_factor: tuple[tuple[int, float], ...] = ((3, 1.0), (5, 0.94), (7, 0.91))
    expand_factor: tuple[float, ...] = (1.0, 0.93, 0.89, 0.87)  # by rank within the block's list
    block_prior: tuple[float, ...] = (1.30, 1.00, 0.90, 1.10, 1.00, 0.95, 0.88)
    block_jitter: float = 0.10  # per (stage, block) lognormal sigma
    int8_penalty: tuple[float, ...] = (0.04, 0.05, 0.15, 0.04, 0.10, 0.05, 0.10)
    depth_bonus: float = 0.02
    stem_loss: float = 0.05
    head_loss: float = 0.05


def synth_lut(hs: Hyperspace, seed: int = 0, profile: QualityProfile | None = None) -> AccuracyLut:
    """Seeded LUT whose losses fall with width, kernel, expand ratio and depth."""
    pf = profile or QualityProfile()
    rng = np.random.default_rng(seed)
    kf = dict(pf.kernel_factor)
    entries: dict[LutKey, float] = {}
    depth: dict[DepthKey, dict[int, float]] = {}
    for st in hs.stages:
        s = st.index
        wlo = st.width_ladder[0]
        for b in sorted(set(st.block_choices)):
            spec = hs.blocks[b]
            if spec is None:
                continue
            jit = float(np.exp(pf.block_jitter * rng.standard_normal()))
            for prec in ("fp32", "int8"):
                pen = 1.0 + (pf.int8_penalty[b] if prec == "int8" else 0.0)
                worst = 0.0
                for k in st.kernel_choices:
                    kfac = kf.get(k, min(kf.values()))
                    for w in st.width_ladder:
                        wfac = (wlo / w) ** pf.width_exponent
                        for rank, e in enumerate(spec.expand_ratios):
                            efac = pf.expand_factor[min(rank, len(pf.expand_factor) - 1)]
                            eps = float(np.exp(pf.noise * rng.standard_normal())) if pf.noise > 0 else 1.0
                            v = pf.base * pf.block_prior[b] * jit * wfac * kfac * efac * pen * eps
                            entries[(s, int(b), int(k), int(w), float(e), prec)] = v
                            worst = max(worst, v)
                # Removing a layer costs more than any layer adds, and the gap
                # shrinks with depth, so loss falls with depth at a slowing rate.
                lo, hi = st.depth_range
                terms = {}
                for d in range(lo, hi + 1):
                    terms[d] = float(sum(worst + pf.depth_bonus / j for j in range(d + 1, hi + 1)))
                depth[(s, int(b), prec)] = terms
    stem = {"fp32": pf.stem_loss, "int8": pf.stem_loss * 1.1}
    head = {"fp32": pf.head_loss, "int8": pf.head_loss * 1.1}
    return AccuracyLut(hs.name, entries, stem, head, depth)


def lut_covers(lut: AccuracyLut, hs: Hyperspace, precision: str = "int8") -> list[LutKey]:
    """Keys reachable in ``hs`` that the LUT lacks (empty when fully covered)."""
    missing = []
    for st in hs.stages:
        for b in sorted(set(st.block_choices)):
            spec = hs.blocks[b]
            if spec is None:
                continue
            for k in st.kernel_choices:
                for w in st.width_ladder:
                    for e in spec.expand_ratios:
                        key = (st.index, int(b), int(k), int(w), float(e), precision)
                        if key not in lut.entries:
                            missing.append(key)
    return missing

"""Command-line entry point: ``qspace <command> ...``.

Exit codes: 0 success, 2 usage or input error, 3 infeasible constraint,
4 oracle coverage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .accmodel import AccuracyLut, accuracy_proxy, lut_covers, synth_lut
from .archspace import Hyperspace, arch_from_dict, decode_space
from .costmodel import (SyntheticDevice, holdout_kernels, read_samples_csv, synth_samples,
                        write_samples_csv)
from .errors import FormatError, MissingEntry, QSpaceError
from .evolution import EvolutionConfig, evolve
from .modelsearch import ModelSearchConfig, search_models
from .predictor import LatencyPredictor, predict_latency, train_predictor
from .qtscore import QtConfig, evaluate_qt, parse_constraints

log = logging.getLogger("qspace")

DEFAULT_HYPERSPACE = {"synth_cpu": "cpu_vnni", "synth_mobile": "pixel4"}
MANIFEST_FORMAT = "qspace.manifest"


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: str | Path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


def write_manifest(path: str | Path, command: str, args: argparse.Namespace,
                   inputs: list[str], outputs: list[str]) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "verbose")}
    write_json(path, {
        "format": MANIFEST_FORMAT, "version": 1, "qspace_version": __version__,
        "command": command, "config": cfg, "seed": cfg.get("seed"),
        "inputs": {p: sha256(p) for p in inputs if p and os.path.isfile(p)},
        "outputs": {p: sha256(p) for p in outputs},
    })


def load_hyperspace(ref: str) -> Hyperspace:
    """A preset name or a path to a hyperspace JSON file."""
    if os.path.isfile(ref):
        return Hyperspace.from_json(ref)
    try:
        return Hyperspace.preset(ref)
    except (FileNotFoundError, OSError):
        raise FormatError(f"unknown hyperspace {ref!r} (not a file or a bundled preset)") from None


def load_device(ref: str) -> SyntheticDevice:
    if os.path.isfile(ref):
        return SyntheticDevice.from_json(ref)
    try:
        return SyntheticDevice.preset(ref)
    except (FileNotFoundError, OSError):
        raise FormatError(f"unknown synthetic device {ref!r}") from None


def _accuracy_report(pred: np.ndarray, truth: np.ndarray) -> dict:
    rel = np.abs(pred / truth - 1.0)
    return {"n": int(truth.size), "rmse_ms": float(np.sqrt(np.mean((pred - truth) ** 2))),
            "rel_rmse": float(np.sqrt(np.mean(rel ** 2))),
            "within_5pct": float(np.mean(rel <= 0.05)), "within_10pct": float(np.mean(rel <= 0.10))}


# ---------------------------------------------------------------------------
# commands


def cmd_train_predictor(args) -> int:
    samples = read_samples_csv(args.samples)
    train, hold = samples, []
    if args.holdout_frac > 0:
        rng = np.random.default_rng(args.seed)
        mask = rng.random(len(samples)) < args.holdout_frac
        train = [s for s, m in zip(samples, mask) if not m]
        hold = [s for s, m in zip(samples, mask) if m]
    device = load_device(args.holdout_device) if args.holdout_device else None
    pred = train_predictor(train, device.name if device else "", device.granularity if device else 0)
    pred.save(args.out)
    report = {}
    if hold:
        for p in ("fp32", "int8"):
            grp = [s for s in hold if s.precision == p]
            if grp:
                report[f"split_{p}"] = _accuracy_report(
                    pred.predict_kernels([s.kernel for s in grp], p),
                    np.array([s.latency_ms for s in grp]))
    if device is not None:
        ks = holdout_kernels(device, args.holdout_n, args.seed + 1)
        for p in ("fp32", "int8"):
            report[f"device_{p}"] = _accuracy_report(
                pred.predict_kernels(ks, p), np.array([device.kernel_latency(k, p) for k in ks]))
    for name, r in sorted(report.items()):
        print(f"{name}: n={r['n']} rmse={r['rmse_ms']:.4g}ms rel_rmse={100 * r['rel_rmse']:.2f}% "
              f"within5%={100 * r['within_5pct']:.1f}% within10%={100 * r['within_10pct']:.1f}%")
    outputs = [args.out]
    if args.report:
        write_json(args.report, report)
        outputs.append(args.report)
    write_manifest(args.out + ".manifest.json", "train-predictor", args, [args.samples], outputs)
    return 0


def cmd_synth(args) -> int:
    dev = load_device(args.device)
    samples = synth_samples(dev, seed=args.seed, noise=args.noise)
    write_samples_csv(samples, args.out_samples)
    outputs = [args.out_samples]
    print(f"{len(samples)} latency samples -> {args.out_samples}")
    if args.out_lut:
        hs = load_hyperspace(args.hyperspace or DEFAULT_HYPERSPACE.get(dev.name, ""))
        lut = synth_lut(hs, args.seed)
        lut.save(args.out_lut)
        outputs.append(args.out_lut)
        print(f"{len(lut.entries)} LUT entries for {hs.name} -> {args.out_lut}")
    write_manifest(args.out_samples + ".manifest.json", "synth", args, [], outputs)
    return 0


def _oracles(args, hs: Hyperspace):
    pred = LatencyPredictor.load(args.predictor)
    lut = AccuracyLut.load(args.lut)
    if lut.hyperspace and lut.hyperspace != hs.name:
        log.warning("LUT was built for %r, hyperspace is %r", lut.hyperspace, hs.name)
    missing = lut_covers(lut, hs)
    if missing:
        raise MissingEntry(missing[0])
    return pred, lut


def _qt_config(args) -> QtConfig:
    return QtConfig(constraints=parse_constraints(args.constraints), num_samples=args.samples,
                    top_k=args.top_k, seed=args.seed)


def cmd_evolve_space(args) -> int:
    hs = load_hyperspace(args.hyperspace)
    pred, lut = _oracles(args, hs)
    cfg = EvolutionConfig(n_total=args.n, population=args.p, sample=args.s, qt=_qt_config(args),
                          seed=args.seed, feasibility_retry_cap=args.retry_cap, threads=args.threads)
    res = evolve(hs, cfg, lut, pred)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "best_space.txt").write_text(res.best.encoding + "\n")
    (out / "qt_report.json").write_text(res.best_report.to_json() + "\n")
    res.log.write_jsonl(out / "evolution_log.jsonl")
    print(f"best space {res.best.encoding} score {res.best_score:.6f} "
          f"after {len(res.history)} evaluations")
    outputs = [str(out / n) for n in ("best_space.txt", "qt_report.json", "evolution_log.jsonl")]
    write_manifest(out / "manifest.json", "evolve-space", args,
                   [args.hyperspace, args.predictor, args.lut], outputs)
    return 0


def cmd_search_models(args) -> int:
    hs = load_hyperspace(args.hyperspace)
    pred, lut = _oracles(args, hs)
    space = decode_space(args.space, hs)
    cfg = ModelSearchConfig(constraint=args.latency, budget=args.budget, population=args.population,
                            tournament=args.tournament, mutation_rate=args.mutation_rate,
                            crossover=args.crossover, seed=args.seed)
    res = search_models(space, lut, pred, cfg)
    Path(args.out).write_text(res.to_json() + "\n")
    print(f"best {res.best_proxy:.6f} at {res.best_latency:.3f} ms; "
          f"front of {len(res.front)} after {res.evaluations} evaluations")
    for row in res.to_dict()["best"]["stages"]:
        print("  " + "  ".join(f"{k}={v}" for k, v in row.items()))
    write_manifest(args.out + ".manifest.json", "search-models", args,
                   [args.hyperspace, args.predictor, args.lut], [args.out])
    return 0


def cmd_predict(args) -> int:
    with open(args.arch) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.arch}: not JSON ({exc})") from exc
    hs = load_hyperspace(args.hyperspace or doc.get("hyperspace", ""))
    arch = arch_from_dict(doc, hs)
    pred = LatencyPredictor.load(args.predictor)
    out = {}
    precs = ("fp32", "int8") if args.precision == "both" else (args.precision,)
    for p in precs:
        out[f"{p}_ms"] = predict_latency(pred, arch, p)
    if len(precs) == 2:
        out["speedup"] = out["fp32_ms"] / out["int8_ms"]
    if args.lut:
        out["proxy"] = accuracy_proxy(AccuracyLut.load(args.lut), arch)
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_score_space(args) -> int:
    hs = load_hyperspace(args.hyperspace)
    pred, lut = _oracles(args, hs)
    space = decode_space(args.space, hs)
    rep = evaluate_qt(space, lut, pred, _qt_config(args))
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
        write_manifest(args.out + ".manifest.json", "score-space", args,
                       [args.hyperspace, args.predictor, args.lut], [args.out])
    for t, s, n in zip(rep.constraints, rep.scores, rep.feasible_counts):
        print(f"T={t:g}ms score={s:.6f} feasible={n}")
    print(f"total {rep.total:.6f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qspace", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"qspace {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def oracle_args(p):
        p.add_argument("--hyperspace", required=True, help="preset name or hyperspace JSON")
        p.add_argument("--predictor", required=True, help="latency predictor JSON")
        p.add_argument("--lut", required=True, help="accuracy LUT CSV")
        p.add_argument("--seed", type=int, default=0)

    def qt_args(p, default):
        p.add_argument("--constraints", default=default, help="comma-separated INT8 budgets in ms")
        p.add_argument("--samples", type=int, default=5000, help="subnets sampled per space")
        p.add_argument("--top-k", type=int, default=20)

    p = sub.add_parser("train-predictor", help="fit a latency predictor from a sample CSV")
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--holdout-frac", type=float, default=0.0,
                   help="fraction of samples held back from training and scored")
    p.add_argument("--holdout-device", help="synthetic device to draw off-grid test kernels from")
    p.add_argument("--holdout-n", type=int, default=2000)
    p.add_argument("--report", help="write the accuracy report as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("synth", help="generate synthetic latency samples and an accuracy LUT")
    p.add_argument("--device", required=True, help="synth_cpu, synth_mobile or a device JSON")
    p.add_argument("--out-samples", required=True)
    p.add_argument("--out-lut")
    p.add_argument("--hyperspace", help="hyperspace for the LUT (defaults to the device's)")
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evolve-space", help="evolve search spaces by Q-T score")
    oracle_args(p)
    qt_args(p, "8,10,15,20,25")
    p.add_argument("--n", type=int, default=5000, help="total spaces evaluated")
    p.add_argument("--p", type=int, default=500, help="population size")
    p.add_argument("--s", type=int, default=125, help="tournament sample size")
    p.add_argument("--retry-cap", type=int, default=20)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evolve_space)

    p = sub.add_parser("search-models", help="search architectures inside one space")
    oracle_args(p)
    p.add_argument("--space", required=True, help="space encoding, e.g. 111111-000000")
    p.add_argument("--latency", type=float, required=True, help="INT8 budget in ms")
    p.add_argument("--budget", type=int, default=5000)
    p.add_argument("--population", type=int, default=100)
    p.add_argument("--tournament", type=int, default=10)
    p.add_argument("--mutation-rate", type=float, default=0.1)
    p.add_argument("--crossover", type=float, default=0.5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search_models)

    p = sub.add_parser("predict", help="predicted latency of one architecture")
    p.add_argument("--arch", required=True, help="architecture JSON")
    p.add_argument("--predictor", required=True)
    p.add_argument("--precision", choices=("int8", "fp32", "both"), default="int8")
    p.add_argument("--hyperspace", help="defaults to the preset named in the architecture file")
    p.add_argument("--lut", help="also report the accuracy proxy")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score-space", help="Q-T score of one space")
    oracle_args(p)
    qt_args(p, "8,10,15,20,25")
    p.add_argument("--space", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score_space)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except QSpaceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

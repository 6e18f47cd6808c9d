"""Command-line entry point: ``pcx synth | train | explain | verify | convert | rerun``.

Exit codes: 0 success, 2 usage, 3 data, 4 model or protocol failure.
Every command writes a ``manifest.json`` into its output directory; the
manifest holds the resolved configuration and input digests, and
``pcx rerun`` replays it.
"""

from __future__ import annotations

import argparse
import dataclasses
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .cluster import KMeansConfig, kmeans
from .errors import InvalidConfig, ParseError, PcxError
from .explain import CLUSTER_METHODS, FLIP_MODES, METHODS, ExplainConfig, explain
from .model import (
    SHAPES,
    SyntheticShapeSpec,
    external_classifier,
    from_params,
    load_model,
    save_model,
    synth_dataset,
    train,
)
from .pointcloud import (
    PointCloud,
    TriangleMesh,
    load_geometry,
    load_point_cloud,
    normalize,
    write_colored_ply,
    write_geometry,
    write_ply,
)
from .rng import derive_int
from .verify import (
    DEFAULT_FRACTIONS,
    POLARITIES,
    FlipSweepConfig,
    compare_methods,
    stability_csv,
    stability_sweep,
)

log = logging.getLogger("pcx")

BUNDLED_MODEL = Path(__file__).parent / "data" / "tiny_pointnet.json"
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Collects inputs, outputs and timings for the manifest."""

    def __init__(self, args):
        self.args = args
        self.inputs = {}
        self.timings = {}
        self.seeds = {}
        self._t0 = time.perf_counter()

    def progress(self, **event) -> None:
        if getattr(self.args, "json", False):
            sys.stdout.write(json.dumps(event, sort_keys=True) + "\n")
            sys.stdout.flush()

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def write_manifest(self, out_dir: Path, outputs: List[Path]) -> None:
        self.timings["total_seconds"] = time.perf_counter() - self._t0
        config = {k: v for k, v in vars(self.args).items() if k not in ("command", "json", "verbose")}
        manifest = {
            "command": self.args.command,
            "tool_version": __version__,
            "config": config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": {p.name: sha256_file(p) for p in sorted(outputs)},
            "timings": self.timings,
        }
        (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _csv_list(text: str, cast=str) -> list:
    return [cast(t.strip()) for t in text.split(",") if t.strip()]


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_handle(args, run: Run):
    if getattr(args, "subprocess", None):
        return external_classifier(args.subprocess, timeout=args.timeout)
    path = Path(args.model) if args.model else BUNDLED_MODEL
    if not path.exists():
        raise UsageError(f"model file not found: {path}")
    run.add_input(path)
    return from_params(load_model(path))


def read_index(data_dir: Path):
    index = data_dir / "index.csv"
    if not index.exists():
        raise UsageError(f"dataset directory {data_dir} has no index.csv")
    with open(index, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        if "path" not in r or "label" not in r:
            raise ParseError("index.csv needs path and label columns", path=index)
    return index, rows


def load_dataset(data_dir: Path, run: Optional[Run] = None, limit: Optional[int] = None):
    index, rows = read_index(data_dir)
    if run is not None:
        run.add_input(index)
    if limit:
        rows = rows[:limit]
    out = []
    for r in rows:
        geom = load_geometry(data_dir / r["path"])
        pts = geom.points if isinstance(geom, PointCloud) else geom.vertices
        out.append(normalize(PointCloud(pts, label=int(r["label"]), name=Path(r["path"]).stem)))
    class_names = []
    for r in rows:
        name = r.get("class_name") or r["label"]
        if name not in class_names:
            class_names.append(name)
    return out, class_names


# --------------------------------------------------------------------------
# commands


def cmd_synth(args, run: Run) -> int:
    if args.per_class < 1:
        raise UsageError("--per-class must be >= 1")
    classes = _csv_list(args.classes)
    for c in classes:
        if c not in SHAPES:
            raise UsageError(f"unknown shape {c!r}; choose from {', '.join(SHAPES)}")
    out = _out_dir(args.out)
    run.seeds["synth"] = args.seed
    data = synth_dataset(classes, args.per_class, SyntheticShapeSpec(args.points, args.sigma, args.seed))
    outputs = []
    rows = []
    for pc in data:
        path = out / f"{pc.name}.ply"
        write_ply(pc, path)
        outputs.append(path)
        rows.append((path.name, pc.label, classes[pc.label]))
    index = out / "index.csv"
    with open(index, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "class_name"])
        w.writerows(rows)
    outputs.append(index)
    run.progress(event="synth", instances=len(data))
    run.write_manifest(out, outputs)
    return 0


def cmd_train(args, run: Run) -> int:
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise UsageError(f"dataset directory not found: {data_dir}")
    data, class_names = load_dataset(data_dir, run)
    # per-class split: the last test_fraction of each class (index order) is held out
    train_set, test_set = [], []
    for label in sorted({pc.label for pc in data}):
        members = [pc for pc in data if pc.label == label]
        n_test = int(round(len(members) * args.test_fraction))
        cut = len(members) - n_test
        train_set += members[:cut]
        test_set += members[cut:]
    out = _out_dir(args.out)
    run.seeds["train"] = args.seed
    t0 = time.perf_counter()
    result = train(
        train_set, epochs=args.epochs, lr=args.lr, batch_size=args.batch, seed=args.seed,
        test=test_set or None, class_names=class_names,
    )
    run.timings["train_seconds"] = time.perf_counter() - t0
    model_path = out / "model.json"
    save_model(result.params, model_path)
    log_path = out / "train_log.csv"
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_acc", "test_acc", "loss"])
        for e in result.log:
            w.writerow([e.epoch, repr(e.train_acc), repr(e.test_acc), repr(e.loss)])
            run.progress(event="epoch", epoch=e.epoch, train_acc=e.train_acc, test_acc=e.test_acc, loss=e.loss)
    run.write_manifest(out, [model_path, log_path])
    return 0


def _explain_cfg(args, seed: int) -> ExplainConfig:
    return ExplainConfig(
        n_samples=args.samples,
        kernel_width=args.width,
        ridge=args.ridge,
        flip_mode=args.flip_mode,
        seed=seed,
        ig_steps=args.ig_steps,
    )


def cmd_explain(args, run: Run) -> int:
    inp = Path(args.input)
    if not inp.exists():
        raise UsageError(f"input file not found: {inp}")
    run.add_input(inp)
    seeds = {name: derive_int(args.seed, name) for name in ("sampling", "kmeans", "masks")}
    run.seeds.update(seeds, base=args.seed)
    pc = normalize(load_point_cloud(inp, n=args.points, seed=seeds["sampling"]))
    f = _load_handle(args, run)
    try:
        ca = None
        if args.method in CLUSTER_METHODS:
            ca = kmeans(pc, KMeansConfig(n_clusters=args.clusters, seed=seeds["kmeans"]))
        t0 = time.perf_counter()
        expl = explain(args.method, f, pc, ca, args.target_class, _explain_cfg(args, seeds["masks"]))
        run.timings["explain_seconds"] = time.perf_counter() - t0
    finally:
        f.close()
    config = dict(expl.config)
    config.update(
        normalized=True,
        target_choice="argmax" if args.target_class is None else "user",
        n_points=len(pc),
        input=inp.name,
    )
    expl = dataclasses.replace(expl, config=config)
    out = _out_dir(args.out)
    expl_path = out / "explanation.json"
    expl_path.write_text(expl.dumps(), encoding="utf-8")
    ply_path = out / "explanation.ply"
    write_colored_ply(pc, expl.point_contributions, ply_path)
    outputs = [expl_path, ply_path]
    if ca is not None:
        ca_path = out / "clusters.json"
        ca_path.write_text(json.dumps(ca.to_json(), sort_keys=True) + "\n", encoding="utf-8")
        outputs.append(ca_path)
    run.progress(event="explain", method=expl.method, target_class=expl.target_class, surrogate_r2=expl.surrogate_r2)
    run.write_manifest(out, outputs)
    return 0


def _verify_instances(args, run: Run):
    if args.data:
        data_dir = Path(args.data)
        if not data_dir.is_dir():
            raise UsageError(f"dataset directory not found: {data_dir}")
        instances, _ = load_dataset(data_dir, run, args.limit)
        return instances
    if not args.inputs:
        raise UsageError("give --data DIR or input files")
    instances = []
    for i, p in enumerate(args.inputs[: args.limit] if args.limit else args.inputs):
        p = Path(p)
        if not p.exists():
            raise UsageError(f"input file not found: {p}")
        run.add_input(p)
        instances.append(normalize(load_point_cloud(p, n=args.points, seed=derive_int(args.seed, "sampling", i))))
    return instances


def cmd_verify(args, run: Run) -> int:
    methods = _csv_list(args.methods)
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    polarities = _csv_list(args.polarities)
    for p in polarities:
        if p not in POLARITIES:
            raise UsageError(f"unknown polarity {p!r}")
    fractions = tuple(_csv_list(args.fractions, float))
    target = args.target
    if target not in ("argmax", "label"):
        target = int(target)
    instances = _verify_instances(args, run)
    seeds = {"explain": derive_int(args.seed, "explain"), "sweep": derive_int(args.seed, "sweep")}
    run.seeds.update(seeds, base=args.seed)
    explain_cfg = _explain_cfg(args, seeds["explain"])
    sweep_cfg = FlipSweepConfig(fractions=fractions, flip_mode=args.flip_mode, seed=seeds["sweep"])
    out = _out_dir(args.out)
    f = _load_handle(args, run)
    outputs = []
    try:
        t0 = time.perf_counter()
        report = compare_methods(
            f, instances, methods, explain_cfg, sweep_cfg, polarities, args.clusters, target,
            pooled=not args.per_series, jobs=args.jobs,
        )
        run.timings["verify_seconds"] = time.perf_counter() - t0
        run.timings["seconds_per_explanation"] = {m: float(np.mean(t)) for m, t in report.timings.items()}
        csv_path, json_path = out / "report.csv", out / "report.json"
        csv_path.write_text(report.to_csv(), encoding="utf-8")
        json_path.write_text(report.dumps(), encoding="utf-8")
        outputs += [csv_path, json_path]
        run.progress(event="verify", areas=report.area_summary())
        if args.grid_clusters or args.grid_samples:
            clusters = _csv_list(args.grid_clusters or str(args.clusters), int)
            samples = _csv_list(args.grid_samples or str(args.samples), int)
            t0 = time.perf_counter()
            cells = stability_sweep(
                f, instances, clusters, samples, explain_cfg, sweep_cfg, polarities, target,
                pooled=not args.per_series, jobs=args.jobs,
            )
            run.timings["stability_seconds"] = time.perf_counter() - t0
            run.timings["stability_seconds_per_explanation"] = {
                f"{c.n_clusters}x{c.n_samples}": c.seconds_per_explanation for c in cells
            }
            st_csv, st_json = out / "stability.csv", out / "stability.json"
            st_csv.write_text(stability_csv(cells, fractions), encoding="utf-8")
            st_json.write_text(
                json.dumps({"fractions": list(fractions), "cells": [c.to_json() for c in cells]}, indent=1, sort_keys=True) + "\n",
                encoding="utf-8",
            )
            outputs += [st_csv, st_json]
            run.progress(event="stability", cells=len(cells))
    finally:
        f.close()
    run.write_manifest(out, outputs)
    return 0


def cmd_convert(args, run: Run) -> int:
    src = Path(args.input)
    if not src.exists():
        raise UsageError(f"input file not found: {src}")
    geom = load_geometry(src, args.from_format)
    if args.sample and isinstance(geom, TriangleMesh):
        from .pointcloud import sample_surface

        geom = sample_surface(geom, args.sample, args.seed)
    write_geometry(geom, args.output, args.to_format)
    return 0


def cmd_rerun(args, run: Run) -> int:
    manifest_path = Path(args.manifest)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        config = dict(manifest["config"])
        command = manifest["command"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read manifest {manifest_path}: {exc}") from None
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).exists() or sha256_file(path) != digest:
            raise InvalidConfig(f"input {path} is missing or changed since the manifest was written")
    if args.out:
        config["out"] = args.out
    ns = argparse.Namespace(**config, command=command, json=args.json, verbose=args.verbose)
    return COMMANDS[command](ns, Run(ns))


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "explain": cmd_explain,
    "verify": cmd_verify,
    "convert": cmd_convert,
    "rerun": cmd_rerun,
}


# --------------------------------------------------------------------------
# parser


def _default_seed() -> int:
    env = os.environ.get("PCX_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"PCX_SEED must be an integer, got {env!r}") from None


def _model_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model", help="model JSON (default: the bundled tiny point network)")
    g.add_argument("--subprocess", help="command line of an external classifier speaking the JSON line protocol")
    p.add_argument("--timeout", type=float, default=60.0, help="seconds per batch for --subprocess")


def _explain_flags(p):
    p.add_argument("--clusters", type=_positive_int, default=20)
    p.add_argument("--samples", type=_positive_int, default=1000)
    p.add_argument("--width", type=float, default=0.25, help="LIME kernel width")
    p.add_argument("--ridge", type=float, default=None, help="ridge penalty (default: 1e-3 LIME, 0 KernelShap)")
    p.add_argument("--flip-mode", choices=FLIP_MODES, default="mean_replace")
    p.add_argument("--ig-steps", type=int, default=64)
    p.add_argument("--points", type=_positive_int, default=1024, help="points sampled from mesh inputs")


def build_parser(seed_default: int = 0) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pcx {__version__}")
    parser.add_argument("--json", action="store_true", help="machine-readable progress lines on stdout")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", default=",".join(SHAPES))
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--points", type=_positive_int, default=1024)
    p.add_argument("--sigma", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=seed_default)

    p = sub.add_parser("train", help="train the tiny point network on a synth dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=_positive_int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch", type=_positive_int, default=32)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=seed_default)

    p = sub.add_parser("explain", help="explain one prediction")
    _model_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=METHODS, default="lime")
    p.add_argument("--class", dest="target_class", type=int, default=None, help="class to explain (default: argmax)")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--out", required=True)
    _explain_flags(p)

    p = sub.add_parser("verify", help="point-flipping verification of explanation methods")
    _model_flags(p)
    p.add_argument("inputs", nargs="*", help="input files (alternative to --data)")
    p.add_argument("--data", help="dataset directory with index.csv")
    p.add_argument("--limit", type=int, default=None, help="use only the first N instances")
    p.add_argument("--methods", default="lime")
    p.add_argument("--fractions", default=",".join(str(f) for f in DEFAULT_FRACTIONS))
    p.add_argument("--polarities", default=",".join(POLARITIES))
    p.add_argument("--target", default="argmax", help="argmax, label, or a class index")
    p.add_argument("--per-series", action="store_true", help="normalize each series by its own min/max")
    p.add_argument("--grid-clusters", default=None, help="stability sweep cluster counts, e.g. 20,128")
    p.add_argument("--grid-samples", default=None, help="stability sweep sample counts, e.g. 100,1000")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--out", required=True)
    _explain_flags(p)

    p = sub.add_parser("convert", help="transcode between OFF, PLY, XYZ and CSV")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--from", dest="from_format", choices=("off", "ply", "xyz", "csv"))
    p.add_argument("--to", dest="to_format", choices=("off", "ply", "xyz", "csv"))
    p.add_argument("--sample", type=int, default=0, help="sample this many surface points from a mesh")
    p.add_argument("--seed", type=int, default=seed_default)

    p = sub.add_parser("rerun", help="replay a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="write to this directory instead of the original")
    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser(_default_seed())
    except UsageError as exc:
        sys.stderr.write(f"pcx: {exc}\n")
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, Run(args))
    except UsageError as exc:
        sys.stderr.write(f"pcx {args.command}: {exc}\n")
        return 2
    except PcxError as exc:
        sys.stderr.write(f"pcx {args.command}: {type(exc).__name__}: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"pcx {args.command}: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())

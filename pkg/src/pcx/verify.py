"""Verification of explanations by contribution-ordered point flipping.

Points are ranked by their attributed contribution and flipped in growing
prefixes of that ranking; the target logit is recorded at every fraction.
Per-instance series are normalized as ``(S - S_min) / S_max`` with the
minimum and maximum taken over the instance's whole evaluation run, then
averaged over instances.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cluster import ClusterAssignment, KMeansConfig, cluster_mean_coordinates, kmeans
from .errors import InvalidConfig, MissingContributions, ZeroMax
from .explain import CLUSTER_METHODS, METHODS, ExplainConfig, Explanation, explain, flip_points
from .model.handle import ClassifierHandle, scores
from .pointcloud import PointCloud
from .rng import derive_int, substream

log = logging.getLogger(__name__)

POLARITIES = ("positive", "negative", "random")
DEFAULT_FRACTIONS = tuple(round(0.05 * k, 2) for k in range(11))


@dataclass(frozen=True)
class FlipSweepConfig:
    fractions: Tuple[float, ...] = DEFAULT_FRACTIONS
    polarity: str = "positive"
    flip_mode: str = "mean_replace"
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if not fr:
            raise InvalidConfig("fractions must be non-empty")
        if any(b < a for a, b in zip(fr, fr[1:])) or fr[0] < 0 or fr[-1] > 1:
            raise InvalidConfig("fractions must be ascending within [0, 1]")
        if self.polarity not in POLARITIES:
            raise InvalidConfig(f"polarity must be one of {POLARITIES}")
        object.__setattr__(self, "fractions", fr)


def flip_order(contributions: np.ndarray, polarity: str, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Point indices in flipping order; ties keep index order."""
    c = np.asarray(contributions, dtype=np.float64)
    if polarity == "positive":
        return np.argsort(-c, kind="stable")
    if polarity == "negative":
        return np.argsort(c, kind="stable")
    if polarity == "random":
        if rng is None:
            raise InvalidConfig("random polarity needs a generator")
        return rng.permutation(len(c))
    raise InvalidConfig(f"polarity must be one of {POLARITIES}")


def flip_counts(fractions: Sequence[float], n: int) -> List[int]:
    # the small slack keeps 0.15 * 20 from landing on 2.9999999
    return [min(n, int(np.floor(q * n + 1e-9))) for q in fractions]


def flipped_clouds(points, order, fractions, flip_mode: str, fill: np.ndarray) -> List[np.ndarray]:
    n = len(points)
    out = []
    for k in flip_counts(fractions, n):
        flipped = np.zeros(n, dtype=bool)
        flipped[order[:k]] = True
        if flip_mode == "remove" and k == n:
            out.append(fill.copy())
        else:
            out.append(flip_points(points, flipped, flip_mode, fill))
    return out


def flip_fill(points: np.ndarray, ca: Optional[ClusterAssignment]) -> np.ndarray:
    """Replacement coordinates: cluster means when clusters exist, global means otherwise."""
    if ca is None:
        return np.broadcast_to(points.mean(axis=0), points.shape).copy()
    return cluster_mean_coordinates(PointCloud(points), ca)[ca.assignment]


def flip_and_score(
    f: ClassifierHandle,
    pc,
    expl: Explanation,
    cfg: FlipSweepConfig = FlipSweepConfig(),
    target_class: Optional[int] = None,
    ca: Optional[ClusterAssignment] = None,
    instance_index: int = 0,
) -> np.ndarray:
    """Target-class logit after flipping each fraction of the ranked points."""
    points = np.asarray(getattr(pc, "points", pc), dtype=np.float64)
    contrib = np.asarray(expl.point_contributions, dtype=np.float64)
    if contrib.shape != (len(points),):
        raise MissingContributions(f"explanation has {contrib.shape} contributions for {len(points)} points")
    target = expl.target_class if target_class is None else int(target_class)
    rng = substream(cfg.seed, "sweep", instance_index) if cfg.polarity == "random" else None
    order = flip_order(contrib, cfg.polarity, rng)
    clouds = flipped_clouds(points, order, cfg.fractions, cfg.flip_mode, flip_fill(points, ca))
    return scores(f, clouds, target)


# --------------------------------------------------------------------------
# normalization


@dataclass
class NormalizedScores:
    s_avg: np.ndarray  # (series, fractions)
    per_instance: np.ndarray  # (kept instances, series, fractions)
    kept: np.ndarray  # indices of instances that were used
    excluded: int = 0


def normalize_scores(raw, pooled: bool = True, strict: bool = False) -> NormalizedScores:
    """Average of ``(S - S_min) / S_max`` over instances.

    ``raw`` has shape ``(n, fractions)`` or ``(n, series, fractions)``. With
    ``pooled`` the minimum and maximum are taken over every series of an
    instance (its whole evaluation run), otherwise per series. Instances
    whose maximum is zero are skipped and counted, or raise with ``strict``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    squeeze = raw.ndim == 2
    if squeeze:
        raw = raw[:, None, :]
    if raw.ndim != 3 or raw.shape[0] < 1:
        raise InvalidConfig("need at least one instance of score series")
    axes = (1, 2) if pooled else (2,)
    lo = raw.min(axis=axes, keepdims=True)
    hi = raw.max(axis=axes, keepdims=True)
    zero = np.any(hi == 0, axis=axes).reshape(len(raw), -1).any(axis=1)
    if zero.any():
        if strict:
            raise ZeroMax(f"{int(zero.sum())} instance(s) have a maximum score of 0")
        log.warning("excluding %d instance(s) whose maximum score is 0", int(zero.sum()))
    kept = np.flatnonzero(~zero)
    if len(kept) == 0:
        raise ZeroMax("every instance has a maximum score of 0")
    norm = (raw[kept] - lo[kept]) / hi[kept]
    s_avg = norm.mean(axis=0)
    if squeeze:
        return NormalizedScores(s_avg[0], norm[:, 0, :], kept, int(zero.sum()))
    return NormalizedScores(s_avg, norm, kept, int(zero.sum()))


def curve_area(fractions: Sequence[float], values: Sequence[float]) -> float:
    return float(np.trapezoid(np.asarray(values, dtype=np.float64), np.asarray(fractions, dtype=np.float64)))


# --------------------------------------------------------------------------
# reports


@dataclass
class VerificationCurve:
    method: str
    polarity: str
    fractions: Tuple[float, ...]
    raw: np.ndarray  # (n, fractions)
    normalized: np.ndarray  # (kept, fractions)
    s_avg: np.ndarray
    variance: np.ndarray

    @property
    def n(self) -> int:
        return int(self.normalized.shape[0])

    @property
    def area(self) -> float:
        return curve_area(self.fractions, self.s_avg)


@dataclass
class VerificationReport:
    fractions: Tuple[float, ...]
    curves: Dict[str, Dict[str, VerificationCurve]]
    targets: List[int]
    config: dict
    excluded: Dict[str, int] = field(default_factory=dict)
    timings: Dict[str, List[float]] = field(default_factory=dict)  # seconds per explanation; not serialized

    def area_summary(self) -> Dict[str, Dict[str, float]]:
        out = {}
        for method, by_pol in self.curves.items():
            areas = {p: c.area for p, c in by_pol.items()}
            entry = {f"area_{p}": a for p, a in areas.items()}
            if "random" in areas:
                if "positive" in areas:
                    entry["positive_vs_random"] = areas["random"] - areas["positive"]
                if "negative" in areas:
                    entry["negative_vs_random"] = areas["negative"] - areas["random"]
            out[method] = entry
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "polarity", "fraction", "s_avg", "variance", "n"])
        for method, by_pol in self.curves.items():
            for pol, c in by_pol.items():
                for q, s, v in zip(self.fractions, c.s_avg, c.variance):
                    w.writerow([method, pol, repr(float(q)), repr(float(s)), repr(float(v)), c.n])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "fractions": list(self.fractions),
            "targets": list(self.targets),
            "config": self.config,
            "excluded": self.excluded,
            "areas": self.area_summary(),
            "curves": {
                m: {
                    p: {
                        "n": c.n,
                        "s_avg": c.s_avg.tolist(),
                        "variance": c.variance.tolist(),
                        "raw": c.raw.tolist(),
                    }
                    for p, c in by_pol.items()
                }
                for m, by_pol in self.curves.items()
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"


def _instance_run(f, pc, index, methods, explain_cfg, sweep_cfg, polarities, n_clusters, target):
    points = np.asarray(getattr(pc, "points", pc), dtype=np.float64)
    if target == "argmax":
        tgt = int(np.argmax(f.predict_one(points)))
    elif target == "label":
        tgt = int(pc.label)
    else:
        tgt = int(target)
    ca = None
    if any(m in CLUSTER_METHODS for m in methods):
        ca = kmeans(PointCloud(points), KMeansConfig(n_clusters=n_clusters, seed=derive_int(explain_cfg.seed, "kmeans", index)))
    cfg_i = replace(explain_cfg, seed=derive_int(explain_cfg.seed, "masks", index))
    series, times = {}, {}
    for method in methods:
        t0 = time.perf_counter()
        expl = explain(method, f, points, ca if method in CLUSTER_METHODS else None, tgt, cfg_i)
        times[method] = time.perf_counter() - t0
        flip_ca = ca if method in CLUSTER_METHODS else None
        series[method] = np.stack(
            [
                flip_and_score(
                    f, points, expl, replace(sweep_cfg, polarity=pol), tgt, ca=flip_ca, instance_index=index
                )
                for pol in polarities
            ]
        )
    return tgt, series, times


def compare_methods(
    f: ClassifierHandle,
    instances: Sequence,
    methods: Sequence[str],
    explain_cfg: ExplainConfig = ExplainConfig(),
    sweep_cfg: FlipSweepConfig = FlipSweepConfig(),
    polarities: Sequence[str] = POLARITIES,
    n_clusters: int = 20,
    target="argmax",
    pooled: bool = True,
    jobs: int = 1,
) -> VerificationReport:
    """Explain every instance with every method and sweep each polarity.

    Each instance is explained once per method; the explanation is reused
    for all polarities. ``target`` is ``"argmax"``, ``"label"`` or a class
    index. Instances may run on ``jobs`` threads; results are gathered in
    instance order.
    """
    for m in methods:
        if m not in METHODS:
            raise InvalidConfig(f"unknown method {m!r}")
    for p in polarities:
        if p not in POLARITIES:
            raise InvalidConfig(f"unknown polarity {p!r}")
    if not instances:
        raise InvalidConfig("need at least one instance")
    if any(m in ("vanilla_gradient", "integrated_gradients") for m in methods) and not f.differentiable:
        from .errors import NoGradient

        raise NoGradient("gradient methods need a differentiable classifier")

    def run(i):
        return _instance_run(f, instances[i], i, methods, explain_cfg, sweep_cfg, polarities, n_clusters, target)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(len(instances))))
    else:
        results = [run(i) for i in range(len(instances))]

    fractions = sweep_cfg.fractions
    curves, excluded, timings = {}, {}, {}
    for method in methods:
        raw = np.stack([r[1][method] for r in results])  # (n, polarities, fractions)
        norm = normalize_scores(raw, pooled=pooled)
        excluded[method] = norm.excluded
        timings[method] = [r[2][method] for r in results]
        curves[method] = {
            pol: VerificationCurve(
                method=method,
                polarity=pol,
                fractions=fractions,
                raw=raw[:, j, :],
                normalized=norm.per_instance[:, j, :],
                s_avg=norm.s_avg[j],
                variance=norm.per_instance[:, j, :].var(axis=0),
            )
            for j, pol in enumerate(polarities)
        }
    config = {
        "methods": list(methods),
        "polarities": list(polarities),
        "n_clusters": n_clusters,
        "n_instances": len(instances),
        "target": target,
        "pooled": pooled,
        "explain": asdict(explain_cfg),
        "sweep": {"fractions": list(fractions), "flip_mode": sweep_cfg.flip_mode, "seed": sweep_cfg.seed},
        "model_fingerprint": f.fingerprint,
    }
    return VerificationReport(fractions, curves, [r[0] for r in results], config, excluded, timings)


def bootstrap_area_order(
    report: VerificationReport,
    method: str,
    n_boot: int = 20,
    seed: int = 0,
    require: Sequence[Tuple[str, str]] = (("positive", "random"), ("random", "negative")),
) -> float:
    """Share of instance resamples in which every ``area(a) < area(b)`` holds."""
    by_pol = report.curves[method]
    n = next(iter(by_pol.values())).n
    rng = substream(seed, "bootstrap")
    hits = 0
    for _ in range(n_boot):
        idx = rng.integers(0, n, size=n)
        area = {p: curve_area(report.fractions, c.normalized[idx].mean(axis=0)) for p, c in by_pol.items()}
        hits += all(area[a] < area[b] for a, b in require)
    return hits / n_boot


# --------------------------------------------------------------------------
# stability sweep


@dataclass
class StabilityCell:
    n_clusters: int
    n_samples: int
    mean: Dict[str, np.ndarray]
    variance: Dict[str, np.ndarray]
    seconds_per_explanation: float
    report: VerificationReport

    def to_json(self, with_timing: bool = False) -> dict:
        out = {
            "n_clusters": self.n_clusters,
            "n_samples": self.n_samples,
            "mean": {p: v.tolist() for p, v in self.mean.items()},
            "variance": {p: v.tolist() for p, v in self.variance.items()},
        }
        if with_timing:
            out["seconds_per_explanation"] = self.seconds_per_explanation
        return out


def stability_sweep(
    f: ClassifierHandle,
    instances: Sequence,
    cluster_counts: Sequence[int],
    sample_counts: Sequence[int],
    explain_cfg: ExplainConfig = ExplainConfig(),
    sweep_cfg: FlipSweepConfig = FlipSweepConfig(),
    polarities: Sequence[str] = POLARITIES,
    target="argmax",
    pooled: bool = True,
    jobs: int = 1,
) -> List[StabilityCell]:
    """LIME flipping curves for every (cluster count, sample count) pair."""
    n_min = min(len(np.asarray(getattr(pc, "points", pc))) for pc in instances)
    for c in cluster_counts:
        if c > n_min:
            raise InvalidConfig(f"cluster count {c} exceeds the smallest instance ({n_min} points)")
    cells = []
    for n_c in cluster_counts:
        for n_s in sample_counts:
            cfg = replace(explain_cfg, n_samples=n_s)
            rep = compare_methods(f, instances, ["lime"], cfg, sweep_cfg, polarities, n_c, target, pooled, jobs)
            curves = rep.curves["lime"]
            cells.append(
                StabilityCell(
                    n_clusters=n_c,
                    n_samples=n_s,
                    mean={p: c.s_avg for p, c in curves.items()},
                    variance={p: c.variance for p, c in curves.items()},
                    seconds_per_explanation=float(np.mean(rep.timings["lime"])),
                    report=rep,
                )
            )
    return cells


def stability_csv(cells: Sequence[StabilityCell], fractions: Sequence[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_clusters", "n_samples", "polarity", "fraction", "mean", "variance"])
    for cell in cells:
        for pol in cell.mean:
            for q, m, v in zip(fractions, cell.mean[pol], cell.variance[pol]):
                w.writerow([cell.n_clusters, cell.n_samples, pol, repr(float(q)), repr(float(m)), repr(float(v))])
    return buf.getvalue()

"""Synthetic labeled shapes for training and exercising the toolkit."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import InvalidConfig
from ..pointcloud import PointCloud, TriangleMesh, normalize, sample_surface
from ..rng import derive_int, substream

SHAPES = ("sphere", "cube", "cylinder", "cone", "torus", "plane", "pyramid", "helix")


@dataclass(frozen=True)
class SyntheticShapeSpec:
    points: int = 1024
    jitter: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.points < 8:
            raise InvalidConfig("need at least 8 points per instance")
        if self.jitter < 0:
            raise InvalidConfig("jitter must be >= 0")


def _mirrored(half: Callable[[int, np.random.Generator], np.ndarray]):
    """Point-symmetric shapes: sample half the points and add their mirror images.

    Keeps the centroid exactly at the origin so normalization does not
    distort the surface.
    """

    def sample(n, rng):
        h = half((n + 1) // 2, rng)
        return np.concatenate([h, -h])[:n]

    return sample


def _area_choice(areas, n, rng):
    areas = np.asarray(areas, dtype=np.float64)
    return rng.choice(len(areas), size=n, p=areas / areas.sum())


@_mirrored
def _sphere(n, rng):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@_mirrored
def _cube(n, rng):
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        others = [b for b in range(3) if b != a]
        sel = axis == a
        pts[sel, a] = sign[sel]
        pts[np.ix_(sel, others)] = uv[sel]
    return pts


@_mirrored
def _cylinder(n, rng, radius=0.6, half_h=1.0):
    part = _area_choice([2 * np.pi * radius * 2 * half_h, np.pi * radius**2, np.pi * radius**2], n, rng)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    r = np.where(part == 0, radius, radius * np.sqrt(rng.random(n)))
    z = np.select([part == 0, part == 1], [rng.uniform(-half_h, half_h, size=n), np.full(n, half_h)], -half_h)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _cone(n, rng, radius=1.0, height=2.0):
    slant = np.hypot(radius, height)
    part = _area_choice([np.pi * radius * slant, np.pi * radius**2], n, rng)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    # lateral: distance from apex has density proportional to itself
    s = np.sqrt(rng.random(n))
    r = np.where(part == 0, radius * s, radius * np.sqrt(rng.random(n)))
    z = np.where(part == 0, height / 2 - height * s, -height / 2)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


@_mirrored
def _torus(n, rng, major=1.0, minor=0.35):
    out = np.empty((0, 2))
    while len(out) < n:
        u = rng.uniform(0, 2 * np.pi, size=2 * n)
        v = rng.uniform(0, 2 * np.pi, size=2 * n)
        keep = rng.random(2 * n) < (major + minor * np.cos(v)) / (major + minor)
        out = np.concatenate([out, np.stack([u[keep], v[keep]], axis=1)])
    u, v = out[:n, 0], out[:n, 1]
    ring = major + minor * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1)


@_mirrored
def _plane(n, rng):
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    return np.column_stack([uv, np.zeros(n)])


_PYRAMID = TriangleMesh(
    [(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1), (0, 0, 1)],
    [(0, 2, 1), (0, 3, 2), (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)],
)


def _pyramid(n, rng):
    return sample_surface(_PYRAMID, n, int(rng.integers(0, 2**31))).points.copy()


def _helix(n, rng, radius=0.6, turns=3.0, half_h=1.0):
    t = rng.random(n)
    ang = 2 * np.pi * turns * t
    return np.stack([radius * np.cos(ang), radius * np.sin(ang), 2 * half_h * t - half_h], axis=1)


GENERATORS: Dict[str, Callable[[int, np.random.Generator], np.ndarray]] = {
    "sphere": _sphere,
    "cube": _cube,
    "cylinder": _cylinder,
    "cone": _cone,
    "torus": _torus,
    "plane": _plane,
    "pyramid": _pyramid,
    "helix": _helix,
}


def make_shape(shape: str, spec: SyntheticShapeSpec, rng: np.random.Generator) -> np.ndarray:
    if shape not in GENERATORS:
        raise InvalidConfig(f"unknown shape {shape!r}; choose from {', '.join(SHAPES)}")
    pts = GENERATORS[shape](spec.points, rng)
    rot = Rotation.random(random_state=rng)
    pts = rot.apply(pts)
    if spec.jitter > 0:
        pts = pts + rng.normal(0.0, spec.jitter, size=pts.shape)
    return pts


def synth_dataset(classes: Sequence[str], per_class: int, spec: SyntheticShapeSpec = SyntheticShapeSpec()) -> List[PointCloud]:
    """Sample, rotate, jitter and normalize ``per_class`` instances of each shape.

    Labels are positions in ``classes``. Instances are ordered class by class
    and every instance has its own seeded stream, so the output depends only
    on ``(classes, per_class, spec)``.
    """
    if per_class < 1:
        raise InvalidConfig("per_class must be >= 1")
    out = []
    for label, shape in enumerate(classes):
        for i in range(per_class):
            rng = substream(spec.seed, "synth", SHAPES.index(shape) if shape in SHAPES else derive_int(0, shape), i)
            pts = make_shape(shape, spec, rng)
            out.append(normalize(PointCloud(pts, label=label, name=f"{shape}_{i:04d}")))
    return out


def as_arrays(dataset: Sequence[PointCloud]):
    """Stack a dataset of equal-size clouds into ``(M, N, 3)`` and labels ``(M,)``."""
    X = np.stack([pc.points for pc in dataset])
    y = np.array([pc.label for pc in dataset], dtype=np.int64)
    return X, y

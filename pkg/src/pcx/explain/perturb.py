"""Cluster masks, flipping, and the two sample-weighting kernels."""

from __future__ import annotations

from math import comb
from typing import List, Optional

import numpy as np

from ..cluster import ClusterAssignment, cluster_mean_coordinates
from ..errors import EmptyResult, InvalidCoalition, InvalidConfig
from ..pointcloud import PointCloud
from .base import FLIP_MODES


def _points(pc) -> np.ndarray:
    return np.asarray(getattr(pc, "points", pc), dtype=np.float64)


def flip_points(points: np.ndarray, flipped: np.ndarray, flip_mode: str, fill: Optional[np.ndarray] = None) -> np.ndarray:
    """Flip the points selected by the boolean ``flipped``.

    ``fill`` gives the per-point replacement coordinates for ``mean_replace``.
    """
    if flip_mode == "remove":
        kept = points[~flipped]
        if len(kept) == 0:
            raise EmptyResult("every point was removed")
        return kept
    out = points.copy()
    if flip_mode == "mean_replace":
        out[flipped] = fill[flipped]
    elif flip_mode == "sign_reverse":
        out[flipped] = -out[flipped]
    else:
        raise InvalidConfig(f"flip_mode must be one of {FLIP_MODES}")
    return out


def apply_mask(pc, ca: ClusterAssignment, mask, flip_mode: str = "mean_replace", means: Optional[np.ndarray] = None):
    """Flip every cluster whose mask entry is 0; retained points are untouched.

    Returns a :class:`PointCloud` when given one, else an array.
    """
    pts = _points(pc)
    mask = np.asarray(mask)
    if mask.shape != (ca.n_clusters,):
        raise InvalidConfig(f"mask length {mask.shape} does not match {ca.n_clusters} clusters")
    if means is None and flip_mode == "mean_replace":
        means = cluster_mean_coordinates(PointCloud(pts), ca)
    flipped = mask[ca.assignment] == 0
    fill = means[ca.assignment] if means is not None else None
    out = flip_points(pts, flipped, flip_mode, fill)
    return pc.with_points(out) if isinstance(pc, PointCloud) else out


class Perturber:
    """Builds perturbed clouds for many masks over one instance."""

    def __init__(self, pc, ca: ClusterAssignment, flip_mode: str):
        if flip_mode not in FLIP_MODES:
            raise InvalidConfig(f"flip_mode must be one of {FLIP_MODES}")
        self.points = _points(pc)
        self.ca = ca
        self.flip_mode = flip_mode
        self.means = cluster_mean_coordinates(PointCloud(self.points), ca)
        self.fill = self.means[ca.assignment]

    def all_mean(self) -> np.ndarray:
        return self.fill.copy()

    def __call__(self, mask) -> np.ndarray:
        flipped = np.asarray(mask)[self.ca.assignment] == 0
        try:
            return flip_points(self.points, flipped, self.flip_mode, self.fill)
        except EmptyResult:
            # nothing left to remove: stand in with every point at its cluster mean
            return self.all_mean()

    def clouds(self, masks) -> List[np.ndarray]:
        return [self(m) for m in masks]


def lime_kernel(d, width: float):
    """Exponential smoothing kernel ``sqrt(exp(-d**2 / width**2))``."""
    if not width > 0:
        raise InvalidConfig("kernel width must be > 0")
    d = np.asarray(d, dtype=np.float64)
    return np.sqrt(np.exp(-(d**2) / width**2))


def cosine_distance_to_ones(masks) -> np.ndarray:
    """Cosine distance between each binary mask and the all-ones mask.

    The all-zero mask has no direction; it is placed at distance 1.
    """
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    m = masks.shape[1]
    kept = masks.sum(axis=1)
    norm = np.sqrt((masks**2).sum(axis=1)) * np.sqrt(m)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(norm > 0, kept / norm, 0.0)
    return 1.0 - sim


def shap_kernel(M: int, s: int) -> float:
    """Shapley kernel weight of a coalition of size ``s`` among ``M`` features."""
    if not 0 < s < M:
        raise InvalidCoalition(f"coalition size {s} has infinite weight among {M} features")
    return (M - 1) / (comb(M, s) * s * (M - s))

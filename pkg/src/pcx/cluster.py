"""K-means grouping of points into super-points.

The clusters are the binary features that the surrogate explainers switch
on and off.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import InvalidConfig, ParseError
from .pointcloud import PointCloud


@dataclass(frozen=True)
class KMeansConfig:
    n_clusters: int = 20
    max_iter: int = 100
    seed: int = 0
    tol: float = 1e-6

    def validate(self, n_points: int) -> None:
        if self.n_clusters < 1:
            raise InvalidConfig("n_clusters must be >= 1")
        if self.n_clusters > n_points:
            raise InvalidConfig(f"n_clusters={self.n_clusters} exceeds point count {n_points}")
        if self.max_iter < 1:
            raise InvalidConfig("max_iter must be >= 1")
        if self.tol < 0:
            raise InvalidConfig("tol must be >= 0")


@dataclass(frozen=True)
class ClusterAssignment:
    assignment: np.ndarray
    n_clusters: int
    centers: np.ndarray
    inertia: float
    history: tuple = ()  # inertia after each Lloyd iteration

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clusters)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def to_json(self) -> dict:
        return {
            "n_clusters": int(self.n_clusters),
            "assignment": [int(a) for a in self.assignment],
            "centers": [[float(v) for v in c] for c in self.centers],
            "inertia": float(self.inertia),
        }

    @classmethod
    def from_json(cls, data: dict, pc: Optional[PointCloud] = None) -> "ClusterAssignment":
        try:
            assignment = np.asarray(data["assignment"], dtype=np.int64)
            n_clusters = int(data["n_clusters"])
            centers = np.asarray(data["centers"], dtype=np.float64).reshape(n_clusters, 3)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad cluster assignment: {exc}") from None
        if assignment.size and (assignment.min() < 0 or assignment.max() >= n_clusters):
            raise ParseError("cluster index out of range")
        inertia = float(data.get("inertia", np.nan))
        if pc is not None:
            if len(assignment) != len(pc):
                raise ParseError("assignment length does not match point count")
            inertia = _inertia(pc.points, assignment, centers)
        return cls(assignment, n_clusters, centers, inertia)

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _inertia(points, assignment, centers) -> float:
    d = points - centers[assignment]
    return float(np.einsum("nd,nd->", d, d))


def _repair_empty(points, assignment, centers, d2):
    """Re-seed each empty cluster at the point farthest from its own center."""
    n_clusters = centers.shape[0]
    sizes = np.bincount(assignment, minlength=n_clusters)
    own = d2[np.arange(len(points)), assignment]
    for k in np.flatnonzero(sizes == 0):
        # only steal from clusters that keep at least one point
        movable = sizes[assignment] > 1
        cand = np.where(movable, own, -1.0)
        p = int(np.argmax(cand))
        if cand[p] < 0:
            break
        sizes[assignment[p]] -= 1
        assignment[p] = k
        sizes[k] = 1
        centers[k] = points[p]
        own[p] = 0.0
    return assignment


def kmeans(pc: PointCloud, cfg: KMeansConfig = KMeansConfig()) -> ClusterAssignment:
    """Lloyd's algorithm seeded by sampling distinct points without replacement.

    Ties in the nearest-center search go to the lowest cluster index. Stops
    after ``max_iter`` iterations or once no center moves more than ``tol``.
    """
    points = pc.points
    n = len(points)
    cfg.validate(n)
    rng = np.random.default_rng(cfg.seed)
    init = rng.choice(n, size=cfg.n_clusters, replace=False)
    centers = points[np.sort(init)].copy()

    history: List[float] = []
    assignment = None
    for _ in range(cfg.max_iter):
        d2 = _sq_dists(points, centers)
        assignment = np.argmin(d2, axis=1)
        assignment = _repair_empty(points, assignment, centers, d2)
        new_centers = np.empty_like(centers)
        counts = np.bincount(assignment, minlength=cfg.n_clusters)
        for axis in range(3):
            new_centers[:, axis] = np.bincount(assignment, weights=points[:, axis], minlength=cfg.n_clusters)
        new_centers /= counts[:, None]
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        history.append(_inertia(points, assignment, centers))
        if shift < cfg.tol:
            break

    assignment = assignment.astype(np.int64)
    assignment.setflags(write=False)
    centers.setflags(write=False)
    return ClusterAssignment(assignment, cfg.n_clusters, centers, history[-1], tuple(history))


def cluster_mean_coordinates(pc: PointCloud, ca: ClusterAssignment) -> np.ndarray:
    """Per-axis mean of the points in each cluster, shape ``(n_clusters, 3)``."""
    if len(ca.assignment) != len(pc):
        raise InvalidConfig("cluster assignment does not match point cloud")
    counts = np.bincount(ca.assignment, minlength=ca.n_clusters).astype(np.float64)
    means = np.stack(
        [np.bincount(ca.assignment, weights=pc.points[:, a], minlength=ca.n_clusters) for a in range(3)],
        axis=1,
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        return means / counts[:, None]

"""Explanation records, configuration and contribution summarizing."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..cluster import ClusterAssignment
from ..errors import InvalidConfig, ParseError

FLIP_MODES = ("remove", "mean_replace", "sign_reverse")
CLUSTER_METHODS = ("lime", "kernelshap", "exact_shapley")
GRADIENT_METHODS = ("vanilla_gradient", "integrated_gradients")
METHODS = CLUSTER_METHODS + GRADIENT_METHODS

# unpenalized fits for KernelShap, a light ridge for LIME
DEFAULT_RIDGE = {"lime": 1e-3, "kernelshap": 0.0}


@dataclass(frozen=True)
class ExplainConfig:
    n_samples: int = 1000
    kernel_width: float = 0.25
    ridge: Optional[float] = None
    flip_mode: str = "mean_replace"
    seed: int = 0
    ig_steps: int = 64

    def ridge_for(self, method: str) -> float:
        return DEFAULT_RIDGE.get(method, 0.0) if self.ridge is None else float(self.ridge)

    def validate(self, n_clusters: Optional[int] = None) -> None:
        if self.flip_mode not in FLIP_MODES:
            raise InvalidConfig(f"flip_mode must be one of {FLIP_MODES}")
        if not self.kernel_width > 0:
            raise InvalidConfig("kernel_width must be > 0")
        if self.ridge is not None and self.ridge < 0:
            raise InvalidConfig("ridge penalty must be >= 0")
        if n_clusters is not None and self.n_samples < n_clusters + 2:
            raise InvalidConfig(f"n_samples={self.n_samples} must be >= n_clusters + 2 = {n_clusters + 2}")


@dataclass(frozen=True)
class Explanation:
    method: str
    target_class: int
    phi: np.ndarray
    phi0: float
    point_contributions: np.ndarray
    surrogate_r2: Optional[float] = None
    config: dict = field(default_factory=dict)
    model_fingerprint: str = ""

    @property
    def is_cluster_method(self) -> bool:
        return self.method in CLUSTER_METHODS

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "target_class": int(self.target_class),
            "phi": [float(v) for v in self.phi],
            "phi0": float(self.phi0),
            "point_contributions": [float(v) for v in self.point_contributions],
            "surrogate_r2": None if self.surrogate_r2 is None else float(self.surrogate_r2),
            "config": self.config,
            "model_fingerprint": self.model_fingerprint,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, data: dict) -> "Explanation":
        try:
            return cls(
                method=data["method"],
                target_class=int(data["target_class"]),
                phi=np.asarray(data.get("phi", []), dtype=np.float64),
                phi0=float(data.get("phi0", 0.0)),
                point_contributions=np.asarray(data["point_contributions"], dtype=np.float64),
                surrogate_r2=data.get("surrogate_r2"),
                config=dict(data.get("config", {})),
                model_fingerprint=data.get("model_fingerprint", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad explanation record: {exc}") from None


def config_snapshot(cfg: ExplainConfig, method: str, n_clusters: Optional[int] = None, **extra) -> dict:
    snap = asdict(cfg)
    snap["ridge"] = cfg.ridge_for(method)
    snap["n_clusters"] = n_clusters
    snap.update(extra)
    return snap


def spread_over_points(phi: np.ndarray, ca: ClusterAssignment) -> np.ndarray:
    """Give every point its cluster's weight divided by the cluster size."""
    sizes = np.bincount(ca.assignment, minlength=ca.n_clusters)
    return np.asarray(phi, dtype=np.float64)[ca.assignment] / sizes[ca.assignment]


def sum_axes(per_axis: np.ndarray) -> np.ndarray:
    """Collapse ``(N, 3)`` per-coordinate contributions to one value per point."""
    return np.asarray(per_axis, dtype=np.float64).sum(axis=-1)


def summarize_contributions(expl: Explanation, ca: Optional[ClusterAssignment] = None) -> np.ndarray:
    if expl.is_cluster_method:
        if ca is None:
            raise InvalidConfig("cluster explanations need the cluster assignment")
        return spread_over_points(expl.phi, ca)
    return np.asarray(expl.point_contributions, dtype=np.float64)

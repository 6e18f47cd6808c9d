"""Black-box classifier handle used by the explainers and the verifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..errors import NoGradient, ShapeMismatch
from . import network

PredictFn = Callable[[Sequence[np.ndarray]], np.ndarray]
GradientFn = Callable[[np.ndarray, int], np.ndarray]


def _as_points(cloud) -> np.ndarray:
    return np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)


@dataclass
class ClassifierHandle:
    """``predict`` maps a batch of ``(N, 3)`` clouds to a ``(B, K)`` logit array.

    ``gradient(points, k)`` is optional; when present it returns the derivative
    of logit ``k`` with respect to the coordinates, for a single ``(N, 3)``
    cloud or a stack ``(B, N, 3)``.
    """

    predict_fn: PredictFn
    class_names: List[str] = field(default_factory=list)
    gradient_fn: Optional[GradientFn] = None
    fingerprint: str = ""

    @property
    def differentiable(self) -> bool:
        return self.gradient_fn is not None

    def predict(self, clouds) -> np.ndarray:
        clouds = [_as_points(c) for c in clouds]
        out = np.asarray(self.predict_fn(clouds), dtype=np.float64)
        if out.ndim != 2 or out.shape[0] != len(clouds):
            raise ShapeMismatch(f"predict returned shape {out.shape} for {len(clouds)} clouds")
        if self.class_names and out.shape[1] != len(self.class_names):
            raise ShapeMismatch("predict output width does not match class count")
        return out

    def predict_one(self, cloud) -> np.ndarray:
        return self.predict([cloud])[0]

    def gradient(self, points, class_index: int) -> np.ndarray:
        if self.gradient_fn is None:
            raise NoGradient("classifier does not expose gradients")
        return np.asarray(self.gradient_fn(_as_points(points), class_index), dtype=np.float64)

    def close(self) -> None:
        pass


def scores(handle: ClassifierHandle, clouds, target: int, batch_size: int = 64) -> np.ndarray:
    """Target-class logit for every cloud, evaluated in input order."""
    clouds = list(clouds)
    out = np.empty(len(clouds), dtype=np.float64)
    for start in range(0, len(clouds), batch_size):
        chunk = clouds[start : start + batch_size]
        out[start : start + len(chunk)] = handle.predict(chunk)[:, target]
    return out


def from_params(params: network.TinyPointNetParams, batch_size: int = 32) -> ClassifierHandle:
    """Wrap network weights as a differentiable classifier (float64 arithmetic)."""
    params = params.astype(np.float64)

    def predict(clouds):
        # one forward pass per cloud: a cloud's logits never depend on what
        # else shares its batch (BLAS summation order varies with shape)
        out = np.empty((len(clouds), params.n_classes))
        for i, c in enumerate(clouds):
            out[i] = network.forward_batch(params, np.asarray(c, dtype=np.float64)[None])[0]
        return out

    def grad(points, k):
        if points.ndim == 2:
            return network.gradient(params, points, k)
        return np.concatenate(
            [network.gradient(params, points[s : s + batch_size], k) for s in range(0, len(points), batch_size)]
        )

    return ClassifierHandle(predict, list(params.class_names), grad, network.fingerprint(params))

"""Gradient baselines: input-times-gradient and integrated gradients."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import InvalidConfig, NoGradient, ShapeMismatch
from ..model.handle import ClassifierHandle
from .base import Explanation, sum_axes
from .surrogate import resolve_target


def _require_gradient(f: ClassifierHandle) -> None:
    if not f.differentiable:
        raise NoGradient("this method needs a classifier that exposes gradients")


def vanilla_gradient(f: ClassifierHandle, pc, target_class: Optional[int] = None) -> Explanation:
    _require_gradient(f)
    points = np.asarray(getattr(pc, "points", pc), dtype=np.float64)
    target = resolve_target(f, points, target_class)
    grad = f.gradient(points, target)
    return Explanation(
        method="vanilla_gradient",
        target_class=target,
        phi=np.zeros(0),
        phi0=0.0,
        point_contributions=sum_axes(grad * points),
        config={},
        model_fingerprint=f.fingerprint,
    )


def integrated_gradients(
    f: ClassifierHandle,
    pc,
    target_class: Optional[int] = None,
    steps: int = 64,
    baseline=None,
) -> Explanation:
    """Midpoint Riemann sum of the gradient along the straight path from ``baseline``.

    The default baseline puts every point at the origin. ``phi0`` holds the
    baseline's target logit, so ``phi0 + sum(contributions)`` approximates
    the instance's logit.
    """
    _require_gradient(f)
    if steps < 8:
        raise InvalidConfig("integrated gradients needs steps >= 8")
    points = np.asarray(getattr(pc, "points", pc), dtype=np.float64)
    base = np.zeros_like(points) if baseline is None else np.asarray(getattr(baseline, "points", baseline), dtype=np.float64)
    if base.shape != points.shape:
        raise ShapeMismatch(f"baseline shape {base.shape} differs from input {points.shape}")
    target = resolve_target(f, points, target_class)
    diff = points - base
    alphas = (np.arange(steps) + 0.5) / steps
    total = np.zeros_like(points)
    chunk = 32
    for s in range(0, steps, chunk):
        a = alphas[s : s + chunk]
        path = base[None] + a[:, None, None] * diff[None]
        total += f.gradient(path, target).sum(axis=0)
    per_axis = diff * total / steps
    return Explanation(
        method="integrated_gradients",
        target_class=target,
        phi=np.zeros(0),
        phi0=float(f.predict_one(base)[target]),
        point_contributions=sum_axes(per_axis),
        config={"ig_steps": steps, "baseline": "origin" if baseline is None else "custom"},
        model_fingerprint=f.fingerprint,
    )

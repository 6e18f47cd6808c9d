"""Local surrogate explainers over cluster masks: LIME, KernelShap and exact Shapley."""

from __future__ import annotations

import logging
from math import factorial
from typing import Optional, Tuple

import numpy as np

from ..cluster import ClusterAssignment
from ..errors import InvalidConfig, SingularFit, TooManyClusters
from ..model.handle import ClassifierHandle, scores
from .base import ExplainConfig, Explanation, config_snapshot, spread_over_points
from .perturb import Perturber, cosine_distance_to_ones, lime_kernel, shap_kernel

log = logging.getLogger(__name__)

MAX_EXACT_CLUSTERS = 15
_COND_LIMIT = 1e12


def resolve_target(f: ClassifierHandle, points, target_class: Optional[int]) -> int:
    if target_class is None:
        return int(np.argmax(f.predict_one(points)))
    return int(target_class)


def weighted_ridge(X: np.ndarray, y: np.ndarray, w: np.ndarray, ridge: float = 0.0) -> Tuple[np.ndarray, float]:
    """Weighted least squares with an L2 penalty on the slopes only.

    Solved on weight-centered data so the intercept stays unpenalized.
    Raises :class:`SingularFit` when the weighted normal matrix is
    numerically singular.
    """
    w = np.asarray(w, dtype=np.float64)
    sw = w.sum()
    if not sw > 0:
        raise SingularFit("all sample weights are zero")
    x_bar = w @ X / sw
    y_bar = w @ y / sw
    Xc = X - x_bar
    yc = y - y_bar
    A = Xc.T @ (Xc * w[:, None]) + ridge * np.eye(X.shape[1])
    if not np.isfinite(A).all() or np.linalg.cond(A) > _COND_LIMIT:
        raise SingularFit("weighted design matrix is rank deficient")
    beta = np.linalg.solve(A, Xc.T @ (w * yc))
    return beta, float(y_bar - x_bar @ beta)


def weighted_r2(y, fitted, w) -> float:
    w = np.asarray(w, dtype=np.float64)
    y_bar = w @ y / w.sum()
    sst = float(w @ (y - y_bar) ** 2)
    sse = float(w @ (y - fitted) ** 2)
    if sst <= 0:
        return 1.0 if sse <= 1e-24 else 0.0
    return float(np.clip(1.0 - sse / sst, 0.0, 1.0))


def _fit_with_fallback(X, y, w, ridge):
    try:
        return weighted_ridge(X, y, w, ridge), ridge
    except SingularFit:
        if ridge >= 1e-2:
            raise
        log.warning("singular surrogate fit, retrying with ridge penalty 1e-2")
        return weighted_ridge(X, y, w, 1e-2), 1e-2


def lime_masks(n_clusters: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Flip a uniformly drawn number of clusters, chosen as a uniform subset."""
    masks = np.ones((n_samples, n_clusters), dtype=np.int8)
    for row in masks:
        k = rng.integers(1, n_clusters + 1)
        row[rng.choice(n_clusters, size=k, replace=False)] = 0
    return masks


def lime_explain(
    f: ClassifierHandle,
    pc,
    ca: ClusterAssignment,
    target_class: Optional[int] = None,
    cfg: ExplainConfig = ExplainConfig(),
) -> Explanation:
    """Fit a kernel-weighted linear surrogate of the target logit on cluster masks."""
    cfg.validate(ca.n_clusters)
    points = np.asarray(getattr(pc, "points", pc), dtype=np.float64)
    target = resolve_target(f, points, target_class)
    rng = np.random.default_rng(cfg.seed)
    masks = lime_masks(ca.n_clusters, cfg.n_samples, rng)
    perturb = Perturber(points, ca, cfg.flip_mode)
    y = scores(f, perturb.clouds(masks), target)
    w = lime_kernel(cosine_distance_to_ones(masks), cfg.kernel_width)
    X = masks.astype(np.float64)
    (phi, phi0), ridge = _fit_with_fallback(X, y, w, cfg.ridge_for("lime"))
    r2 = weighted_r2(y, X @ phi + phi0, w)
    return Explanation(
        method="lime",
        target_class=target,
        phi=phi,
        phi0=phi0,
        point_contributions=spread_over_points(phi, ca),
        surrogate_r2=r2,
        config=config_snapshot(cfg, "lime", ca.n_clusters, ridge=ridge),
        model_fingerprint=f.fingerprint,
    )


# --------------------------------------------------------------------------
# KernelShap


def _all_proper_coalitions(M: int) -> np.ndarray:
    codes = np.arange(1, 2**M - 1, dtype=np.int64)
    return ((codes[:, None] >> np.arange(M)) & 1).astype(np.int8)


def kernelshap_masks(M: int, n_samples: int, rng: np.random.Generator):
    """Coalition masks and regression weights.

    Enumerates every proper coalition with its exact kernel weight when the
    budget allows it; otherwise draws coalition sizes in proportion to their
    total kernel mass and subsets uniformly, each draw then weighing 1.
    """
    if n_samples >= 2**M - 2:
        masks = _all_proper_coalitions(M)
        sizes = masks.sum(axis=1)
        weights = np.array([shap_kernel(M, int(s)) for s in sizes])
        return masks, weights, True
    size_grid = np.arange(1, M)
    mass = (M - 1) / (size_grid * (M - size_grid))
    sizes = rng.choice(size_grid, size=n_samples, p=mass / mass.sum())
    masks = np.zeros((n_samples, M), dtype=np.int8)
    for row, s in zip(masks, sizes):
        row[rng.choice(M, size=s, replace=False)] = 1
    return masks, np.ones(n_samples), False


def _constrained_fit(Z, y, w, f_empty, f_full, ridge):
    """Weighted least squares with g(0) = f_empty and g(1) = f_full enforced exactly."""
    M = Z.shape[1]
    delta = f_full - f_empty
    if M == 1:
        return np.array([delta])
    last = Z[:, -1].astype(np.float64)
    A = Z[:, :-1].astype(np.float64) - last[:, None]
    b = y - f_empty - last * delta
    sw = np.sqrt(w)
    As = A * sw[:, None]
    bs = b * sw
    if ridge > 0:
        As = np.vstack([As, np.sqrt(ridge) * np.eye(M - 1)])
        bs = np.concatenate([bs, np.zeros(M - 1)])
    G = As.T @ As
    if not np.isfinite(G).all() or np.linalg.cond(G) > _COND_LIMIT:
        raise SingularFit("KernelShap design is rank deficient")
    head, *_ = np.linalg.lstsq(As, bs, rcond=None)
    return np.append(head, delta - head.sum())


def kernelshap_explain(
    f: ClassifierHandle,
    pc,
    ca: ClusterAssignment,
    target_class: Optional[int] = None,
    cfg: ExplainConfig = ExplainConfig(),
) -> Explanation:
    """Shapley-kernel weighted surrogate with exact endpoint constraints."""
    cfg.validate(ca.n_clusters)
    points = np.asarray(getattr(pc, "points", pc), dtype=np.float64)
    target = resolve_target(f, points, target_class)
    M = ca.n_clusters
    rng = np.random.default_rng(cfg.seed)
    masks, w, enumerated = kernelshap_masks(M, cfg.n_samples, rng)
    perturb = Perturber(points, ca, cfg.flip_mode)
    f_full, f_empty = scores(f, [points, perturb(np.zeros(M, dtype=np.int8))], target)
    y = scores(f, perturb.clouds(masks), target)
    ridge = cfg.ridge_for("kernelshap")
    try:
        phi = _constrained_fit(masks, y, w, f_empty, f_full, ridge)
    except SingularFit:
        if ridge >= 1e-2:
            raise
        log.warning("singular KernelShap fit, retrying with ridge penalty 1e-2")
        ridge = 1e-2
        phi = _constrained_fit(masks, y, w, f_empty, f_full, ridge)
    r2 = weighted_r2(y, masks @ phi + f_empty, w)
    return Explanation(
        method="kernelshap",
        target_class=target,
        phi=phi,
        phi0=float(f_empty),
        point_contributions=spread_over_points(phi, ca),
        surrogate_r2=r2,
        config=config_snapshot(cfg, "kernelshap", M, ridge=ridge, enumerated=enumerated),
        model_fingerprint=f.fingerprint,
    )


# --------------------------------------------------------------------------
# brute-force Shapley values


def coalition_values(f: ClassifierHandle, points, ca: ClusterAssignment, target: int, flip_mode: str) -> np.ndarray:
    """Target logit for every coalition, indexed by bitmask (bit j = cluster j kept)."""
    M = ca.n_clusters
    codes = np.arange(2**M, dtype=np.int64)
    masks = ((codes[:, None] >> np.arange(M)) & 1).astype(np.int8)
    perturb = Perturber(points, ca, flip_mode)
    return scores(f, perturb.clouds(masks), target)


def shapley_from_values(v: np.ndarray, M: int) -> np.ndarray:
    codes = np.arange(2**M, dtype=np.int64)
    size = np.array([bin(c).count("1") for c in codes])
    weight = np.array([factorial(s) * factorial(M - s - 1) / factorial(M) if s < M else 0.0 for s in size])
    phi = np.empty(M)
    for i in range(M):
        bit = 1 << i
        without = codes[(codes & bit) == 0]
        phi[i] = float(np.sum(weight[without] * (v[without | bit] - v[without])))
    return phi


def exact_shapley(
    f: ClassifierHandle,
    pc,
    ca: ClusterAssignment,
    target_class: Optional[int] = None,
    flip_mode: str = "mean_replace",
) -> Explanation:
    """Shapley values of the cluster game by full enumeration (``n_clusters <= 15``)."""
    if ca.n_clusters > MAX_EXACT_CLUSTERS:
        raise TooManyClusters(f"exact Shapley needs n_clusters <= {MAX_EXACT_CLUSTERS}, got {ca.n_clusters}")
    if flip_mode not in ("remove", "mean_replace", "sign_reverse"):
        raise InvalidConfig(f"unknown flip_mode {flip_mode!r}")
    points = np.asarray(getattr(pc, "points", pc), dtype=np.float64)
    target = resolve_target(f, points, target_class)
    v = coalition_values(f, points, ca, target, flip_mode)
    phi = shapley_from_values(v, ca.n_clusters)
    return Explanation(
        method="exact_shapley",
        target_class=target,
        phi=phi,
        phi0=float(v[0]),
        point_contributions=spread_over_points(phi, ca),
        surrogate_r2=None,
        config={"n_clusters": ca.n_clusters, "flip_mode": flip_mode},
        model_fingerprint=f.fingerprint,
    )

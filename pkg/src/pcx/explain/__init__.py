"""Explainers for point-cloud classifiers.

Cluster methods (LIME, KernelShap, exact Shapley) treat each k-means
super-point as one binary feature; gradient methods attribute every
coordinate and sum the three axes per point.
"""

from typing import Optional

from ..cluster import ClusterAssignment
from ..errors import InvalidConfig
from ..model.handle import ClassifierHandle
from .base import (
    CLUSTER_METHODS,
    FLIP_MODES,
    GRADIENT_METHODS,
    METHODS,
    ExplainConfig,
    Explanation,
    spread_over_points,
    sum_axes,
    summarize_contributions,
)
from .gradients import integrated_gradients, vanilla_gradient
from .perturb import Perturber, apply_mask, cosine_distance_to_ones, flip_points, lime_kernel, shap_kernel
from .surrogate import (
    MAX_EXACT_CLUSTERS,
    exact_shapley,
    kernelshap_explain,
    lime_explain,
    resolve_target,
    weighted_ridge,
)


def explain(
    method: str,
    f: ClassifierHandle,
    pc,
    ca: Optional[ClusterAssignment] = None,
    target_class: Optional[int] = None,
    cfg: ExplainConfig = ExplainConfig(),
) -> Explanation:
    """Dispatch to one explainer by name."""
    if method in CLUSTER_METHODS and ca is None:
        raise InvalidConfig(f"{method} needs a cluster assignment")
    if method == "lime":
        return lime_explain(f, pc, ca, target_class, cfg)
    if method == "kernelshap":
        return kernelshap_explain(f, pc, ca, target_class, cfg)
    if method == "exact_shapley":
        return exact_shapley(f, pc, ca, target_class, cfg.flip_mode)
    if method == "vanilla_gradient":
        return vanilla_gradient(f, pc, target_class)
    if method == "integrated_gradients":
        return integrated_gradients(f, pc, target_class, steps=cfg.ig_steps)
    raise InvalidConfig(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


__all__ = [
    "CLUSTER_METHODS",
    "FLIP_MODES",
    "GRADIENT_METHODS",
    "MAX_EXACT_CLUSTERS",
    "METHODS",
    "ExplainConfig",
    "Explanation",
    "Perturber",
    "apply_mask",
    "cosine_distance_to_ones",
    "exact_shapley",
    "explain",
    "flip_points",
    "integrated_gradients",
    "kernelshap_explain",
    "lime_explain",
    "lime_kernel",
    "resolve_target",
    "shap_kernel",
    "spread_over_points",
    "sum_axes",
    "summarize_contributions",
    "vanilla_gradient",
    "weighted_ridge",
]

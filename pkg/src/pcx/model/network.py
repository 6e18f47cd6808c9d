"""Miniature max-pool point network: shared per-point MLP, max-pool, dense head.

Everything is plain numpy. ``forward_batch`` keeps the activations needed by
``backward`` so the same code path serves training (parameter gradients)
and explanation (input gradients).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ModelParseError, ShapeMismatch, VersionMismatch

MODEL_VERSION = 1
DEFAULT_POINT_WIDTHS = (3, 32, 64, 128)
DEFAULT_HEAD_WIDTHS = (128, 64)

Layer = Tuple[np.ndarray, np.ndarray]


@dataclass
class TinyPointNetParams:
    """Weights of the point network.

    ``point_layers`` map ``3 -> ... -> C`` and are applied to every point with
    a rectifier after each layer; ``head_layers`` map the max-pooled ``C``
    features to logits, with a rectifier after every layer but the last.
    """

    point_layers: List[Layer]
    head_layers: List[Layer]
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.check()

    @property
    def widths(self) -> List[int]:
        return [self.point_layers[0][0].shape[0]] + [W.shape[1] for W, _ in self.point_layers]

    @property
    def head(self) -> List[int]:
        return [self.head_layers[0][0].shape[0]] + [W.shape[1] for W, _ in self.head_layers]

    @property
    def n_classes(self) -> int:
        return self.head_layers[-1][0].shape[1]

    def check(self) -> None:
        if not self.point_layers or not self.head_layers:
            raise ShapeMismatch("network needs at least one point layer and one head layer")
        prev = 3
        for W, b in self.point_layers + self.head_layers:
            if W.ndim != 2 or W.shape[0] != prev or b.shape != (W.shape[1],):
                raise ShapeMismatch(f"layer shapes do not chain at width {prev}: W{W.shape} b{b.shape}")
            prev = W.shape[1]
        if self.class_names and len(self.class_names) != self.n_classes:
            raise ShapeMismatch("class_names length does not match output width")

    def astype(self, dtype) -> "TinyPointNetParams":
        cast = lambda layers: [(W.astype(dtype), b.astype(dtype)) for W, b in layers]
        return TinyPointNetParams(cast(self.point_layers), cast(self.head_layers), list(self.class_names))

    def copy(self) -> "TinyPointNetParams":
        return self.astype(self.point_layers[0][0].dtype)

    def arrays(self) -> List[np.ndarray]:
        out = []
        for W, b in self.point_layers + self.head_layers:
            out += [W, b]
        return out


def init_params(
    n_classes: int,
    seed: int = 0,
    point_widths: Sequence[int] = DEFAULT_POINT_WIDTHS,
    head_widths: Sequence[int] = DEFAULT_HEAD_WIDTHS,
    class_names: Optional[Sequence[str]] = None,
    dtype=np.float64,
) -> TinyPointNetParams:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)

    def layers(widths):
        out = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)).astype(dtype)
            out.append((W, np.zeros(fan_out, dtype=dtype)))
        return out

    head = list(head_widths) + [n_classes]
    if head[0] != point_widths[-1]:
        head = [point_widths[-1]] + head
    return TinyPointNetParams(layers(point_widths), layers(head), list(class_names or []))


# --------------------------------------------------------------------------
# forward / backward


def forward_batch(params: TinyPointNetParams, X: np.ndarray, keep: bool = False):
    """Logits for a stack of clouds ``X`` of shape ``(B, N, 3)``.

    With ``keep=True`` also returns the activation cache for :func:`backward`.
    """
    if X.ndim != 3 or X.shape[2] != 3:
        raise ShapeMismatch(f"expected (B, N, 3) input, got {X.shape}")
    h = X
    point_acts = [h]
    for W, b in params.point_layers:
        h = np.maximum(h @ W + b, 0.0)
        point_acts.append(h)
    # np.argmax resolves ties to the lowest point index
    arg = np.argmax(h, axis=1)
    g = np.take_along_axis(h, arg[:, None, :], axis=1)[:, 0, :]
    head_acts = [g]
    for i, (W, b) in enumerate(params.head_layers):
        g = g @ W + b
        if i < len(params.head_layers) - 1:
            g = np.maximum(g, 0.0)
        head_acts.append(g)
    if keep:
        return g, (point_acts, arg, head_acts)
    return g


def backward(params: TinyPointNetParams, cache, dlogits: np.ndarray, want_params: bool = True):
    """Back-propagate ``dlogits`` (B, K).

    Returns ``(param_grads, input_grad)``; ``param_grads`` follows the order of
    :meth:`TinyPointNetParams.arrays` and is ``None`` when not requested.
    """
    point_acts, arg, head_acts = cache
    grads_head = []
    d = dlogits
    n_head = len(params.head_layers)
    for i in range(n_head - 1, -1, -1):
        W, _ = params.head_layers[i]
        if i < n_head - 1:
            d = d * (head_acts[i + 1] > 0)
        if want_params:
            grads_head.append((head_acts[i].T @ d, d.sum(axis=0)))
        d = d @ W.T
    # max-pool: route each channel's gradient to its winning point
    h_last = point_acts[-1]
    dh = np.zeros_like(h_last)
    np.put_along_axis(dh, arg[:, None, :], d[:, None, :], axis=1)
    grads_point = []
    for i in range(len(params.point_layers) - 1, -1, -1):
        W, _ = params.point_layers[i]
        dh = dh * (point_acts[i + 1] > 0)
        if want_params:
            inp = point_acts[i].reshape(-1, W.shape[0])
            flat = dh.reshape(-1, W.shape[1])
            grads_point.append((inp.T @ flat, flat.sum(axis=0)))
        dh = dh @ W.T
    if not want_params:
        return None, dh
    pg = []
    for gW, gb in reversed(grads_point):
        pg += [gW, gb]
    for gW, gb in reversed(grads_head):
        pg += [gW, gb]
    return pg, dh


def forward(params: TinyPointNetParams, points) -> np.ndarray:
    """Logits for a single ``(N, 3)`` cloud (or :class:`PointCloud`)."""
    pts = np.asarray(getattr(points, "points", points), dtype=params.point_layers[0][0].dtype)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeMismatch(f"expected (N, 3) points, got {pts.shape}")
    return forward_batch(params, pts[None])[0]


def gradient(params: TinyPointNetParams, points, class_index: int) -> np.ndarray:
    """Derivative of one class logit with respect to every input coordinate.

    Accepts a single ``(N, 3)`` cloud or a stack ``(B, N, 3)``.
    """
    if not 0 <= class_index < params.n_classes:
        raise ShapeMismatch(f"class index {class_index} out of range")
    pts = np.asarray(getattr(points, "points", points), dtype=params.point_layers[0][0].dtype)
    single = pts.ndim == 2
    X = pts[None] if single else pts
    logits, cache = forward_batch(params, X, keep=True)
    d = np.zeros_like(logits)
    d[:, class_index] = 1.0
    _, dx = backward(params, cache, d, want_params=False)
    return dx[0] if single else dx


# --------------------------------------------------------------------------
# persistence


def _num(x) -> str:
    return format(float(x), ".17g")


def _arr_text(a: np.ndarray) -> str:
    if a.ndim == 1:
        return "[" + ",".join(_num(v) for v in a) + "]"
    return "[" + ",".join(_arr_text(row) for row in a) + "]"


def dumps_model(params: TinyPointNetParams) -> str:
    weights = []
    for prefix, layers in (("point", params.point_layers), ("head", params.head_layers)):
        for i, (W, b) in enumerate(layers):
            weights.append(f'"{prefix}.{i}.W":{_arr_text(np.asarray(W, dtype=np.float64))}')
            weights.append(f'"{prefix}.{i}.b":{_arr_text(np.asarray(b, dtype=np.float64))}')
    head = params.head
    return (
        "{"
        f'"version":{MODEL_VERSION},'
        f'"widths":{json.dumps(params.widths)},'
        f'"head":{json.dumps(head)},'
        f'"class_names":{json.dumps(list(params.class_names))},'
        '"weights":{' + ",".join(weights) + "}"
        "}\n"
    )


def loads_model(text: str) -> TinyPointNetParams:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"model file is not valid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(data, dict):
        raise ModelParseError("model file must hold a JSON object")
    if "version" not in data:
        raise VersionMismatch("model file has no version field")
    if data["version"] != MODEL_VERSION:
        raise VersionMismatch(f"model version {data['version']!r}, expected {MODEL_VERSION}")
    try:
        widths, head, weights = data["widths"], data["head"], data["weights"]

        def layers(prefix, n):
            return [
                (
                    np.asarray(weights[f"{prefix}.{i}.W"], dtype=np.float64),
                    np.asarray(weights[f"{prefix}.{i}.b"], dtype=np.float64),
                )
                for i in range(n)
            ]

        params = TinyPointNetParams(
            layers("point", len(widths) - 1), layers("head", len(head) - 1), list(data.get("class_names", []))
        )
    except (KeyError, TypeError, ValueError, ShapeMismatch) as exc:
        raise ModelParseError(f"malformed model file: {exc}") from None
    if params.widths != list(widths) or params.head != list(head):
        raise ModelParseError("declared widths do not match weight shapes")
    if not all(np.all(np.isfinite(a)) for a in params.arrays()):
        raise ModelParseError("non-finite weight")
    return params


def save_model(params: TinyPointNetParams, path) -> None:
    Path(path).write_text(dumps_model(params), encoding="utf-8")


def load_model(path) -> TinyPointNetParams:
    return loads_model(Path(path).read_text(encoding="utf-8"))


def fingerprint(params: TinyPointNetParams) -> str:
    return "sha256:" + hashlib.sha256(dumps_model(params).encode()).hexdigest()

"""Mini-batch training of the point network with momentum SGD."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..errors import DivergedLoss, InvalidDataset
from ..pointcloud import PointCloud
from . import network
from .synth import as_arrays

log = logging.getLogger(__name__)


@dataclass
class EpochLog:
    epoch: int
    train_acc: float
    test_acc: float
    loss: float


@dataclass
class TrainResult:
    params: network.TinyPointNetParams
    log: List[EpochLog] = field(default_factory=list)


def _softmax_xent(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    loss = -np.log(p[np.arange(len(y)), y] + 1e-12).mean()
    d = p
    d[np.arange(len(y)), y] -= 1.0
    return loss, d / len(y)


def accuracy(params: network.TinyPointNetParams, X: np.ndarray, y: np.ndarray, batch_size: int = 64) -> float:
    if len(X) == 0:
        return float("nan")
    hits = 0
    for s in range(0, len(X), batch_size):
        logits = network.forward_batch(params, X[s : s + batch_size].astype(params.point_layers[0][0].dtype))
        hits += int((logits.argmax(axis=1) == y[s : s + batch_size]).sum())
    return hits / len(X)


def train(
    dataset: Sequence[PointCloud],
    epochs: int = 30,
    lr: float = 0.01,
    batch_size: int = 32,
    seed: int = 0,
    test: Optional[Sequence[PointCloud]] = None,
    class_names: Optional[Sequence[str]] = None,
    momentum: float = 0.9,
    dtype=np.float32,
) -> TrainResult:
    """Minimize softmax cross-entropy on the logits.

    Uses He initialization, a per-epoch seeded shuffle and a cosine learning
    rate decay. Arithmetic runs in ``dtype`` (float32 by default for speed);
    returned weights are float64.
    """
    if not dataset:
        raise InvalidDataset("training set is empty")
    X, y = as_arrays(dataset)
    n_classes = int(y.max()) + 1
    if len(np.unique(y)) < 2:
        raise InvalidDataset("training set needs at least two classes")
    Xt, yt = as_arrays(test) if test else (np.zeros((0,) + X.shape[1:]), np.zeros(0, dtype=np.int64))
    if class_names is None:
        class_names = [str(k) for k in range(n_classes)]
    X = X.astype(dtype)
    Xt = Xt.astype(dtype)

    params = network.init_params(n_classes, seed=seed, class_names=class_names, dtype=dtype)
    velocity = [np.zeros_like(a) for a in params.arrays()]
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        rate = lr * 0.5 * (1.0 + np.cos(np.pi * epoch / max(epochs, 1)))
        order = rng.permutation(len(X))
        total, hits = 0.0, 0
        for s in range(0, len(order), batch_size):
            idx = order[s : s + batch_size]
            logits, cache = network.forward_batch(params, X[idx], keep=True)
            loss, d = _softmax_xent(logits.astype(np.float64), y[idx])
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became non-finite in epoch {epoch + 1}")
            grads, _ = network.backward(params, cache, d.astype(dtype))
            for arr, g, v in zip(params.arrays(), grads, velocity):
                v *= momentum
                v -= rate * g
                arr += v
            total += loss * len(idx)
            hits += int((logits.argmax(axis=1) == y[idx]).sum())
        entry = EpochLog(epoch + 1, hits / len(X), accuracy(params, Xt, yt), total / len(X))
        log.info("epoch %d loss %.4f train %.3f test %.3f", entry.epoch, entry.loss, entry.train_acc, entry.test_acc)
        history.append(entry)
    return TrainResult(params.astype(np.float64), history)

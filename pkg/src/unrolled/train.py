"""Cross-entropy loss, SGD with momentum, and the training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .blocks import Network, backward, forward
from .data import Dataset
from .numerics import Rng

__all__ = [
    "TrainConfig",
    "Metrics",
    "EpochRecord",
    "TrainingDiverged",
    "softmax_cross_entropy",
    "sgd_step",
    "train",
    "evaluate",
    "write_history_csv",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    lr_decay: float = 0.97

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float = float("nan")
    val_acc: float = float("nan")


@dataclass
class Metrics:
    loss: float
    accuracy: float
    history: list = field(default_factory=list)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if n == 0:
        raise ValueError("empty batch")
    if len(labels) != n:
        raise ValueError(f"{n} logit rows but {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    loss = float(-log_p[rows, labels].mean())
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def sgd_step(params: dict, grads: dict, velocity: dict, cfg: TrainConfig, lr: Optional[float] = None):
    """``v <- momentum*v - lr*g; theta <- theta + v``; returns new dicts."""
    lr = cfg.learning_rate if lr is None else lr
    if params.keys() != grads.keys():
        raise ValueError("parameter and gradient names differ")
    new_params, new_velocity = {}, {}
    for k, theta in params.items():
        g = grads[k]
        v = velocity.get(k)
        if v is None:
            v = np.zeros_like(theta)
        if g.shape != theta.shape or v.shape != theta.shape:
            raise ValueError(f"shape mismatch for {k}: {theta.shape}, {g.shape}, {v.shape}")
        v = cfg.momentum * v - lr * g
        new_velocity[k] = v
        new_params[k] = theta + v
    return new_params, new_velocity


def loss_and_grads(net: Network, x: np.ndarray, y: np.ndarray):
    trace = forward(net, x)
    loss, dlogits = softmax_cross_entropy(trace.logits, y)
    return loss, backward(net, trace, dlogits), trace


def canonical_order(data: Dataset) -> Dataset:
    """Sort samples by (features..., label) so results ignore storage order."""
    keys = [data.labels] + [data.inputs[:, j] for j in reversed(range(data.num_features))]
    return data.subset(np.lexsort(keys))


def evaluate(net: Network, data: Dataset, batch_size: int = 1024) -> Metrics:
    """Mean loss and accuracy; never mutates ``net``."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    total_loss, correct = 0.0, 0
    for lo in range(0, len(data), batch_size):
        x = data.inputs[lo : lo + batch_size]
        y = data.labels[lo : lo + batch_size]
        logits = forward(net, x).logits
        loss, _ = softmax_cross_entropy(logits, y)
        total_loss += loss * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
    return Metrics(total_loss / len(data), correct / len(data))


def train(
    net: Network,
    data: Dataset,
    cfg: TrainConfig,
    val: Optional[Dataset] = None,
) -> tuple[Network, Metrics]:
    """Minibatch SGD; batch order comes from ``cfg.seed`` only.

    The returned network is a new value; ``net`` is left untouched.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    if data.num_features != net.spec.input_dim:
        raise ValueError(
            f"dataset has {data.num_features} features, network expects {net.spec.input_dim}"
        )
    if data.num_classes > net.spec.output_dim:
        raise ValueError("network has fewer outputs than the dataset has classes")
    data = canonical_order(data)
    if val is not None and len(val):
        val = canonical_order(val)
    rng = Rng(cfg.seed)
    params = {k: v.copy() for k, v in net.params.items()}
    velocity: dict = {}
    history = []
    lr = cfg.learning_rate
    current = Network(net.spec, params, net.identity_blocks)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        for bi, lo in enumerate(range(0, len(data), cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            loss, grads, _ = loss_and_grads(current, data.inputs[idx], data.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, bi, loss)
            params, velocity = sgd_step(current.params, grads, velocity, cfg, lr)
            current = Network(net.spec, params, net.identity_blocks)
        lr *= cfg.lr_decay
        tm = evaluate(current, data)
        rec = EpochRecord(epoch, tm.loss, tm.accuracy)
        if val is not None and len(val):
            vm = evaluate(current, val)
            rec.val_loss, rec.val_acc = vm.loss, vm.accuracy
        if not np.isfinite(rec.train_loss):
            raise TrainingDiverged(epoch, -1, rec.train_loss)
        history.append(rec)
        log.debug("epoch %d loss %.4f acc %.4f", epoch, rec.train_loss, rec.train_acc)
    final = evaluate(current, data)
    return current, Metrics(final.loss, final.accuracy, history)


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for r in history:
            w.writerow(
                [r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.val_loss), repr(r.val_acc)]
            )

"""SGD training loop, learning-rate schedules and accuracy evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autograd as ag
from ..network import Net
from ..tensor_ops import NumericError


@dataclass
class TrainConfig:
    epochs: int = 50
    base_lr: float = 0.01
    batch_size: int = 8
    weight_decay: float = 1e-4
    momentum: float = 0.9
    schedule: str = "cosine"
    milestones: tuple = (30, 40, 45)
    seed: int = 0

    def __post_init__(self):
        if self.schedule not in ("cosine", "step"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.epochs <= 0 or self.base_lr < 0:
            raise ValueError("epochs must be positive and base_lr non-negative")


def lr_at(config: TrainConfig, epoch: float) -> float:
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if config.schedule == "cosine":
        return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))
    passed = sum(1 for m in config.milestones if m <= epoch)
    return config.base_lr * 0.1 ** passed


class SGD:
    """Momentum SGD; weight decay shrinks decayed tensors directly, outside the loss."""

    def __init__(self, store, momentum=0.9, weight_decay=1e-4):
        self.store = store
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(v.data) for name, v in store.params.items()}

    def step(self, lr: float) -> None:
        lr = self.store.dtype.type(lr)
        for name, v in self.store.params.items():
            if self.store.decay[name] and self.weight_decay:
                v.data *= 1 - lr * self.store.dtype.type(self.weight_decay)
            vel = self.velocity[name]
            vel *= self.momentum
            if v.grad is not None:
                vel += v.grad
            v.data -= lr * vel


def _first_nonfinite(trace) -> str:
    for name, v in trace:
        if not np.all(np.isfinite(v.data)):
            return name
    return "loss"


def train_step(net: Net, batch, config: TrainConfig, opt: SGD, lr: float) -> float:
    """One forward/backward/update on ``batch = (clips, labels)``; returns the loss."""
    x, y = batch
    y = np.asarray(y)
    if x.shape[1:] != tuple(net.spec.input_shape):
        raise ValueError(f"batch shape {x.shape[1:]} does not match net input {net.spec.input_shape}")
    if y.min() < 0 or y.max() >= net.spec.num_classes:
        raise ValueError("labels out of range")
    net.store.zero_grad()
    trace = []
    logits = net.forward(x, training=True, trace=trace)
    loss, _ = ag.cross_entropy(logits, y)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss; first non-finite activation at {_first_nonfinite(trace)}")
    ag.backward(loss)
    opt.step(lr)
    return value


def batches(n: int, batch_size: int, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def fit(net: Net, clips, labels, config: TrainConfig, log=None, stop_at_accuracy=None):
    """Train for ``config.epochs``; returns per-epoch mean losses.

    Batch order depends only on ``config.seed`` and the epoch index.  With
    ``stop_at_accuracy`` training ends early once eval-mode train accuracy
    reaches it.
    """
    opt = SGD(net.store, config.momentum, config.weight_decay)
    steps = math.ceil(len(labels) / config.batch_size)
    history = []
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        losses = []
        for k, idx in enumerate(batches(len(labels), config.batch_size, rng)):
            lr = lr_at(config, epoch + k / steps)
            losses.append(train_step(net, (clips[idx], labels[idx]), config, opt, lr))
        history.append(float(np.mean(losses)))
        if log is not None:
            log(epoch, history[-1])
        if stop_at_accuracy is not None and accuracy(net, clips, labels) >= stop_at_accuracy:
            break
    return history


def predict_logits(net: Net, clips, batch_size: int = 32) -> np.ndarray:
    out = []
    with ag.no_grad():
        for i in range(0, len(clips), batch_size):
            out.append(net.forward(clips[i:i + batch_size], training=False).data)
    return np.concatenate(out)


def accuracy(net: Net, clips, labels, batch_size: int = 32) -> float:
    return float((predict_logits(net, clips, batch_size).argmax(axis=1) == labels).mean())

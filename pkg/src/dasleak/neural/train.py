"""Training loop: Adam with exponential learning-rate decay, L2 on conv
kernels, early stopping on a validation carve-out, best-weights restore.

Everything is deterministic given (model seed, train seed): data shuffles,
dropout masks and initialization come from explicitly threaded RNG streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError
from . import net, ops


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr_decay: float = 0.96            # multiplicative, per epoch
    l2_penalty: float = 0.003         # conv kernels only
    patience: int = 10                # early stopping, validation loss
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l2_penalty < 0 or self.val_fraction < 0:
            raise ValueError("penalties and fractions must be >= 0")


class AdamState:
    """First/second moment accumulators for one parameter set."""

    def __init__(self, params: dict, trainable: set):
        self.m = {k: np.zeros_like(v) for k, v in params.items()
                  if k in trainable}
        self.v = {k: np.zeros_like(v) for k, v in params.items()
                  if k in trainable}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float, cfg: TrainConfig):
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        correction = np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for name, g in grads.items():
            if name not in self.m:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[name] -= (lr * correction) * m / (np.sqrt(v) + cfg.epsilon)


def _trainable_names(model: net.Model) -> set:
    return {k for k in model.params if k.split("/")[1] in net.TRAINABLE}


def evaluate_loss(model: net.Model, cubes: np.ndarray, labels: np.ndarray,
                  batch_size: int = 128) -> float:
    """Mean cross-entropy in eval mode (no L2 term)."""
    labels = np.asarray(labels, dtype=np.int64)
    total, count = 0.0, 0
    for start in range(0, len(labels), batch_size):
        sl = slice(start, start + batch_size)
        probs = net.forward(model, cubes[sl], mode="eval",
                            batch_size=batch_size)
        picked = probs[np.arange(len(labels[sl])), labels[sl]]
        total += float(-np.log(np.maximum(picked, 1e-300)).sum())
        count += len(labels[sl])
    return total / max(count, 1)


def train(model: net.Model, cubes: np.ndarray, labels: np.ndarray,
          config: TrainConfig, seed: int = 0) -> dict:
    """Train in place; returns a history dict.

    ``cubes`` is (N, bands, frames, Z); ``labels`` is (N,) in {0, 1}.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n < 1:
        raise ValueError("training requires at least one example")
    root = np.random.SeedSequence(seed)
    ss_split, ss_shuffle, ss_dropout = root.spawn(3)
    perm = np.random.Generator(np.random.PCG64(ss_split)).permutation(n)
    n_val = int(round(config.val_fraction * n))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        raise ValueError("validation carve-out leaves no training data")
    shuffle_rng = np.random.Generator(np.random.PCG64(ss_shuffle))
    dropout_rng = np.random.Generator(np.random.PCG64(ss_dropout))

    adam = AdamState(model.params, _trainable_names(model))
    history = {"train_loss": [], "val_loss": [], "learning_rate": [],
               "best_epoch": None, "stopped_epoch": None}
    best_val = np.inf
    best_params = model.copy_params()
    bad_epochs = 0

    for epoch in range(config.epochs):
        lr = config.learning_rate * (config.lr_decay ** epoch)
        order = shuffle_rng.permutation(len(train_idx))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = train_idx[order[start:start + config.batch_size]]
            try:
                loss, grads = net.loss_and_grads(
                    model, cubes[batch], labels[batch],
                    l2_penalty=config.l2_penalty, rng=dropout_rng)
            except NumericalError as exc:
                exc.epoch = epoch
                exc.batch = n_batches
                raise
            adam.step(model.params, grads, lr, config)
            epoch_loss += loss
            n_batches += 1
        if n_val > 0:
            val_loss = evaluate_loss(model, cubes[val_idx], labels[val_idx],
                                     config.batch_size)
        else:
            val_loss = epoch_loss / max(n_batches, 1)
        history["train_loss"].append(epoch_loss / max(n_batches, 1))
        history["val_loss"].append(val_loss)
        history["learning_rate"].append(lr)
        if val_loss < best_val:
            best_val = val_loss
            best_params = model.copy_params()
            history["best_epoch"] = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                history["stopped_epoch"] = epoch
                break
    if history["stopped_epoch"] is None and config.epochs > 0:
        history["stopped_epoch"] = len(history["train_loss"]) - 1
    if config.epochs > 0:
        model.load_params(best_params)
    return history
